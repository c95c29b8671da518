// Command-line front end: pre-train, iteratively prune (fine-grained or
// channel-wise), fine-tune, report, and run the self-verification suite.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/IO error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "nap/channel.hpp"
#include "nap/dataio.hpp"
#include "nap/kfac.hpp"
#include "nap/linalg.hpp"
#include "nap/net.hpp"
#include "nap/oracle.hpp"
#include "nap/pipeline.hpp"
#include "nap/prune.hpp"

namespace {

using namespace nap;

constexpr const char* kConfigKeys[] = {
    "arch",   "data",    "seed",           "lr",
    "momentum", "epochs", "batch",          "mode",
    "p",      "steps",   "damping",        "fisher",
    "target_sparsity", "target_flops_ratio", "max_iterations", "ladder",
    "finetune_epochs", "finetune_lr", "reset_stats", "threads"};

struct CommonArgs {
  std::string config_path;
  std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key=value config file");
  for (const char* key : kConfigKeys) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    cmd->add_option_function<std::string>(
        flag,
        [&args, key = std::string(key)](const std::string& v) { args.overrides[key] = v; },
        "override config key " + std::string(key));
  }
}

RunConfig build_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = parse_config_file(args.config_path);
  for (const auto& [k, v] : args.overrides) apply_config_kv(cfg, k, v);
  if (cfg.threads > 1) {
    std::cerr << "note: kernels are single-threaded; --threads " << cfg.threads
              << " runs with 1 thread\n";
    cfg.threads = 1;
  }
  return cfg;
}

int cmd_train(const CommonArgs& args, const std::string& out_path) {
  RunConfig cfg = build_config(args);
  cfg.validate_common();
  DataPair data = load_data(cfg.data, cfg.seed);

  Model model = parse_arch(expand_arch(cfg.arch));
  Rng rng(cfg.seed);
  model.init_weights(rng);

  std::cout << "training " << cfg.arch << " on " << cfg.data << " for " << cfg.epochs
            << " epochs (seed " << cfg.seed << ")\n";
  train_epochs(model, data.train, cfg.epochs, cfg.lr, cfg.momentum, cfg.batch, rng,
               &std::cout);

  const EvalResult train_eval = evaluate(model, data.train, cfg.batch);
  const EvalResult test_eval = evaluate(model, data.test, cfg.batch);
  std::cout << "final train_acc " << train_eval.accuracy << "  train_loss " << train_eval.loss
            << "\nfinal test_acc " << test_eval.accuracy << "  test_loss " << test_eval.loss
            << "\n";

  io::Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.meta.train_steps =
      static_cast<std::uint64_t>(cfg.epochs) *
      std::max<std::size_t>(1, data.train.size() / static_cast<std::size_t>(cfg.batch));
  io::save_checkpoint(out_path, ckpt);
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_prune(const CommonArgs& args, const std::string& in_path, const std::string& out_path) {
  RunConfig cfg = build_config(args);
  cfg.validate_prune();
  io::Checkpoint ckpt = io::load_checkpoint(in_path);
  DataPair data = load_data(cfg.data, cfg.seed);

  ModelStats stats = ckpt.stats ? std::move(*ckpt.stats)
                                : ModelStats::for_model(ckpt.model, 0.95);
  RunReport report = run_prune_pipeline(ckpt.model, stats, cfg, data, ckpt.meta, std::cout);

  ckpt.stats = std::move(stats);
  io::save_checkpoint(out_path, ckpt);
  std::cout << "pruned checkpoint written to " << out_path << "\n";
  if (!report.stop_rule_reached)
    std::cout << "note: stop rule not reached (" << report.stop_reason << ")\n";
  return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& in_path,
                 const std::string& out_path) {
  RunConfig cfg = build_config(args);
  cfg.validate_common();
  io::Checkpoint ckpt = io::load_checkpoint(in_path);
  DataPair data = load_data(cfg.data, cfg.seed);

  Rng rng(cfg.seed ^ 0xF1E2D3C4ull);
  train_epochs(ckpt.model, data.train, cfg.epochs, cfg.finetune_lr, cfg.momentum, cfg.batch,
               rng, &std::cout);
  const EvalResult test_eval = evaluate(ckpt.model, data.test, cfg.batch);
  std::cout << "final test_acc " << test_eval.accuracy << "  test_loss " << test_eval.loss
            << "\n";
  ckpt.meta.train_steps += static_cast<std::uint64_t>(cfg.epochs) *
                           std::max<std::size_t>(1, data.train.size() / cfg.batch);
  io::save_checkpoint(out_path, ckpt);
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& in_path) {
  RunConfig cfg = build_config(args);
  io::Checkpoint ckpt = io::load_checkpoint(in_path);
  write_model_report(std::cout, ckpt.model, ckpt.stats, cfg.damping);
  return 0;
}

// --- self-verification battery ---------------------------------------------

struct Verifier {
  int failures = 0;
  void check(const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "ok   " : "FAIL ") << name;
    if (!ok && !detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << "\n";
    failures += ok ? 0 : 1;
  }
};

Tensor random_spd(std::size_t n, Rng& rng) {
  Tensor b = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
  Tensor m = Tensor::matrix(n, n);
  linalg::matmul_at_b(b.data(), b.data(), m.data(), n, n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) += 0.5 + rng.uniform();
  return m;
}

int cmd_oracle(std::uint64_t seed) {
  Rng rng(seed);
  Verifier v;

  {  // Kronecker identities on dense reconstructions
    const Tensor a = random_spd(5, rng), b = random_spd(4, rng);
    const Tensor lhs = linalg::kron(linalg::spd_inverse(a), linalg::spd_inverse(b));
    const Tensor rhs = linalg::spd_inverse(linalg::kron(a, b));
    v.check("kron inverse identity", linalg::max_abs_diff(lhs, rhs) < 1e-8);
    Tensor c = Tensor::matrix(5, 5), d = Tensor::matrix(4, 4);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = rng.normal();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = rng.normal();
    const Tensor mixed = linalg::matmul(linalg::kron(a, b), linalg::kron(c, d));
    const Tensor direct = linalg::kron(linalg::matmul(a, c), linalg::matmul(b, d));
    v.check("kron mixed-product identity", linalg::max_abs_diff(mixed, direct) < 1e-8);
  }

  {  // closed-form removal vs direct constrained minimization
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 3 + rng.index(10);
      const Tensor h = random_spd(n, rng);
      std::vector<double> w(n);
      for (double& x : w) x = rng.normal();
      const std::size_t q = rng.index(n);
      const auto sol = oracle::obs_quadratic(h, w, q);
      // eliminate: minimize over the rest with delta_q fixed at -w_q
      Tensor hrr = Tensor::matrix(n - 1, n - 1), hrq = Tensor::matrix(n - 1, 1);
      std::size_t ri = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i == q) continue;
        std::size_t ci = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == q) continue;
          hrr.at(ri, ci++) = h.at(i, j);
        }
        hrq.at(ri++, 0) = h.at(i, q);
      }
      const Tensor rest = linalg::spd_solve(hrr, hrq);
      std::vector<double> delta(n);
      delta[q] = -w[q];
      ri = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (i != q) delta[i] = rest.at(ri++, 0) * w[q];
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) loss += 0.5 * delta[i] * h.at(i, j) * delta[j];
      worst = std::max(worst, std::abs(loss - sol.loss_increase));
      for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(delta[i] - sol.delta_w[i]));
    }
    v.check("closed-form removal vs constrained solve", worst < 1e-8,
            "max deviation " + std::to_string(worst));
  }

  {  // finite-difference gradient check on a small dense net
    Model m = parse_arch("input:5 dense:7 relu dense:3");
    m.init_weights(rng);
    Tensor x = Tensor::matrix(6, 5);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
    std::vector<int> y(6);
    for (int& t : y) t = static_cast<int>(rng.index(3));
    const auto map = oracle::param_map(m);
    const ForwardContext ctx = forward(m, x);
    const BackwardResult bw = backward(m, ctx, y, false);
    double worst = 0.0;
    Model work = m;
    const double eps = 1e-5;
    for (const auto& ref : map) {
      double& wv = work.layers[ref.layer].weights.at(ref.i, ref.j);
      const double w0 = wv;
      wv = w0 + eps;
      const double lp = mean_nll(forward(work, x).logits(), y);
      wv = w0 - eps;
      const double lm = mean_nll(forward(work, x).logits(), y);
      wv = w0;
      const double fd = (lp - lm) / (2 * eps);
      const double an = bw.grads.per_layer[ref.layer].at(ref.i, ref.j);
      worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(fd)));
    }
    v.check("gradients vs central differences", worst < 1e-6,
            "max rel err " + std::to_string(worst));
  }

  {  // factored importances vs dense closed form on the reconstructed block
    Model m = parse_arch("input:4 dense:8 relu dense:3");
    m.init_weights(rng);
    DataPair data = load_data("gaussian:n=512,features=4,classes=3,sep=3", seed);
    train_epochs(m, data.train, 3, 0.1, 0.9, 32, rng, nullptr);
    ModelStats stats = ModelStats::for_model(m);
    BatchStream stream(data.train, 32, rng);
    RunConfig cfg;
    cfg.fisher = FisherMode::sampled;
    SgdState sgd;
    cfg.lr = 0.01;
    for (int s = 0; s < 40; ++s) stats_finetune_step(m, stats, sgd, stream, cfg, rng);
    double worst = 0.0;
    const double damping = 1e-3;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      if (!m.layers[li].has_params()) continue;
      const auto block = block_inverse(*stats.per_layer[li], damping);
      const LayerImportance imp = importance(m.layers[li], block, static_cast<int>(li));
      const auto dense = oracle::kfac_reconstructed_block(m.layers[li], *stats.per_layer[li],
                                                          damping, static_cast<int>(li));
      const auto w = oracle::flat_weights(m, dense.params);
      for (std::size_t q = 0; q < dense.params.size(); ++q) {
        const auto sol = oracle::obs_quadratic(dense.matrix, w, q);
        const std::size_t flat =
            dense.params[q].i * m.layers[li].weight_cols() + dense.params[q].j;
        const auto it = std::lower_bound(imp.index.begin(), imp.index.end(), flat);
        const double raw = imp.raw[static_cast<std::size_t>(it - imp.index.begin())];
        worst = std::max(worst, std::abs(raw - sol.loss_increase));
      }
    }
    v.check("factored importance vs dense block", worst < 1e-8,
            "max deviation " + std::to_string(worst));
  }

  {  // IDX and checkpoint round trips
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "nap_verify";
    fs::create_directories(dir);
    const std::string img = (dir / "img").string(), lab = (dir / "lab").string();
    io::write_digits_idx(img, lab, seed, 64);
    const io::Dataset d = io::load_idx(img, lab);
    v.check("idx round trip", d.size() == 64 && d.geometry.h == 28 && d.images.all_finite());
    bool badmagic = false;
    try {
      (void)io::load_idx(lab, lab);  // labels file offered as images
    } catch (const io::IdxError& e) {
      badmagic = e.kind == io::IdxError::Kind::BadMagic;
    }
    v.check("idx bad magic rejected", badmagic);

    Model m = parse_arch("input:6 dense:5 relu dense:3");
    m.init_weights(rng);
    m.layers[0].mask[3] = 0.0;
    m.layers[0].reproject();
    io::Checkpoint c;
    c.model = m;
    const std::string ck = (dir / "model.napc").string();
    io::save_checkpoint(ck, c);
    const io::Checkpoint back = io::load_checkpoint(ck);
    bool same = true;
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      if (!m.layers[li].has_params()) continue;
      same = same && back.model.layers[li].weights.vec() == m.layers[li].weights.vec();
      same = same && back.model.layers[li].mask.vec() == m.layers[li].mask.vec();
    }
    v.check("checkpoint round trip bit-exact", same);
  }

  std::cout << (v.failures == 0 ? "verification passed" : "verification FAILED") << "\n";
  return v.failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OBS-style network pruning with Kronecker-factored curvature"};
  app.require_subcommand(1);

  CommonArgs train_args, prune_args, finetune_args, report_args;
  std::string train_out = "model.napc";
  std::string prune_in, prune_out = "pruned.napc";
  std::string finetune_in, finetune_out = "finetuned.napc";
  std::string report_in;
  std::uint64_t oracle_seed = 7;

  CLI::App* train = app.add_subcommand("train", "pre-train a network and write a checkpoint");
  add_config_options(train, train_args);
  train->add_option("--out", train_out, "output checkpoint path");

  CLI::App* prune = app.add_subcommand("prune", "iteratively prune a checkpoint");
  add_config_options(prune, prune_args);
  prune->add_option("--in", prune_in, "input checkpoint")->required();
  prune->add_option("--out", prune_out, "output checkpoint path");

  CLI::App* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint");
  add_config_options(finetune, finetune_args);
  finetune->add_option("--in", finetune_in, "input checkpoint")->required();
  finetune->add_option("--out", finetune_out, "output checkpoint path");

  CLI::App* report = app.add_subcommand("report", "sparsity/FLOPs/importance report");
  add_config_options(report, report_args);
  report->add_option("--in", report_in, "input checkpoint")->required();

  CLI::App* oracle_cmd = app.add_subcommand("oracle", "run the self-verification suite");
  oracle_cmd->add_option("--seed", oracle_seed, "verification seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_args, train_out);
    if (prune->parsed()) return cmd_prune(prune_args, prune_in, prune_out);
    if (finetune->parsed()) return cmd_finetune(finetune_args, finetune_in, finetune_out);
    if (report->parsed()) return cmd_report(report_args, report_in);
    if (oracle_cmd->parsed()) return cmd_oracle(oracle_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
