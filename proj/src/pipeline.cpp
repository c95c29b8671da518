#include "nap/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "nap/oracle.hpp"

namespace nap {

namespace {

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("bad " + what + " '" + s + "'");
  }
}

long parse_long(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("bad " + what + " '" + s + "'");
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void RunConfig::validate_common() const {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("config: p must be in (0,1)");
  if (steps < 1) throw std::invalid_argument("config: steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
  if (lr <= 0.0 || finetune_lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("config: momentum must be in [0,1)");
  if (damping < 0.0) throw std::invalid_argument("config: damping must be >= 0");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  for (double f : ladder)
    if (!(f > 0.0 && f < 1.0))
      throw std::invalid_argument("config: ladder fractions must be in (0,1)");
  for (std::size_t k = 1; k < ladder.size(); ++k)
    if (ladder[k] >= ladder[k - 1])
      throw std::invalid_argument("config: ladder must be strictly decreasing");
}

void RunConfig::validate_prune() const {
  validate_common();
  const int rules = (target_sparsity ? 1 : 0) + (target_flops_ratio ? 1 : 0) +
                    (max_iterations ? 1 : 0);
  if (rules != 1)
    throw std::invalid_argument(
        "config: exactly one stop rule (target_sparsity | target_flops_ratio | "
        "max_iterations) must be set");
  if (target_sparsity && !(*target_sparsity > 0.0 && *target_sparsity < 1.0))
    throw std::invalid_argument("config: target_sparsity must be in (0,1)");
  if (target_flops_ratio && !(*target_flops_ratio > 1.0))
    throw std::invalid_argument("config: target_flops_ratio must be > 1");
  if (max_iterations && *max_iterations < 1)
    throw std::invalid_argument("config: max_iterations must be >= 1");
  if (mode == PruneMode::channel && !ladder.empty())
    throw std::invalid_argument("config: ladder applies to fine mode only");
}

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "arch") cfg.arch = value;
  else if (key == "data") cfg.data = value;
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_long(value, key));
  else if (key == "lr") cfg.lr = parse_double(value, key);
  else if (key == "momentum") cfg.momentum = parse_double(value, key);
  else if (key == "epochs") cfg.epochs = static_cast<int>(parse_long(value, key));
  else if (key == "batch") cfg.batch = static_cast<int>(parse_long(value, key));
  else if (key == "mode") {
    if (value == "fine") cfg.mode = PruneMode::fine;
    else if (value == "channel") cfg.mode = PruneMode::channel;
    else throw std::invalid_argument("config: mode must be fine|channel, got '" + value + "'");
  } else if (key == "p") cfg.p = parse_double(value, key);
  else if (key == "steps") cfg.steps = static_cast<int>(parse_long(value, key));
  else if (key == "damping") cfg.damping = parse_double(value, key);
  else if (key == "fisher") {
    if (value == "sampled") cfg.fisher = FisherMode::sampled;
    else if (value == "empirical") cfg.fisher = FisherMode::empirical;
    else
      throw std::invalid_argument("config: fisher must be sampled|empirical, got '" + value +
                                  "'");
  } else if (key == "target_sparsity") cfg.target_sparsity = parse_double(value, key);
  else if (key == "target_flops_ratio") cfg.target_flops_ratio = parse_double(value, key);
  else if (key == "max_iterations") cfg.max_iterations = static_cast<int>(parse_long(value, key));
  else if (key == "ladder") {
    cfg.ladder.clear();
    if (value == "halving") {
      cfg.ladder = {0.5, 0.25, 0.125, 0.0625, 0.05, 0.04};
    } else {
      for (const std::string& tok : split(value, ','))
        cfg.ladder.push_back(parse_double(tok, "ladder entry"));
    }
  } else if (key == "finetune_epochs") cfg.finetune_epochs = static_cast<int>(parse_long(value, key));
  else if (key == "finetune_lr") cfg.finetune_lr = parse_double(value, key);
  else if (key == "reset_stats") {
    if (value == "true" || value == "1") cfg.reset_stats = true;
    else if (value == "false" || value == "0") cfg.reset_stats = false;
    else throw std::invalid_argument("config: reset_stats must be true|false");
  } else if (key == "threads") cfg.threads = static_cast<int>(parse_long(value, key));
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    auto strip = [](std::string s) {
      const auto b2 = s.find_first_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      const auto e2 = s.find_last_not_of(" \t");
      return s.substr(b2, e2 - b2 + 1);
    };
    try {
      apply_config_kv(cfg, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    } catch (const std::exception& ex) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return cfg;
}

std::string expand_arch(const std::string& name) {
  if (name == "lenet300")
    return "input:784 dense:300 relu dense:100 relu dense:10";
  if (name == "lenet5")
    return "input:1x28x28 conv:12x3x3:s2:p1 relu conv:24x3x3:s2:p1 relu flatten "
           "dense:96 relu dense:10";
  if (name.find(' ') != std::string::npos) return name;
  throw std::invalid_argument("unknown architecture '" + name +
                              "' (presets: lenet300, lenet5; or an inline spec)");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed ^ (salt * 0x9E3779B97F4A7C15ull);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  return x;
}

std::string idx_path(const std::string& dir, const char* name) {
  namespace fs = std::filesystem;
  const fs::path plain = fs::path(dir) / name;
  if (fs::exists(plain)) return plain.string();
  const fs::path gz_alt = fs::path(dir) / (std::string(name) + ".idx");
  if (fs::exists(gz_alt)) return gz_alt.string();
  return plain.string();  // let the loader produce the error
}

}  // namespace

DataPair load_data(const std::string& source, std::uint64_t seed) {
  const auto colon = source.find(':');
  const std::string kind = colon == std::string::npos ? source : source.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : source.substr(colon + 1);

  if (kind == "idx") {
    if (rest.empty()) throw std::invalid_argument("data: idx:DIR needs a directory");
    DataPair d;
    d.train = io::load_idx(idx_path(rest, "train-images-idx3-ubyte"),
                           idx_path(rest, "train-labels-idx1-ubyte"));
    d.train.split = "train";
    d.test = io::load_idx(idx_path(rest, "t10k-images-idx3-ubyte"),
                          idx_path(rest, "t10k-labels-idx1-ubyte"));
    d.test.split = "test";
    const int classes = std::max(d.train.num_classes, d.test.num_classes);
    d.train.num_classes = classes;
    d.test.num_classes = classes;
    return d;
  }
  if (kind == "digits") {
    std::size_t ntrain = 60000, ntest = 10000;
    if (!rest.empty()) {
      const auto parts = split(rest, ',');
      if (parts.size() != 2) throw std::invalid_argument("data: digits:N_TRAIN,N_TEST");
      ntrain = static_cast<std::size_t>(parse_long(parts[0], "digits train count"));
      ntest = static_cast<std::size_t>(parse_long(parts[1], "digits test count"));
    }
    DataPair d;
    d.train = io::digits_dataset(mix_seed(seed, 101), ntrain, "train");
    d.test = io::digits_dataset(mix_seed(seed, 202), ntest, "test");
    return d;
  }
  if (kind == "gaussian" || kind == "teacher") {
    io::SynthSpec spec;
    spec.mode = kind == "gaussian" ? io::SynthMode::GaussianClusters : io::SynthMode::TeacherNet;
    std::size_t ntest = 0;
    for (const std::string& tok : split(rest, ',')) {
      if (tok.empty()) continue;
      const auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("data: expected key=value in '" + tok + "'");
      const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      if (k == "n") spec.n = static_cast<std::size_t>(parse_long(v, k));
      else if (k == "features") spec.features = static_cast<int>(parse_long(v, k));
      else if (k == "classes") spec.classes = static_cast<int>(parse_long(v, k));
      else if (k == "sep") spec.separation = parse_double(v, k);
      else if (k == "ntest") ntest = static_cast<std::size_t>(parse_long(v, k));
      else throw std::invalid_argument("data: unknown option '" + k + "'");
    }
    if (ntest == 0) ntest = std::max<std::size_t>(spec.n / 5, 1);
    DataPair d;
    if (kind == "gaussian") {
      io::SynthSpec test_spec = spec;
      test_spec.n = ntest;
      d.train = synth_dataset(mix_seed(seed, 303), spec);
      d.test = synth_dataset(mix_seed(seed, 404), test_spec);
    } else {
      // Teacher mode: train and test must be labeled by the same frozen
      // teacher, and synth_dataset derives the teacher from the seed before
      // drawing inputs. Generate one pool and split it.
      io::SynthSpec both = spec;
      both.n = spec.n + ntest;
      const io::Dataset all = synth_dataset(mix_seed(seed, 303), both);
      auto slice = [&](std::size_t begin, std::size_t count) {
        io::Dataset out;
        out.num_classes = all.num_classes;
        out.geometry = all.geometry;
        out.images = Tensor::matrix(count, all.images.cols());
        out.labels.assign(all.labels.begin() + begin, all.labels.begin() + begin + count);
        for (std::size_t r = 0; r < count; ++r)
          std::copy(all.images.row(begin + r), all.images.row(begin + r) + all.images.cols(),
                    out.images.row(r));
        return out;
      };
      d.train = slice(0, spec.n);
      d.test = slice(spec.n, ntest);
    }
    d.train.split = "train";
    d.test.split = "test";
    return d;
  }
  throw std::invalid_argument("data: unknown source kind '" + kind + "'");
}

BatchStream::BatchStream(const io::Dataset& ds, int batch, Rng& rng)
    : ds_(ds), batch_(batch), rng_(rng) {
  order_.resize(ds.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  rng_.shuffle(order_);
}

std::size_t BatchStream::steps_per_epoch() const {
  return std::max<std::size_t>(1, ds_.size() / static_cast<std::size_t>(batch_));
}

void BatchStream::next(Tensor& inputs, std::vector<int>& labels) {
  const std::size_t width = ds_.images.cols();
  const std::size_t b = std::min<std::size_t>(batch_, ds_.size());
  if (inputs.rank() != 2 || inputs.rows() != b || inputs.cols() != width)
    inputs = Tensor::matrix(b, width);
  labels.resize(b);
  for (std::size_t k = 0; k < b; ++k) {
    if (cursor_ >= order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    const std::size_t idx = order_[cursor_++];
    std::copy(ds_.images.row(idx), ds_.images.row(idx) + width, inputs.row(k));
    labels[k] = ds_.labels[idx];
  }
}

EvalResult evaluate(const Model& model, const io::Dataset& ds, int batch) {
  EvalResult res;
  std::size_t done = 0, correct = 0;
  double loss_sum = 0.0;
  const std::size_t width = ds.images.cols();
  while (done < ds.size()) {
    const std::size_t b = std::min<std::size_t>(batch, ds.size() - done);
    Tensor inputs = Tensor::matrix(b, width);
    std::vector<int> labels(b);
    for (std::size_t k = 0; k < b; ++k) {
      std::copy(ds.images.row(done + k), ds.images.row(done + k) + width, inputs.row(k));
      labels[k] = ds.labels[done + k];
    }
    const ForwardContext ctx = forward(model, inputs);
    loss_sum += mean_nll(ctx.logits(), labels) * static_cast<double>(b);
    const std::vector<int> pred = argmax_rows(ctx.logits());
    for (std::size_t k = 0; k < b; ++k) correct += pred[k] == labels[k] ? 1 : 0;
    done += b;
  }
  res.loss = loss_sum / static_cast<double>(ds.size());
  res.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return res;
}

void train_epochs(Model& model, const io::Dataset& train, int epochs, double lr,
                  double momentum, int batch, Rng& rng, std::ostream* log) {
  BatchStream stream(train, batch, rng);
  SgdState sgd;
  Tensor inputs;
  std::vector<int> labels;
  for (int e = 0; e < epochs; ++e) {
    double loss_sum = 0.0;
    const std::size_t steps = stream.steps_per_epoch();
    for (std::size_t s = 0; s < steps; ++s) {
      stream.next(inputs, labels);
      const ForwardContext ctx = forward(model, inputs);
      BackwardResult bw = backward(model, ctx, labels, /*want_capture=*/false);
      sgd_step(model, bw.grads, sgd, lr, momentum);
      loss_sum += bw.mean_loss;
    }
    if (log)
      *log << "epoch " << (e + 1) << "/" << epochs << "  train_loss "
           << loss_sum / static_cast<double>(steps) << "\n";
  }
}

void stats_finetune_step(Model& model, ModelStats& stats, SgdState& sgd, BatchStream& stream,
                         const RunConfig& cfg, Rng& rng) {
  Tensor inputs;
  std::vector<int> labels;
  stream.next(inputs, labels);
  const ForwardContext ctx = forward(model, inputs);
  if (cfg.fisher == FisherMode::sampled) {
    BackwardResult train_bw = backward(model, ctx, labels, /*want_capture=*/false);
    const std::vector<int> sampled = sample_model_labels(ctx.logits(), rng);
    BackwardResult fisher_bw = backward(model, ctx, sampled, /*want_capture=*/true);
    update_stats(stats, model, fisher_bw.capture);
    sgd_step(model, train_bw.grads, sgd, cfg.lr, cfg.momentum);
  } else {
    BackwardResult bw = backward(model, ctx, labels, /*want_capture=*/true);
    update_stats(stats, model, bw.capture);
    sgd_step(model, bw.grads, sgd, cfg.lr, cfg.momentum);
  }
}

namespace {

double remaining_fraction(const Model& model) {
  return static_cast<double>(model.remaining_count()) /
         static_cast<double>(model.param_count());
}

}  // namespace

RunReport run_prune_pipeline(Model& model, ModelStats& stats, const RunConfig& cfg,
                             const DataPair& data, io::CheckpointMeta& meta,
                             std::ostream& log) {
  cfg.validate_prune();
  RunReport report;
  Rng rng(mix_seed(cfg.seed, 777));
  BatchStream stream(data.train, cfg.batch, rng);
  SgdState sgd;

  const std::size_t total_params = model.param_count();
  // Fixed probe batch for the objective proxy (reported, never used to stop).
  io::Dataset probe;
  {
    const std::size_t n = std::min<std::size_t>(data.train.size(), 1024);
    probe.num_classes = data.train.num_classes;
    probe.geometry = data.train.geometry;
    probe.images = Tensor::matrix(n, data.train.images.cols());
    probe.labels.assign(data.train.labels.begin(), data.train.labels.begin() + n);
    for (std::size_t r = 0; r < n; ++r)
      std::copy(data.train.images.row(r), data.train.images.row(r) + data.train.images.cols(),
                probe.images.row(r));
  }

  int iteration = 0;
  while (true) {
    // Stop-rule check before the next (possibly expensive) iteration.
    const FlopsReport fr = flops_report(model);
    if (cfg.target_sparsity && remaining_fraction(model) <= *cfg.target_sparsity) {
      report.stop_rule_reached = true;
      report.stop_reason = "target sparsity reached";
      break;
    }
    if (cfg.target_flops_ratio && fr.flops_ratio() >= *cfg.target_flops_ratio) {
      report.stop_rule_reached = true;
      report.stop_reason = "target FLOPs ratio reached";
      break;
    }
    if (cfg.max_iterations && iteration >= *cfg.max_iterations) {
      report.stop_rule_reached = true;
      report.stop_reason = "iteration budget reached";
      break;
    }
    if (cfg.mode == PruneMode::fine && !cfg.ladder.empty() &&
        iteration >= static_cast<int>(cfg.ladder.size())) {
      report.stop_reason = "ladder exhausted before the stop rule";
      break;
    }

    ++iteration;
    if (cfg.reset_stats) stats.reset();
    for (int s = 0; s < cfg.steps; ++s) {
      stats_finetune_step(model, stats, sgd, stream, cfg, rng);
    }

    IterationRow row;
    row.iteration = iteration;
    row.remaining_before = model.remaining_count();

    if (cfg.mode == PruneMode::fine) {
      double p = cfg.p;
      if (!cfg.ladder.empty()) {
        const double target = cfg.ladder[iteration - 1] * static_cast<double>(total_params);
        const double now = static_cast<double>(row.remaining_before);
        p = std::clamp(1.0 - target / now, 1e-9, 1.0 - 1e-9);
      }
      PrunePlan plan = prune_step(model, stats, p, cfg.damping);
      row.p_used = p;
      row.lambda = plan.lambda;
      row.victims = plan.victims.size();
      row.remaining_after = plan.remaining_after;
      meta.lambda_history.push_back(plan.lambda);
      log << "# iteration " << iteration << " plan (layer\tindex\tweight\tscore)\n";
      write_plan(log, plan);
    } else {
      ChannelPlan plan = channel_prune_step(model, stats, cfg.p, cfg.damping);
      row.p_used = cfg.p;
      row.victims = plan.pruned.size();
      row.remaining_after = model.remaining_count();
      row.lambda = plan.pruned.empty() ? 0.0 : plan.pruned.back().score;
      meta.lambda_history.push_back(row.lambda);
      log << "# iteration " << iteration << " channel plan\n";
      write_channel_plan(log, plan);
      if (plan.pruned.empty()) {
        report.stop_reason = "no prunable channel group left (per-layer floor)";
        report.rows.push_back(row);
        break;
      }
    }

    const FlopsReport after = flops_report(model);
    row.flops = after.total_flops;
    row.flops_ratio = after.flops_ratio();
    row.train_loss = evaluate(model, probe, cfg.batch).loss;
    row.psi_proxy = row.train_loss + row.lambda * static_cast<double>(row.remaining_after);
    meta.flops_history.push_back(row.flops);
    meta.train_steps += static_cast<std::uint64_t>(cfg.steps);
    report.rows.push_back(row);

    log << "iteration\t" << row.iteration << "\tp\t" << row.p_used << "\tlambda\t" << row.lambda
        << "\tvictims\t" << row.victims << "\tremaining\t" << row.remaining_after << "/"
        << total_params << "\tflops\t" << row.flops << "\tflops_ratio\t" << row.flops_ratio
        << "\ttrain_loss\t" << row.train_loss << "\tpsi_proxy\t" << row.psi_proxy << "\n";
  }

  if (cfg.finetune_epochs > 0) {
    log << "# final fine-tune: " << cfg.finetune_epochs << " epochs at lr " << cfg.finetune_lr
        << "\n";
    Rng ft_rng(mix_seed(cfg.seed, 888));
    train_epochs(model, data.train, cfg.finetune_epochs, cfg.finetune_lr, cfg.momentum,
                 cfg.batch, ft_rng, &log);
  }
  report.final_train = evaluate(model, data.train, cfg.batch);
  report.final_test = evaluate(model, data.test, cfg.batch);

  log << "# final: remaining " << model.remaining_count() << "/" << total_params
      << " (fraction " << remaining_fraction(model) << "), train_acc "
      << report.final_train.accuracy << ", test_acc " << report.final_test.accuracy << "\n";
  log << "# per-layer remaining fractions:\n";
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerState& l = model.layers[li];
    if (!l.has_params()) continue;
    log << "layer\t" << li << "\t" << layer_kind_name(l.kind) << "\t" << l.remaining_count()
        << "/" << l.param_count() << "\t"
        << static_cast<double>(l.remaining_count()) / static_cast<double>(l.param_count())
        << "\n";
  }
  return report;
}

void write_model_report(std::ostream& os, const Model& model,
                        const std::optional<ModelStats>& stats, double damping) {
  os << "== sparsity ==\n";
  os << "layer\tkind\tparams\tremaining\tfraction\n";
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerState& l = model.layers[li];
    if (!l.has_params()) continue;
    os << li << '\t' << layer_kind_name(l.kind) << '\t' << l.param_count() << '\t'
       << l.remaining_count() << '\t'
       << static_cast<double>(l.remaining_count()) / static_cast<double>(l.param_count())
       << '\n';
  }
  os << "total\t-\t" << model.param_count() << '\t' << model.remaining_count() << '\t'
     << static_cast<double>(model.remaining_count()) /
            static_cast<double>(model.param_count())
     << "\n\n";

  os << "== flops ==\n";
  write_flops_report(os, flops_report(model));
  os << '\n';

  os << "== weight magnitude histogram (remaining weights, 64 bins) ==\n";
  double max_abs = 0.0;
  for (const LayerState& l : model.layers) {
    if (!l.has_params()) continue;
    for (std::size_t k = 0; k < l.weights.size(); ++k)
      if (l.mask[k] != 0.0) max_abs = std::max(max_abs, std::abs(l.weights[k]));
  }
  constexpr int kBins = 64;
  std::vector<std::size_t> bins(kBins, 0);
  if (max_abs > 0.0) {
    for (const LayerState& l : model.layers) {
      if (!l.has_params()) continue;
      for (std::size_t k = 0; k < l.weights.size(); ++k) {
        if (l.mask[k] == 0.0) continue;
        int b = static_cast<int>(std::abs(l.weights[k]) / max_abs * kBins);
        bins[std::min(b, kBins - 1)]++;
      }
    }
  }
  const std::size_t peak = std::max<std::size_t>(1, *std::max_element(bins.begin(), bins.end()));
  for (int b = 0; b < kBins; ++b) {
    const double lo = max_abs * b / kBins, hi = max_abs * (b + 1) / kBins;
    os << std::setw(10) << std::setprecision(4) << std::fixed << lo << "  " << std::setw(10)
       << hi << "  " << std::setw(8) << bins[b] << "  ";
    const int width = static_cast<int>(60.0 * static_cast<double>(bins[b]) /
                                       static_cast<double>(peak));
    for (int k = 0; k < width; ++k) os << '#';
    os << '\n';
  }
  os.unsetf(std::ios::fixed);
  os << std::setprecision(6) << '\n';

  os << "== magnitude vs importance rank correlation ==\n";
  if (!stats) {
    os << "unavailable: checkpoint carries no statistics\n";
    return;
  }
  bool any = false;
  std::vector<double> all_mag, all_imp;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerState& l = model.layers[li];
    if (!l.has_params() || !stats->per_layer[li] || stats->per_layer[li]->steps_seen == 0)
      continue;
    const KroneckerBlockInverse block =
        block_inverse(*stats->per_layer[li], damping, "layer " + std::to_string(li));
    LayerImportance imp = importance(l, block, static_cast<int>(li));
    normalize_layer(imp);
    std::vector<double> mag(imp.index.size());
    for (std::size_t k = 0; k < imp.index.size(); ++k)
      mag[k] = std::abs(l.weights[imp.index[k]]);
    all_mag.insert(all_mag.end(), mag.begin(), mag.end());
    all_imp.insert(all_imp.end(), imp.normalized.begin(), imp.normalized.end());
    const auto rho = oracle::rank_agreement(mag, imp.normalized);
    os << "layer\t" << li << "\tspearman\t";
    if (rho) os << *rho;
    else os << "undefined (constant scores)";
    os << "\traw_importance_sum\t" << imp.raw_sum << '\n';
    any = true;
  }
  if (any && all_mag.size() >= 2) {
    const auto rho = oracle::rank_agreement(all_mag, all_imp);
    os << "all\t-\tspearman\t";
    if (rho) os << *rho;
    else os << "undefined (constant scores)";
    os << '\n';
  }
  if (!any) os << "unavailable: statistics present but empty\n";
}

}  // namespace nap
