#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nap/channel.hpp"
#include "nap/dataio.hpp"
#include "nap/kfac.hpp"
#include "nap/net.hpp"
#include "nap/prune.hpp"

namespace nap {

enum class PruneMode { fine, channel };

/// Run configuration shared by the CLI and the pipeline drivers; parsed
/// from a flat key=value file with flag overrides. Unknown keys are errors.
struct RunConfig {
  std::string arch = "lenet300";
  std::string data = "digits:60000,10000";
  std::uint64_t seed = 1;
  double lr = 0.1;
  double momentum = 0.9;
  int epochs = 10;
  int batch = 64;
  PruneMode mode = PruneMode::fine;
  double p = 0.5;
  int steps = 200;  // stats/fine-tune steps per pruning iteration
  double damping = 1e-3;
  FisherMode fisher = FisherMode::sampled;
  // Stop rules: exactly one must be set for prune runs.
  std::optional<double> target_sparsity;     // remaining fraction, e.g. 0.04
  std::optional<double> target_flops_ratio;  // dense/current, e.g. 2.0
  std::optional<int> max_iterations;
  // Fine mode: per-iteration remaining-fraction schedule; "halving" preset
  // expands to 0.5,0.25,0.125,0.0625,0.05,0.04.
  std::vector<double> ladder;
  int finetune_epochs = 2;
  double finetune_lr = 0.02;
  bool reset_stats = false;
  int threads = 1;

  void validate_common() const;
  void validate_prune() const;  // also checks the stop rule
};

RunConfig parse_config_file(const std::string& path);
/// Applies one key=value pair; throws on unknown keys or bad values.
void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value);

/// Architecture presets (lenet300, lenet5) expand to DSL strings;
/// anything containing a space is taken as an inline DSL spec.
std::string expand_arch(const std::string& name);

struct DataPair {
  io::Dataset train, test;
};

/// Dataset source strings:
///   idx:DIR            (train-images-idx3-ubyte etc. under DIR)
///   digits:N_TRAIN,N_TEST
///   gaussian:n=..,features=..,classes=..,sep=..[,ntest=..]
///   teacher:n=..,features=..,classes=..[,ntest=..]
DataPair load_data(const std::string& source, std::uint64_t seed);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalResult evaluate(const Model& model, const io::Dataset& ds, int batch);

/// Deterministic shuffled mini-batch stream; reshuffles each epoch.
class BatchStream {
 public:
  BatchStream(const io::Dataset& ds, int batch, Rng& rng);
  /// Fills `inputs` / `labels` with the next mini-batch.
  void next(Tensor& inputs, std::vector<int>& labels);
  std::size_t steps_per_epoch() const;

 private:
  const io::Dataset& ds_;
  int batch_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Plain SGD training for a number of epochs.
void train_epochs(Model& model, const io::Dataset& train, int epochs, double lr,
                  double momentum, int batch, Rng& rng, std::ostream* log);

/// One combined step of Algorithm-style statistics estimation and
/// fine-tuning: a single forward pass feeds both the SGD update (true
/// labels) and the EMA statistics (sampled or true labels per the Fisher
/// mode).
void stats_finetune_step(Model& model, ModelStats& stats, SgdState& sgd, BatchStream& stream,
                         const RunConfig& cfg, Rng& rng);

struct IterationRow {
  int iteration = 0;
  double p_used = 0.0;
  double lambda = 0.0;
  std::size_t victims = 0;
  std::size_t remaining_before = 0;
  std::size_t remaining_after = 0;
  std::uint64_t flops = 0;
  double flops_ratio = 0.0;
  double train_loss = 0.0;  // objective proxy inputs
  double psi_proxy = 0.0;   // train_loss + lambda * remaining
};

struct RunReport {
  std::vector<IterationRow> rows;
  bool stop_rule_reached = false;
  std::string stop_reason;
  EvalResult final_train, final_test;
};

/// The pruning pipeline: loop (T combined steps, prune with fraction p,
/// emit plan) until the stop rule fires or no further pruning is possible,
/// then a final fine-tune phase. Plans and the trajectory are written to
/// `log`; history is appended to `meta`.
RunReport run_prune_pipeline(Model& model, ModelStats& stats, const RunConfig& cfg,
                             const DataPair& data, io::CheckpointMeta& meta,
                             std::ostream& log);

/// Per-layer sparsity, FLOPs table, 64-bin weight-magnitude histogram and
/// (when statistics are present) magnitude-vs-importance rank correlation.
void write_model_report(std::ostream& os, const Model& model,
                        const std::optional<ModelStats>& stats, double damping);

}  // namespace nap
