#pragma once

#include <iosfwd>
#include <utility>
#include <vector>

#include "nap/kfac.hpp"
#include "nap/net.hpp"
#include "nap/prune.hpp"

namespace nap {

/// FLOPs accounting with multiply-accumulates counted as 2 FLOPs and the
/// bias fold included. Output channels whose mask row is all zero, and
/// input channels whose mask columns are all zero, are excluded, so the
/// totals match a from-scratch rebuild of the shrunken architecture.
struct FlopsReport {
  struct Entry {
    int layer;
    LayerKind kind;
    std::uint64_t flops;         // with current masks
    std::uint64_t flops_dense;   // all-ones masks
    std::size_t params_total;
    std::size_t params_remaining;
    int out_channels_total;
    int out_channels_alive;
  };
  std::vector<Entry> per_layer;
  std::uint64_t total_flops = 0;
  std::uint64_t total_flops_dense = 0;
  std::size_t total_params = 0;
  std::size_t total_params_remaining = 0;
  double flops_ratio() const {  // dense / current
    return total_flops ? static_cast<double>(total_flops_dense) / total_flops : 0.0;
  }
};

FlopsReport flops_report(const Model& model);
void write_flops_report(std::ostream& os, const FlopsReport& r);

/// A unit of structured pruning: one output channel, or the set of channels
/// tied together by Add (residual) edges that must be removed as one.
struct ChannelGroup {
  std::vector<std::pair<int, int>> members;  // (layer, output channel), unique
  double agg_loss = 0.0;                     // sum of member channels' normalized importance
  std::uint64_t flops_delta = 0;             // FLOPs removed if the group is pruned
  double score = 0.0;                        // agg_loss / flops_delta
};

/// Sum of the normalized importances over one output channel's weight row.
double channel_importance(const ImportanceMap& imap, const Model& model, int layer,
                          int channel);

/// Column spans of downstream weight matrices reading a given channel.
struct ConsumerSpan {
  int layer;
  std::size_t col_begin;
  std::size_t col_end;  // exclusive; never includes the bias column
};
std::vector<ConsumerSpan> channel_consumers(const Model& model, int layer, int channel);

/// Builds scored channel groups from the model topology and an importance
/// map. Channels of the output (classifier) layer are not candidates; Add
/// layers merge the channels of their operand producers into one group per
/// shared index. flops_delta is obtained by recounting FLOPs after a
/// hypothetical removal of the group.
std::vector<ChannelGroup> make_groups(const Model& model, const ImportanceMap& imap);

struct ChannelPlan {
  std::vector<ChannelGroup> pruned;   // in pruning order
  std::vector<ChannelGroup> skipped;  // would have emptied a layer
  std::size_t groups_before = 0;
  std::size_t raw_channels_removed = 0;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
};

/// One structured pruning step: ranks groups by agg_loss/flops_delta,
/// removes the lowest-scoring ones (at least one per step while candidates
/// remain), zeroing member rows and all consumer columns. No compensating
/// update is applied; fine-tuning recovers. Every layer keeps at least one
/// alive channel.
ChannelPlan channel_prune_step(Model& model, const ModelStats& stats, double p,
                               double damping);

void write_channel_plan(std::ostream& os, const ChannelPlan& plan);

}  // namespace nap
