#include "nap/channel.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace nap {

namespace {

bool row_alive(const LayerState& l, std::size_t r) {
  const double* m = l.mask.row(r);
  for (std::size_t c = 0; c < l.weight_cols(); ++c)
    if (m[c] != 0.0) return true;
  return false;
}

int alive_rows(const LayerState& l) {
  int n = 0;
  for (std::size_t r = 0; r < l.weight_rows(); ++r) n += row_alive(l, r) ? 1 : 0;
  return n;
}

// Alive input channels: a channel counts if any of its mask columns has a
// nonzero entry. The bias column is not a channel.
int alive_in_channels(const LayerState& l) {
  const int in_ch = l.kind == LayerKind::Dense ? l.in : l.in_ch;
  const std::size_t block = l.kind == LayerKind::Dense
                                ? 1
                                : static_cast<std::size_t>(l.kh) * l.kw;
  int n = 0;
  for (int c = 0; c < in_ch; ++c) {
    bool alive = false;
    for (std::size_t col = c * block; col < (c + 1) * block && !alive; ++col) {
      for (std::size_t r = 0; r < l.weight_rows() && !alive; ++r)
        if (l.mask.at(r, col) != 0.0) alive = true;
    }
    n += alive ? 1 : 0;
  }
  return n;
}

std::uint64_t layer_flops(const LayerState& l, const ActShape& out_shape, bool dense) {
  if (!l.has_params()) return 0;
  const std::uint64_t out = dense ? l.weight_rows() : alive_rows(l);
  const std::uint64_t in =
      dense ? (l.kind == LayerKind::Dense ? l.in : l.in_ch) : alive_in_channels(l);
  if (l.kind == LayerKind::Dense) return 2 * out * (in + 1);
  const std::uint64_t locs = static_cast<std::uint64_t>(out_shape.h) * out_shape.w;
  return 2 * out * (in * static_cast<std::uint64_t>(l.kh) * l.kw + 1) * locs;
}

}  // namespace

FlopsReport flops_report(const Model& model) {
  if (model.out_shapes.size() != model.layers.size())
    throw std::invalid_argument("flops_report: model not validated");
  FlopsReport rep;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerState& l = model.layers[li];
    FlopsReport::Entry e{};
    e.layer = static_cast<int>(li);
    e.kind = l.kind;
    if (l.has_params()) {
      e.flops = layer_flops(l, model.out_shapes[li], false);
      e.flops_dense = layer_flops(l, model.out_shapes[li], true);
      e.params_total = l.param_count();
      e.params_remaining = l.remaining_count();
      e.out_channels_total = static_cast<int>(l.weight_rows());
      e.out_channels_alive = alive_rows(l);
    }
    rep.total_flops += e.flops;
    rep.total_flops_dense += e.flops_dense;
    rep.total_params += e.params_total;
    rep.total_params_remaining += e.params_remaining;
    rep.per_layer.push_back(e);
  }
  return rep;
}

void write_flops_report(std::ostream& os, const FlopsReport& r) {
  os << "layer\tkind\tflops\tflops_dense\tparams\tparams_remaining\tchannels\tchannels_alive\n";
  for (const auto& e : r.per_layer) {
    os << e.layer << '\t' << layer_kind_name(e.kind) << '\t' << e.flops << '\t' << e.flops_dense
       << '\t' << e.params_total << '\t' << e.params_remaining << '\t' << e.out_channels_total
       << '\t' << e.out_channels_alive << '\n';
  }
  os << "total\t-\t" << r.total_flops << '\t' << r.total_flops_dense << '\t' << r.total_params
     << '\t' << r.total_params_remaining << "\t-\t-\n";
}

double channel_importance(const ImportanceMap& imap, const Model& model, int layer,
                          int channel) {
  const LayerState& l = model.layers[layer];
  const LayerImportance& li = imap.per_layer[layer];
  const std::size_t lo = static_cast<std::size_t>(channel) * l.weight_cols();
  const std::size_t hi = lo + l.weight_cols();
  double sum = 0.0;
  bool any = false;
  for (std::size_t k = 0; k < li.index.size(); ++k) {
    if (li.index[k] >= lo && li.index[k] < hi) {
      sum += li.normalized[k];
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("channel_importance: channel fully masked");
  return sum;
}

namespace {

// Union-find over (layer, channel) producer nodes.
struct GroupFinder {
  std::vector<int> parent;
  std::vector<std::pair<int, int>> nodes;        // id -> (layer, channel)
  std::vector<std::vector<int>> layer_node_ids;  // per layer: channel -> id (-1 if none)

  explicit GroupFinder(const Model& model) {
    layer_node_ids.resize(model.layers.size());
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      const LayerState& l = model.layers[li];
      if (!l.has_params()) continue;
      layer_node_ids[li].assign(l.weight_rows(), -1);
      for (std::size_t c = 0; c < l.weight_rows(); ++c) {
        layer_node_ids[li][c] = static_cast<int>(nodes.size());
        nodes.emplace_back(static_cast<int>(li), static_cast<int>(c));
        parent.push_back(static_cast<int>(parent.size()));
      }
    }
  }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void join(int a, int b) { parent[find(a)] = find(b); }
};

// Producer nodes behind each channel of a layer's output edge, following
// Relu and Add; empty past a Flatten (channel identity dissolves there).
struct EdgeWriters {
  bool image_channels = false;  // writers indexed by channel
  std::vector<std::vector<int>> writers;
};

}  // namespace

std::vector<ConsumerSpan> channel_consumers(const Model& model, int layer, int channel) {
  std::vector<ConsumerSpan> out;
  // Worklist items: an edge (output of layer `e`, or the model input when
  // e == -1) together with either a channel id (image edges / dense rows)
  // or a resolved flat column range.
  struct Item {
    int edge;
    bool is_range;
    int channel;
    std::size_t lo, hi;
  };
  std::vector<Item> work{{layer, false, channel, 0, 0}};
  while (!work.empty()) {
    Item it = work.back();
    work.pop_back();
    const ActShape shape = it.edge == -1 ? model.input : model.out_shapes[it.edge];
    // Collect the layers reading this edge.
    std::vector<int> readers;
    if (it.edge + 1 < static_cast<int>(model.layers.size())) readers.push_back(it.edge + 1);
    for (std::size_t k = it.edge + 1 < 0 ? 0 : it.edge + 1; k < model.layers.size(); ++k) {
      if (model.layers[k].kind == LayerKind::Add && model.layers[k].skip_src == it.edge)
        readers.push_back(static_cast<int>(k));
    }
    for (int t : readers) {
      const LayerState& l = model.layers[t];
      switch (l.kind) {
        case LayerKind::Dense: {
          if (it.is_range)
            out.push_back({t, it.lo, it.hi});
          else
            out.push_back({t, static_cast<std::size_t>(it.channel),
                           static_cast<std::size_t>(it.channel) + 1});
          break;
        }
        case LayerKind::Conv2D: {
          const std::size_t block = static_cast<std::size_t>(l.kh) * l.kw;
          out.push_back({t, it.channel * block, (it.channel + 1) * block});
          break;
        }
        case LayerKind::Flatten: {
          const std::size_t plane = static_cast<std::size_t>(shape.h) * shape.w;
          work.push_back({t, true, 0, it.channel * plane, (it.channel + 1) * plane});
          break;
        }
        case LayerKind::Relu:
        case LayerKind::Add: {
          Item next = it;
          next.edge = t;
          if (l.kind == LayerKind::Add && t == it.edge + 1) {
            // Main-path operand: the output channel is the same index.
          }
          work.push_back(next);
          break;
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const ConsumerSpan& a, const ConsumerSpan& b) {
    return a.layer != b.layer ? a.layer < b.layer : a.col_begin < b.col_begin;
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const ConsumerSpan& a, const ConsumerSpan& b) {
                          return a.layer == b.layer && a.col_begin == b.col_begin &&
                                 a.col_end == b.col_end;
                        }),
            out.end());
  return out;
}

namespace {

// Zero the mask rows of the group's member channels and the consumer
// columns reading them; records previously-alive flat indices for undo.
struct MaskEdit {
  std::vector<std::pair<int, std::size_t>> flipped;  // (layer, flat index)
  void zero(Model& model, int layer, std::size_t flat) {
    LayerState& l = model.layers[layer];
    if (l.mask[flat] != 0.0) {
      l.mask[flat] = 0.0;
      flipped.emplace_back(layer, flat);
    }
  }
  void undo(Model& model) {
    for (auto& [layer, flat] : flipped) model.layers[layer].mask[flat] = 1.0;
    flipped.clear();
  }
};

void mask_group(Model& model, const std::vector<std::pair<int, int>>& members, MaskEdit& edit) {
  for (const auto& [li, ch] : members) {
    LayerState& l = model.layers[li];
    const std::size_t cols = l.weight_cols();
    for (std::size_t c = 0; c < cols; ++c) edit.zero(model, li, ch * cols + c);
    for (const ConsumerSpan& cs : channel_consumers(model, li, ch)) {
      const LayerState& consumer = model.layers[cs.layer];
      for (std::size_t r = 0; r < consumer.weight_rows(); ++r)
        for (std::size_t c = cs.col_begin; c < cs.col_end; ++c)
          edit.zero(model, cs.layer, r * consumer.weight_cols() + c);
    }
  }
}

}  // namespace

std::vector<ChannelGroup> make_groups(const Model& model, const ImportanceMap& imap) {
  if (model.out_shapes.size() != model.layers.size())
    throw std::invalid_argument("make_groups: model not validated");
  GroupFinder gf(model);

  // Walk edges; Add layers tie the producers of their two operands.
  std::vector<EdgeWriters> edge(model.layers.size());
  EdgeWriters input_edge;  // no producers
  input_edge.image_channels = !model.input.flat;
  input_edge.writers.assign(std::max(1, model.input.flat ? model.input.features : model.input.c),
                            {});
  auto writers_of = [&](int e) -> const EdgeWriters& {
    return e == -1 ? input_edge : edge[e];
  };

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerState& l = model.layers[li];
    const EdgeWriters& prev = li == 0 ? input_edge : edge[li - 1];
    EdgeWriters cur;
    switch (l.kind) {
      case LayerKind::Dense:
      case LayerKind::Conv2D: {
        cur.image_channels = l.kind == LayerKind::Conv2D;
        cur.writers.resize(l.weight_rows());
        for (std::size_t c = 0; c < l.weight_rows(); ++c)
          cur.writers[c] = {gf.layer_node_ids[li][c]};
        break;
      }
      case LayerKind::Relu:
        cur = prev;
        break;
      case LayerKind::Flatten:
        cur.image_channels = false;
        cur.writers.assign(model.out_shapes[li].features, {});
        break;
      case LayerKind::Add: {
        const EdgeWriters& skip = writers_of(l.skip_src);
        if (prev.writers.size() != skip.writers.size())
          throw std::invalid_argument("make_groups: inconsistent shared dimensions at add layer " +
                                      std::to_string(li));
        cur.image_channels = prev.image_channels;
        cur.writers.resize(prev.writers.size());
        for (std::size_t c = 0; c < cur.writers.size(); ++c) {
          cur.writers[c] = prev.writers[c];
          cur.writers[c].insert(cur.writers[c].end(), skip.writers[c].begin(),
                                skip.writers[c].end());
          for (std::size_t k = 1; k < cur.writers[c].size(); ++k)
            gf.join(cur.writers[c][0], cur.writers[c][k]);
        }
        break;
      }
    }
    edge[li] = std::move(cur);
  }

  // Components over alive, non-classifier channels.
  const int out_layer = model.output_layer_index();
  std::vector<std::vector<int>> comp_members;
  std::vector<int> comp_of(gf.nodes.size(), -1);
  std::vector<bool> comp_blocked;
  for (std::size_t id = 0; id < gf.nodes.size(); ++id) {
    const int root = gf.find(static_cast<int>(id));
    if (comp_of[root] == -1) {
      comp_of[root] = static_cast<int>(comp_members.size());
      comp_members.emplace_back();
      comp_blocked.push_back(false);
    }
    const auto& [li, ch] = gf.nodes[id];
    if (li == out_layer) comp_blocked[comp_of[root]] = true;
    if (row_alive(model.layers[li], ch))
      comp_members[comp_of[root]].push_back(static_cast<int>(id));
  }

  Model probe = model;  // mask scratch copy for hypothetical recounts
  const std::uint64_t base_flops = flops_report(probe).total_flops;

  std::vector<ChannelGroup> groups;
  for (std::size_t c = 0; c < comp_members.size(); ++c) {
    if (comp_blocked[c] || comp_members[c].empty()) continue;
    ChannelGroup g;
    for (int id : comp_members[c]) g.members.push_back(gf.nodes[id]);
    std::sort(g.members.begin(), g.members.end());
    for (const auto& [li, ch] : g.members)
      g.agg_loss += channel_importance(imap, model, li, ch);
    MaskEdit edit;
    mask_group(probe, g.members, edit);
    const std::uint64_t after = flops_report(probe).total_flops;
    edit.undo(probe);
    g.flops_delta = base_flops - after;
    if (g.flops_delta == 0) g.flops_delta = 1;  // degenerate; keeps the ratio defined
    g.score = g.agg_loss / static_cast<double>(g.flops_delta);
    groups.push_back(std::move(g));
  }
  std::sort(groups.begin(), groups.end(), [](const ChannelGroup& a, const ChannelGroup& b) {
    return a.members.front() < b.members.front();
  });
  return groups;
}

ChannelPlan channel_prune_step(Model& model, const ModelStats& stats, double p,
                               double damping) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("channel_prune_step: p must be in (0,1)");
  const ImportanceMap imap = compute_importance(model, stats, damping);
  std::vector<ChannelGroup> groups = make_groups(model, imap);
  if (groups.empty()) throw std::invalid_argument("channel_prune_step: no candidate groups");

  ChannelPlan plan;
  plan.groups_before = groups.size();
  plan.flops_before = flops_report(model).total_flops;

  std::sort(groups.begin(), groups.end(), [](const ChannelGroup& a, const ChannelGroup& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.members.front() < b.members.front();
  });
  // floor(p * #groups), but never less than one while candidates remain:
  // with desk-scale channel counts a strict floor would stall small p.
  std::size_t k = static_cast<std::size_t>(p * static_cast<double>(groups.size()));
  k = std::max<std::size_t>(k, 1);

  std::vector<int> alive(model.layers.size(), 0);
  for (std::size_t li = 0; li < model.layers.size(); ++li)
    if (model.layers[li].has_params()) alive[li] = alive_rows(model.layers[li]);

  MaskEdit edit;
  for (const ChannelGroup& g : groups) {
    if (plan.pruned.size() >= k) break;
    bool would_empty = false;
    for (const auto& [li, ch] : g.members)
      if (alive[li] <= 1) would_empty = true;
    if (would_empty) {
      plan.skipped.push_back(g);
      continue;
    }
    mask_group(model, g.members, edit);
    for (const auto& [li, ch] : g.members) {
      --alive[li];
      ++plan.raw_channels_removed;
    }
    plan.pruned.push_back(g);
  }
  for (LayerState& l : model.layers)
    if (l.has_params()) l.reproject();

  plan.flops_after = flops_report(model).total_flops;
  return plan;
}

void write_channel_plan(std::ostream& os, const ChannelPlan& plan) {
  os << "flops_before\t" << plan.flops_before << "\nflops_after\t" << plan.flops_after
     << "\ngroups_before\t" << plan.groups_before << "\nraw_channels_removed\t"
     << plan.raw_channels_removed << "\n";
  for (const ChannelGroup& g : plan.pruned) {
    os << "pruned";
    for (const auto& [li, ch] : g.members) os << '\t' << li << ':' << ch;
    os << '\t' << g.agg_loss << '\t' << g.flops_delta << '\t' << g.score << '\n';
  }
  for (const ChannelGroup& g : plan.skipped) {
    os << "skipped";
    for (const auto& [li, ch] : g.members) os << '\t' << li << ':' << ch;
    os << '\t' << g.agg_loss << '\t' << g.flops_delta << '\t' << g.score << '\n';
  }
}

}  // namespace nap
