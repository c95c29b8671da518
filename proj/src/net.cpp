#include "nap/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "nap/linalg.hpp"

namespace nap {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2D: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Add: return "add";
  }
  return "?";
}

std::string ActShape::str() const {
  std::ostringstream os;
  if (flat)
    os << "(" << features << ")";
  else
    os << "(" << c << "x" << h << "x" << w << ")";
  return os.str();
}

LayerState LayerState::dense(int in, int out) {
  if (in < 1 || out < 1) throw std::invalid_argument("dense: in/out must be positive");
  LayerState l{LayerKind::Dense};
  l.in = in;
  l.out = out;
  l.weights = Tensor::matrix(out, in + 1);
  l.mask = Tensor::matrix(out, in + 1, 1.0);
  return l;
}

LayerState LayerState::conv2d(int in_ch, int out_ch, int kh, int kw, int stride, int pad) {
  if (in_ch < 1 || out_ch < 1 || kh < 1 || kw < 1 || stride < 1 || pad < 0) {
    throw std::invalid_argument("conv2d: bad geometry");
  }
  LayerState l{LayerKind::Conv2D};
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.kh = kh;
  l.kw = kw;
  l.stride = stride;
  l.pad = pad;
  l.weights = Tensor::matrix(out_ch, in_ch * kh * kw + 1);
  l.mask = Tensor::matrix(out_ch, in_ch * kh * kw + 1, 1.0);
  return l;
}

LayerState LayerState::add(int skip_src) {
  LayerState l{LayerKind::Add};
  l.skip_src = skip_src;
  return l;
}

std::size_t LayerState::remaining_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) n += mask[i] != 0.0 ? 1 : 0;
  return n;
}

void LayerState::reproject() {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (mask[i] == 0.0) weights[i] = 0.0;
  }
}

namespace {

std::invalid_argument layer_error(int idx, LayerKind kind, const std::string& msg) {
  std::ostringstream os;
  os << "layer " << idx << " (" << layer_kind_name(kind) << "): " << msg;
  return std::invalid_argument(os.str());
}

int conv_out_extent(int in, int pad, int k, int stride) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

void Model::validate() {
  out_shapes.clear();
  out_shapes.reserve(layers.size());
  ActShape cur = input;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerState& l = layers[li];
    const int idx = static_cast<int>(li);
    switch (l.kind) {
      case LayerKind::Dense: {
        if (!cur.flat)
          throw layer_error(idx, l.kind, "expects flat input, got " + cur.str() +
                                             " (insert flatten)");
        if (cur.features != l.in)
          throw layer_error(idx, l.kind,
                            "input width " + std::to_string(cur.features) + " != declared in " +
                                std::to_string(l.in));
        if (l.weights.rows() != static_cast<std::size_t>(l.out) ||
            l.weights.cols() != static_cast<std::size_t>(l.in + 1))
          throw layer_error(idx, l.kind, "weight shape " + l.weights.shape_str() + " invalid");
        cur = ActShape{true, l.out, 0, 0, 0};
        break;
      }
      case LayerKind::Conv2D: {
        if (cur.flat) throw layer_error(idx, l.kind, "expects image input, got " + cur.str());
        if (cur.c != l.in_ch)
          throw layer_error(idx, l.kind,
                            "input channels " + std::to_string(cur.c) + " != declared in_ch " +
                                std::to_string(l.in_ch));
        const int oh = conv_out_extent(cur.h, l.pad, l.kh, l.stride);
        const int ow = conv_out_extent(cur.w, l.pad, l.kw, l.stride);
        if (oh < 1 || ow < 1) throw layer_error(idx, l.kind, "kernel larger than padded input");
        cur = ActShape{false, 0, l.out_ch, oh, ow};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten: {
        if (cur.flat) throw layer_error(idx, l.kind, "input already flat");
        cur = ActShape{true, cur.count(), 0, 0, 0};
        break;
      }
      case LayerKind::Add: {
        if (l.skip_src < -1 || l.skip_src >= idx)
          throw layer_error(idx, l.kind,
                            "skip source " + std::to_string(l.skip_src) +
                                " must name an earlier layer (or -1 for the input)");
        const ActShape src = l.skip_src == -1 ? input : out_shapes[l.skip_src];
        if (!(src == cur))
          throw layer_error(idx, l.kind,
                            "operand shapes differ: " + cur.str() + " vs " + src.str());
        break;
      }
    }
    out_shapes.push_back(cur);
  }
  if (layers.empty()) throw std::invalid_argument("model has no layers");
  if (!out_shapes.back().flat)
    throw std::invalid_argument("model output must be flat logits (insert flatten)");
}

void Model::init_weights(Rng& rng) {
  for (LayerState& l : layers) {
    if (!l.has_params()) continue;
    const int fan_in = l.kind == LayerKind::Dense ? l.in : l.in_ch * l.kh * l.kw;
    const double bound = std::sqrt(6.0 / fan_in);
    const std::size_t cols = l.weights.cols();
    for (std::size_t r = 0; r < l.weights.rows(); ++r) {
      for (std::size_t c = 0; c + 1 < cols; ++c) l.weights.at(r, c) = rng.uniform(-bound, bound);
      l.weights.at(r, cols - 1) = 0.0;  // bias coordinate
    }
    l.mask.fill(1.0);
  }
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const LayerState& l : layers) n += l.param_count();
  return n;
}

std::size_t Model::remaining_count() const {
  std::size_t n = 0;
  for (const LayerState& l : layers) n += l.has_params() ? l.remaining_count() : 0;
  return n;
}

int Model::output_layer_index() const {
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    if (layers[i].has_params()) return i;
  }
  return -1;
}

namespace {

Tensor masked_weights(const LayerState& l) {
  Tensor w = l.weights;
  const Tensor& m = l.mask;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] *= m[i];
  return w;
}

// Augment (B, in) activations with the homogeneous column.
Tensor augment_ones(const Tensor& a) {
  const std::size_t b = a.rows(), in = a.cols();
  Tensor out = Tensor::matrix(b, in + 1);
  for (std::size_t r = 0; r < b; ++r) {
    std::memcpy(out.row(r), a.row(r), in * sizeof(double));
    out.at(r, in) = 1.0;
  }
  return out;
}

// One row per (sample, output y, output x): the receptive-field pixels in
// (in_ch, ky, kx) order plus a trailing homogeneous 1.
Tensor extract_patches(const Tensor& img, const ActShape& s, const LayerState& l, int oh,
                       int ow) {
  const std::size_t batch = img.rows();
  const std::size_t side = static_cast<std::size_t>(l.in_ch) * l.kh * l.kw + 1;
  Tensor patches = Tensor::matrix(batch * oh * ow, side);
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* im = img.row(b);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double* dst = patches.row((b * oh + oy) * ow + ox);
        std::size_t col = 0;
        for (int ic = 0; ic < l.in_ch; ++ic) {
          const double* ch = im + ic * plane;
          for (int ky = 0; ky < l.kh; ++ky) {
            const int y = oy * l.stride - l.pad + ky;
            for (int kx = 0; kx < l.kw; ++kx, ++col) {
              const int x = ox * l.stride - l.pad + kx;
              dst[col] = (y >= 0 && y < s.h && x >= 0 && x < s.w)
                             ? ch[static_cast<std::size_t>(y) * s.w + x]
                             : 0.0;
            }
          }
        }
        dst[side - 1] = 1.0;
      }
    }
  }
  return patches;
}

// Scatter-add patch gradients back to the input image (inverse of
// extract_patches, homogeneous column ignored).
void scatter_patches(const Tensor& dpatches, const ActShape& s, const LayerState& l, int oh,
                     int ow, Tensor& dimg) {
  const std::size_t batch = dimg.rows();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (std::size_t b = 0; b < batch; ++b) {
    double* im = dimg.row(b);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double* src = dpatches.row((b * oh + oy) * ow + ox);
        std::size_t col = 0;
        for (int ic = 0; ic < l.in_ch; ++ic) {
          double* ch = im + ic * plane;
          for (int ky = 0; ky < l.kh; ++ky) {
            const int y = oy * l.stride - l.pad + ky;
            for (int kx = 0; kx < l.kw; ++kx, ++col) {
              const int x = ox * l.stride - l.pad + kx;
              if (y >= 0 && y < s.h && x >= 0 && x < s.w)
                ch[static_cast<std::size_t>(y) * s.w + x] += src[col];
            }
          }
        }
      }
    }
  }
}

}  // namespace

ForwardContext forward(const Model& model, const Tensor& batch) {
  if (model.out_shapes.size() != model.layers.size())
    throw std::logic_error("forward: model not validated");
  if (batch.rank() != 2)
    throw std::invalid_argument("forward: batch must be rank 2 (rows = samples)");
  if (batch.cols() != static_cast<std::size_t>(model.input.count()))
    throw std::invalid_argument("forward: batch width " + std::to_string(batch.cols()) +
                                " != input geometry " + model.input.str());

  ForwardContext ctx;
  ctx.batch = batch.rows();
  ctx.outputs.resize(model.layers.size());
  ctx.patches.resize(model.layers.size());

  const Tensor* cur = &batch;
  ActShape shape = model.input;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerState& l = model.layers[li];
    switch (l.kind) {
      case LayerKind::Dense: {
        Tensor a_aug = augment_ones(*cur);
        Tensor wm = masked_weights(l);
        Tensor s = Tensor::matrix(ctx.batch, l.out);
        linalg::matmul_a_bt(a_aug.data(), wm.data(), s.data(), ctx.batch, l.in + 1, l.out);
        ctx.patches[li] = std::move(a_aug);
        ctx.outputs[li] = std::move(s);
        break;
      }
      case LayerKind::Conv2D: {
        const int oh = conv_out_extent(shape.h, l.pad, l.kh, l.stride);
        const int ow = conv_out_extent(shape.w, l.pad, l.kw, l.stride);
        Tensor patches = extract_patches(*cur, shape, l, oh, ow);
        Tensor wm = masked_weights(l);
        const std::size_t rows = patches.rows();
        Tensor s_rows = Tensor::matrix(rows, l.out_ch);
        linalg::matmul_a_bt(patches.data(), wm.data(), s_rows.data(), rows, patches.cols(),
                            l.out_ch);
        // (row-per-location, channel) -> (B, C, OH, OW)
        Tensor out = Tensor::matrix(ctx.batch, static_cast<std::size_t>(l.out_ch) * oh * ow);
        const std::size_t loc = static_cast<std::size_t>(oh) * ow;
        for (std::size_t b = 0; b < ctx.batch; ++b) {
          double* ob = out.row(b);
          for (std::size_t p = 0; p < loc; ++p) {
            const double* sr = s_rows.row(b * loc + p);
            for (int oc = 0; oc < l.out_ch; ++oc) ob[oc * loc + p] = sr[oc];
          }
        }
        ctx.patches[li] = std::move(patches);
        ctx.outputs[li] = std::move(out);
        break;
      }
      case LayerKind::Relu: {
        Tensor out = *cur;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
        ctx.outputs[li] = std::move(out);
        break;
      }
      case LayerKind::Flatten: {
        ctx.outputs[li] = *cur;  // row-major (B,C,H,W) is already flat per row
        break;
      }
      case LayerKind::Add: {
        const Tensor& skip = l.skip_src == -1 ? batch : ctx.outputs[l.skip_src];
        Tensor out = *cur;
        if (!out.same_shape(skip))
          throw layer_error(static_cast<int>(li), l.kind, "operand shape mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += skip[i];
        ctx.outputs[li] = std::move(out);
        break;
      }
    }
    cur = &ctx.outputs[li];
    shape = model.out_shapes[li];
  }
  return ctx;
}

void softmax_rows(const Tensor& logits, Tensor& probs) {
  probs = logits;
  const std::size_t b = logits.rows(), k = logits.cols();
  for (std::size_t r = 0; r < b; ++r) {
    double* p = probs.row(r);
    double mx = p[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, p[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(p[j] - mx);
      z += p[j];
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < k; ++j) p[j] *= inv;
  }
}

double mean_nll(const Tensor& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows())
    throw std::invalid_argument("mean_nll: label count != batch rows");
  const std::size_t b = logits.rows(), k = logits.cols();
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const double* p = logits.row(r);
    double mx = p[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, p[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(p[j] - mx);
    total += std::log(z) - (p[labels[r]] - mx);
  }
  return total / static_cast<double>(b);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* p = logits.row(r);
    int best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (p[j] > p[best]) best = static_cast<int>(j);
    out[r] = best;
  }
  return out;
}

BackwardResult backward(const Model& model, const ForwardContext& ctx,
                        const std::vector<int>& labels, bool want_capture) {
  const std::size_t nl = model.layers.size();
  if (ctx.outputs.size() != nl) throw std::invalid_argument("backward: context/model mismatch");
  const Tensor& logits = ctx.logits();
  if (labels.size() != ctx.batch)
    throw std::invalid_argument("backward: label count != batch size");
  for (int y : labels) {
    if (y < 0 || y >= static_cast<int>(logits.cols()))
      throw std::invalid_argument("backward: label out of range");
  }

  BackwardResult res;
  res.mean_loss = mean_nll(logits, labels);
  res.grads.per_layer.resize(nl);
  res.capture.per_layer.resize(nl);

  // Per-sample derivative of the per-sample loss wrt logits: softmax - onehot.
  Tensor delta;
  softmax_rows(logits, delta);
  for (std::size_t r = 0; r < ctx.batch; ++r) delta.at(r, labels[r]) -= 1.0;

  // grad_out[l]: accumulated dL/d(output of layer l); index nl-1 seeded above.
  std::vector<Tensor> grad_out(nl);
  grad_out[nl - 1] = std::move(delta);
  Tensor grad_input;  // dL/d(model input); kept only for Add(-1) plumbing

  const double inv_b = 1.0 / static_cast<double>(ctx.batch);
  auto add_into = [](Tensor& dst, const Tensor& src) {
    if (dst.empty()) {
      dst = src;
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  };

  for (std::size_t li = nl; li-- > 0;) {
    const LayerState& l = model.layers[li];
    Tensor g = std::move(grad_out[li]);
    if (g.empty()) continue;  // dead branch (possible only in malformed graphs)
    const bool need_input_grad = li > 0;

    switch (l.kind) {
      case LayerKind::Dense: {
        const Tensor& a_aug = ctx.patches[li];
        Tensor dw = Tensor::matrix(l.out, l.in + 1);
        linalg::matmul_at_b(g.data(), a_aug.data(), dw.data(), ctx.batch, l.out, l.in + 1);
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] *= inv_b * l.mask[i];
        res.grads.per_layer[li] = std::move(dw);
        if (need_input_grad) {
          Tensor wm = masked_weights(l);
          Tensor dx_aug = Tensor::matrix(ctx.batch, l.in + 1);
          linalg::matmul(g.data(), wm.data(), dx_aug.data(), ctx.batch, l.out, l.in + 1);
          Tensor dx = Tensor::matrix(ctx.batch, l.in);
          for (std::size_t r = 0; r < ctx.batch; ++r)
            std::memcpy(dx.row(r), dx_aug.row(r), l.in * sizeof(double));
          add_into(grad_out[li - 1], dx);
        }
        if (want_capture) res.capture.per_layer[li] = BatchCapture::Entry{a_aug, g};
        break;
      }
      case LayerKind::Conv2D: {
        const ActShape in_shape = li == 0 ? model.input : model.out_shapes[li - 1];
        const ActShape& os = model.out_shapes[li];
        const std::size_t loc = static_cast<std::size_t>(os.h) * os.w;
        const Tensor& patches = ctx.patches[li];
        // (B, C, OH, OW) -> row-per-location
        Tensor ds_rows = Tensor::matrix(ctx.batch * loc, l.out_ch);
        for (std::size_t b = 0; b < ctx.batch; ++b) {
          const double* gb = g.row(b);
          for (std::size_t p = 0; p < loc; ++p) {
            double* dr = ds_rows.row(b * loc + p);
            for (int oc = 0; oc < l.out_ch; ++oc) dr[oc] = gb[oc * loc + p];
          }
        }
        Tensor dw = Tensor::matrix(l.out_ch, patches.cols());
        linalg::matmul_at_b(ds_rows.data(), patches.data(), dw.data(), ds_rows.rows(), l.out_ch,
                            patches.cols());
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] *= inv_b * l.mask[i];
        res.grads.per_layer[li] = std::move(dw);
        if (need_input_grad) {
          Tensor wm = masked_weights(l);
          Tensor dpatches = Tensor::matrix(ds_rows.rows(), patches.cols());
          linalg::matmul(ds_rows.data(), wm.data(), dpatches.data(), ds_rows.rows(), l.out_ch,
                         patches.cols());
          Tensor dx = Tensor::matrix(ctx.batch, static_cast<std::size_t>(in_shape.count()));
          scatter_patches(dpatches, in_shape, l, os.h, os.w, dx);
          add_into(grad_out[li - 1], dx);
        }
        if (want_capture) res.capture.per_layer[li] = BatchCapture::Entry{patches, ds_rows};
        break;
      }
      case LayerKind::Relu: {
        const Tensor& out = ctx.outputs[li];
        for (std::size_t i = 0; i < g.size(); ++i)
          if (out[i] <= 0.0) g[i] = 0.0;
        if (need_input_grad) add_into(grad_out[li - 1], g);
        break;
      }
      case LayerKind::Flatten: {
        if (need_input_grad) add_into(grad_out[li - 1], g);
        break;
      }
      case LayerKind::Add: {
        if (l.skip_src >= 0) add_into(grad_out[l.skip_src], g);
        if (need_input_grad) add_into(grad_out[li - 1], g);
        break;
      }
    }
  }
  return res;
}

namespace {

std::vector<std::string> split_tokens(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("parse_arch: bad " + what + " '" + s + "'");
  }
}

}  // namespace

Model parse_arch(const std::string& spec) {
  Model m;
  bool have_input = false;
  ActShape cur;
  for (const std::string& tok : split_tokens(spec, ' ')) {
    auto parts = split_tokens(tok, ':');
    const std::string& head = parts[0];
    if (head == "input") {
      if (have_input) throw std::invalid_argument("parse_arch: duplicate input token");
      if (parts.size() != 2) throw std::invalid_argument("parse_arch: input needs a shape");
      auto dims = split_tokens(parts[1], 'x');
      if (dims.size() == 1) {
        cur = ActShape{true, parse_int(dims[0], "input width"), 0, 0, 0};
      } else if (dims.size() == 3) {
        cur = ActShape{false, 0, parse_int(dims[0], "input channels"),
                       parse_int(dims[1], "input height"), parse_int(dims[2], "input width")};
      } else {
        throw std::invalid_argument("parse_arch: input shape must be F or CxHxW");
      }
      m.input = cur;
      have_input = true;
      continue;
    }
    if (!have_input) throw std::invalid_argument("parse_arch: first token must be input:...");
    if (head == "dense") {
      if (parts.size() != 2) throw std::invalid_argument("parse_arch: dense needs out width");
      if (!cur.flat) throw std::invalid_argument("parse_arch: dense needs flat input");
      const int out = parse_int(parts[1], "dense width");
      m.layers.push_back(LayerState::dense(cur.features, out));
      cur = ActShape{true, out, 0, 0, 0};
    } else if (head == "conv") {
      // conv:OCxKHxKW[:sS][:pP]
      if (parts.size() < 2) throw std::invalid_argument("parse_arch: conv needs OCxKHxKW");
      if (cur.flat) throw std::invalid_argument("parse_arch: conv needs image input");
      auto dims = split_tokens(parts[1], 'x');
      if (dims.size() != 3) throw std::invalid_argument("parse_arch: conv needs OCxKHxKW");
      int stride = 1, pad = 0;
      for (std::size_t k = 2; k < parts.size(); ++k) {
        if (parts[k].size() > 1 && parts[k][0] == 's')
          stride = parse_int(parts[k].substr(1), "stride");
        else if (parts[k].size() > 1 && parts[k][0] == 'p')
          pad = parse_int(parts[k].substr(1), "pad");
        else
          throw std::invalid_argument("parse_arch: bad conv option '" + parts[k] + "'");
      }
      LayerState l = LayerState::conv2d(cur.c, parse_int(dims[0], "out channels"),
                                        parse_int(dims[1], "kernel height"),
                                        parse_int(dims[2], "kernel width"), stride, pad);
      const int oh = (cur.h + 2 * pad - l.kh) / l.stride + 1;
      const int ow = (cur.w + 2 * pad - l.kw) / l.stride + 1;
      cur = ActShape{false, 0, l.out_ch, oh, ow};
      m.layers.push_back(std::move(l));
    } else if (head == "relu") {
      m.layers.push_back(LayerState::relu());
    } else if (head == "flatten") {
      m.layers.push_back(LayerState::flatten());
      cur = ActShape{true, cur.count(), 0, 0, 0};
    } else if (head == "add") {
      if (parts.size() != 2) throw std::invalid_argument("parse_arch: add needs a source index");
      m.layers.push_back(LayerState::add(parse_int(parts[1], "add source")));
    } else {
      throw std::invalid_argument("parse_arch: unknown layer '" + head + "'");
    }
  }
  if (!have_input) throw std::invalid_argument("parse_arch: missing input token");
  m.validate();
  return m;
}

std::string arch_string(const Model& model) {
  std::ostringstream os;
  if (model.input.flat)
    os << "input:" << model.input.features;
  else
    os << "input:" << model.input.c << 'x' << model.input.h << 'x' << model.input.w;
  for (const LayerState& l : model.layers) {
    os << ' ';
    switch (l.kind) {
      case LayerKind::Dense: os << "dense:" << l.out; break;
      case LayerKind::Conv2D:
        os << "conv:" << l.out_ch << 'x' << l.kh << 'x' << l.kw << ":s" << l.stride << ":p"
           << l.pad;
        break;
      case LayerKind::Relu: os << "relu"; break;
      case LayerKind::Flatten: os << "flatten"; break;
      case LayerKind::Add: os << "add:" << l.skip_src; break;
    }
  }
  return os.str();
}

void sgd_step(Model& model, const Gradients& grads, SgdState& state, double lr,
              double momentum) {
  if (lr <= 0.0) throw std::invalid_argument("sgd_step: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("sgd_step: momentum must be in [0,1)");
  if (grads.per_layer.size() != model.layers.size())
    throw std::invalid_argument("sgd_step: gradient/layer count mismatch");
  state.velocity.resize(model.layers.size());

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    LayerState& l = model.layers[li];
    if (!l.has_params()) continue;
    const Tensor& g = grads.per_layer[li];
    if (!g.same_shape(l.weights))
      throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " +
                                  std::to_string(li));
    Tensor& v = state.velocity[li];
    if (!v.same_shape(l.weights)) v = Tensor(l.weights.shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      l.weights[i] -= lr * v[i];
      if (l.mask[i] == 0.0) l.weights[i] = 0.0;
    }
  }
}

}  // namespace nap
