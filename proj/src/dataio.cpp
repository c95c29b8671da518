#include "nap/dataio.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "nap/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are defined little-endian; big-endian hosts need swaps");

namespace nap::io {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                        const std::string& path) {
  if (off + 4 > b.size())
    throw IdxError(IdxError::Kind::Truncated, b.size(),
                   path + ": truncated at offset " + std::to_string(b.size()) + " (need " +
                       std::to_string(off + 4) + " bytes for header)");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
  const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                             std::uint8_t(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<std::uint8_t> ib = read_file(images_path);
  if (ib.empty())
    throw IdxError(IdxError::Kind::Truncated, 0, images_path + ": truncated at offset 0");
  const std::uint32_t imagic = read_be32(ib, 0, images_path);
  if (imagic != kIdxImagesMagic)
    throw IdxError(IdxError::Kind::BadMagic, 0,
                   images_path + ": bad magic at offset 0: expected 0x00000803, got " +
                       std::to_string(imagic));
  const std::uint32_t n = read_be32(ib, 4, images_path);
  const std::uint32_t rows = read_be32(ib, 8, images_path);
  const std::uint32_t cols = read_be32(ib, 12, images_path);
  const std::size_t need = 16 + std::size_t(n) * rows * cols;
  if (ib.size() < need)
    throw IdxError(IdxError::Kind::Truncated, ib.size(),
                   images_path + ": truncated at offset " + std::to_string(ib.size()) +
                       " (payload declares " + std::to_string(need) + " bytes)");

  const std::vector<std::uint8_t> lb = read_file(labels_path);
  if (lb.empty())
    throw IdxError(IdxError::Kind::Truncated, 0, labels_path + ": truncated at offset 0");
  const std::uint32_t lmagic = read_be32(lb, 0, labels_path);
  if (lmagic != kIdxLabelsMagic)
    throw IdxError(IdxError::Kind::BadMagic, 0,
                   labels_path + ": bad magic at offset 0: expected 0x00000801, got " +
                       std::to_string(lmagic));
  const std::uint32_t ln = read_be32(lb, 4, labels_path);
  if (ln != n)
    throw IdxError(IdxError::Kind::CountMismatch, 4,
                   labels_path + ": label count " + std::to_string(ln) + " != image count " +
                       std::to_string(n) + " (offset 4)");
  if (lb.size() < 8 + std::size_t(n))
    throw IdxError(IdxError::Kind::Truncated, lb.size(),
                   labels_path + ": truncated at offset " + std::to_string(lb.size()));

  Dataset d;
  d.geometry = ActShape{false, 0, 1, static_cast<int>(rows), static_cast<int>(cols)};
  d.images = Tensor::matrix(n, std::size_t(rows) * cols);
  const double inv = 1.0 / 255.0;
  for (std::size_t k = 0; k < std::size_t(n) * rows * cols; ++k)
    d.images[k] = static_cast<double>(ib[16 + k]) * inv;
  d.labels.resize(n);
  int maxlab = 0;
  for (std::size_t k = 0; k < n; ++k) {
    d.labels[k] = lb[8 + k];
    maxlab = std::max(maxlab, d.labels[k]);
  }
  d.num_classes = maxlab + 1;
  return d;
}

void save_idx(const std::string& images_path, const std::string& labels_path,
              const std::vector<std::uint8_t>& pixels, std::uint32_t n, std::uint32_t rows,
              std::uint32_t cols, const std::vector<std::uint8_t>& labels) {
  if (pixels.size() != std::size_t(n) * rows * cols)
    throw std::invalid_argument("save_idx: pixel buffer size mismatch");
  if (labels.size() != n) throw std::invalid_argument("save_idx: label count mismatch");
  {
    std::ofstream f(images_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + images_path);
    write_be32(f, kIdxImagesMagic);
    write_be32(f, n);
    write_be32(f, rows);
    write_be32(f, cols);
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  }
  {
    std::ofstream f(labels_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + labels_path);
    write_be32(f, kIdxLabelsMagic);
    write_be32(f, n);
    f.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  }
}

Dataset synth_dataset(std::uint64_t seed, const SynthSpec& spec) {
  if (spec.n < 1 || spec.features < 1 || spec.classes < 1)
    throw std::invalid_argument("synth_dataset: n, features, classes must be >= 1");
  Rng rng(seed);
  Dataset d;
  d.num_classes = spec.classes;
  d.geometry = ActShape{true, spec.features, 0, 0, 0};
  d.images = Tensor::matrix(spec.n, spec.features);
  d.labels.resize(spec.n);

  if (spec.mode == SynthMode::GaussianClusters) {
    // Class centers: random directions at radius `separation` (sigma = 1).
    Tensor centers = Tensor::matrix(spec.classes, spec.features);
    for (int c = 0; c < spec.classes; ++c) {
      double norm2 = 0.0;
      for (int f = 0; f < spec.features; ++f) {
        centers.at(c, f) = rng.normal();
        norm2 += centers.at(c, f) * centers.at(c, f);
      }
      const double scale = spec.separation / std::sqrt(std::max(norm2, 1e-300));
      for (int f = 0; f < spec.features; ++f) centers.at(c, f) *= scale;
    }
    for (std::size_t s = 0; s < spec.n; ++s) {
      const int c = static_cast<int>(rng.index(spec.classes));
      d.labels[s] = c;
      for (int f = 0; f < spec.features; ++f)
        d.images.at(s, f) = centers.at(c, f) + rng.normal();
    }
    // Affine rescale to [0,1]; separability is unaffected.
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < d.images.size(); ++k) {
      lo = std::min(lo, d.images[k]);
      hi = std::max(hi, d.images[k]);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t k = 0; k < d.images.size(); ++k) d.images[k] = (d.images[k] - lo) / span;
  } else {
    // Teacher-net labels on uniform [0,1] inputs: a frozen random one-hidden
    // layer network decides the class.
    const int hidden = 2 * spec.features + 4;
    Model teacher;
    teacher.input = d.geometry;
    teacher.layers.push_back(LayerState::dense(spec.features, hidden));
    teacher.layers.push_back(LayerState::relu());
    teacher.layers.push_back(LayerState::dense(hidden, spec.classes));
    teacher.validate();
    teacher.init_weights(rng);
    for (std::size_t k = 0; k < d.images.size(); ++k) d.images[k] = rng.uniform();
    const ForwardContext ctx = forward(teacher, d.images);
    d.labels = argmax_rows(ctx.logits());
  }
  return d;
}

// --- checkpoint container ---------------------------------------------------

namespace {

constexpr char kMagic[4] = {'N', 'A', 'P', 'C'};

struct Writer {
  std::vector<std::uint8_t> buf;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void matrix(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rows()));
    u32(static_cast<std::uint32_t>(t.cols()));
    bytes(t.data(), t.size() * sizeof(double));
  }
  void mask_bits(const Tensor& m) {
    std::vector<std::uint8_t> packed((m.size() + 7) / 8, 0);
    for (std::size_t k = 0; k < m.size(); ++k)
      if (m[k] != 0.0) packed[k / 8] |= std::uint8_t(1u << (k % 8));
    bytes(packed.data(), packed.size());
  }
};

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw CheckpointError(std::string("checkpoint truncated at offset ") +
                            std::to_string(pos) + " reading " + what);
  }
  void bytes(void* p, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    bytes(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    bytes(&v, 8, what);
    return v;
  }
  double f64(const char* what) {
    double v;
    bytes(&v, 8, what);
    return v;
  }
  std::string text(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  Tensor matrix(const char* what) {
    const std::uint32_t r = u32(what);
    const std::uint32_t c = u32(what);
    Tensor t = Tensor::matrix(r, c);
    bytes(t.data(), t.size() * sizeof(double), what);
    return t;
  }
  void mask_bits(Tensor& m, const char* what) {
    std::vector<std::uint8_t> packed((m.size() + 7) / 8);
    bytes(packed.data(), packed.size(), what);
    for (std::size_t k = 0; k < m.size(); ++k)
      m[k] = (packed[k / 8] >> (k % 8)) & 1u ? 1.0 : 0.0;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.text(arch_string(c.model));
  w.u32(static_cast<std::uint32_t>(c.model.layers.size()));
  for (const LayerState& l : c.model.layers) {
    if (!l.has_params()) continue;
    w.matrix(l.weights);
    w.mask_bits(l.mask);
  }
  w.u8(c.stats ? 1 : 0);
  if (c.stats) {
    w.f64(c.stats->decay);
    for (std::size_t li = 0; li < c.model.layers.size(); ++li) {
      if (!c.model.layers[li].has_params()) continue;
      const auto& ls = c.stats->per_layer[li];
      w.u8(ls ? 1 : 0);
      if (ls) {
        w.matrix(ls->A);
        w.matrix(ls->DS);
        w.f64(ls->decay);
        w.u64(ls->steps_seen);
      }
    }
  }
  w.u64(c.meta.train_steps);
  w.u32(static_cast<std::uint32_t>(c.meta.lambda_history.size()));
  for (double v : c.meta.lambda_history) w.f64(v);
  w.u32(static_cast<std::uint32_t>(c.meta.flops_history.size()));
  for (std::uint64_t v : c.meta.flops_history) w.u64(v);

  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(w.buf.data()), static_cast<uInt>(w.buf.size())));
  w.u32(crc);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(w.buf.data()),
          static_cast<std::streamsize>(w.buf.size()));
  if (!f) throw CheckpointError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::vector<std::uint8_t> buf;
  try {
    buf = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError(e.what());
  }
  if (buf.size() < 12) throw CheckpointError("checkpoint too short: " + path);

  const std::size_t body = buf.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + body, 4);
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(body)));
  if (crc != stored_crc)
    throw CheckpointError("checkpoint CRC mismatch in " + path + ": stored " +
                          std::to_string(stored_crc) + ", computed " + std::to_string(crc));

  Reader r{buf};
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("bad checkpoint magic in " + path + " (expected NAPC)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version mismatch in " + path + ": file has " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));

  Checkpoint c;
  const std::string arch = r.text("architecture");
  c.model = parse_arch(arch);
  const std::uint32_t n_layers = r.u32("layer count");
  if (n_layers != c.model.layers.size())
    throw CheckpointError("checkpoint layer count " + std::to_string(n_layers) +
                          " disagrees with architecture '" + arch + "'");
  for (LayerState& l : c.model.layers) {
    if (!l.has_params()) continue;
    Tensor wts = r.matrix("weights");
    if (!wts.same_shape(l.weights))
      throw CheckpointError("checkpoint weight shape " + wts.shape_str() +
                            " disagrees with architecture");
    l.weights = std::move(wts);
    r.mask_bits(l.mask, "mask");
  }
  if (r.u8("stats flag")) {
    ModelStats stats;
    stats.decay = r.f64("stats decay");
    stats.per_layer.resize(c.model.layers.size());
    for (std::size_t li = 0; li < c.model.layers.size(); ++li) {
      if (!c.model.layers[li].has_params()) continue;
      if (r.u8("layer stats flag")) {
        LayerStats ls;
        ls.A = r.matrix("A factor");
        ls.DS = r.matrix("DS factor");
        ls.decay = r.f64("layer decay");
        ls.steps_seen = r.u64("steps seen");
        stats.per_layer[li] = std::move(ls);
      }
    }
    c.stats = std::move(stats);
  }
  c.meta.train_steps = r.u64("train steps");
  const std::uint32_t nl = r.u32("lambda history length");
  c.meta.lambda_history.resize(nl);
  for (std::uint32_t k = 0; k < nl; ++k) c.meta.lambda_history[k] = r.f64("lambda history");
  const std::uint32_t nf = r.u32("flops history length");
  c.meta.flops_history.resize(nf);
  for (std::uint32_t k = 0; k < nf; ++k) c.meta.flops_history[k] = r.u64("flops history");
  if (r.pos != body)
    throw CheckpointError("checkpoint has " + std::to_string(body - r.pos) +
                          " unexpected trailing bytes");
  return c;
}

}  // namespace nap::io
