#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nap/dataio.hpp"
#include "nap/rng.hpp"

// Procedural digit corpus: each class is a fixed set of strokes on a unit
// canvas; every sample gets its own affine jitter, stroke thickness, ink
// level and pixel noise, then is quantized to u8 exactly as stored in an
// IDX payload.

namespace nap::io {

namespace {

struct Stroke {
  enum class Type { Line, Bezier, Arc } type;
  // Line: (x0,y0)-(x2,y2). Bezier: control point (x1,y1).
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  // Arc: ellipse center/radii, angles in degrees (0 = +x, 90 = +y/down).
  double cx = 0, cy = 0, rx = 0, ry = 0, a0 = 0, a1 = 0;

  static Stroke line(double x0, double y0, double x1, double y1) {
    Stroke s{Type::Line};
    s.x0 = x0; s.y0 = y0; s.x2 = x1; s.y2 = y1;
    return s;
  }
  static Stroke bezier(double x0, double y0, double cx, double cy, double x1, double y1) {
    Stroke s{Type::Bezier};
    s.x0 = x0; s.y0 = y0; s.x1 = cx; s.y1 = cy; s.x2 = x1; s.y2 = y1;
    return s;
  }
  static Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1) {
    Stroke s{Type::Arc};
    s.cx = cx; s.cy = cy; s.rx = rx; s.ry = ry; s.a0 = a0; s.a1 = a1;
    return s;
  }
};

const std::vector<std::vector<Stroke>>& glyphs() {
  static const std::vector<std::vector<Stroke>> g = {
      // 0
      {Stroke::arc(0.50, 0.50, 0.26, 0.36, 0, 360)},
      // 1
      {Stroke::line(0.35, 0.28, 0.52, 0.12), Stroke::line(0.52, 0.12, 0.52, 0.88)},
      // 2
      {Stroke::arc(0.50, 0.33, 0.23, 0.20, 180, 380),
       Stroke::bezier(0.72, 0.40, 0.60, 0.62, 0.27, 0.84),
       Stroke::line(0.27, 0.84, 0.75, 0.84)},
      // 3
      {Stroke::arc(0.47, 0.32, 0.22, 0.19, 210, 450),
       Stroke::arc(0.47, 0.67, 0.24, 0.21, 270, 495)},
      // 4
      {Stroke::line(0.58, 0.12, 0.25, 0.60), Stroke::line(0.25, 0.60, 0.78, 0.60),
       Stroke::line(0.63, 0.12, 0.63, 0.88)},
      // 5
      {Stroke::line(0.72, 0.14, 0.33, 0.14), Stroke::line(0.33, 0.14, 0.30, 0.46),
       Stroke::arc(0.49, 0.65, 0.23, 0.21, 210, 460)},
      // 6
      {Stroke::bezier(0.66, 0.14, 0.38, 0.22, 0.32, 0.52),
       Stroke::line(0.32, 0.52, 0.31, 0.66),
       Stroke::arc(0.49, 0.67, 0.19, 0.19, 180, 540)},
      // 7
      {Stroke::line(0.25, 0.14, 0.75, 0.14), Stroke::line(0.75, 0.14, 0.42, 0.88)},
      // 8
      {Stroke::arc(0.50, 0.30, 0.19, 0.17, 0, 360),
       Stroke::arc(0.50, 0.67, 0.23, 0.20, 0, 360)},
      // 9
      {Stroke::arc(0.50, 0.32, 0.20, 0.19, 0, 360),
       Stroke::bezier(0.70, 0.34, 0.72, 0.62, 0.56, 0.88)},
  };
  return g;
}

constexpr int kSide = 28;
constexpr double kRad = M_PI / 180.0;

struct Jitter {
  double rot, sx, sy, shear, tx, ty, thick, ink;
};

void splat(double* canvas, double px, double py, double radius, double ink) {
  const int lo_x = std::max(0, static_cast<int>(px - 3 * radius));
  const int hi_x = std::min(kSide - 1, static_cast<int>(px + 3 * radius) + 1);
  const int lo_y = std::max(0, static_cast<int>(py - 3 * radius));
  const int hi_y = std::min(kSide - 1, static_cast<int>(py + 3 * radius) + 1);
  const double inv2r2 = 1.0 / (2.0 * radius * radius);
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      const double dx = x + 0.5 - px, dy = y + 0.5 - py;
      const double v = ink * std::exp(-(dx * dx + dy * dy) * inv2r2);
      double& c = canvas[y * kSide + x];
      c = std::max(c, v);
    }
  }
}

void draw_point(double* canvas, double gx, double gy, const Jitter& j) {
  // Affine about the glyph center, then into a 20px box offset by 4.
  double x = gx - 0.5, y = gy - 0.5;
  x += j.shear * y;
  x *= j.sx;
  y *= j.sy;
  const double c = std::cos(j.rot), s = std::sin(j.rot);
  const double xr = c * x - s * y, yr = s * x + c * y;
  const double px = 4.0 + 20.0 * (xr + 0.5) + j.tx;
  const double py = 4.0 + 20.0 * (yr + 0.5) + j.ty;
  splat(canvas, px, py, j.thick, j.ink);
}

void draw_stroke(double* canvas, const Stroke& s, const Jitter& j) {
  // Step along the curve densely enough that splats overlap.
  auto steps_for = [](double len_px) { return std::max(8, static_cast<int>(len_px / 0.3)); };
  switch (s.type) {
    case Stroke::Type::Line: {
      const double len = 20.0 * std::hypot(s.x2 - s.x0, s.y2 - s.y0);
      const int n = steps_for(len);
      for (int k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) / n;
        draw_point(canvas, s.x0 + t * (s.x2 - s.x0), s.y0 + t * (s.y2 - s.y0), j);
      }
      break;
    }
    case Stroke::Type::Bezier: {
      const double len = 20.0 * (std::hypot(s.x1 - s.x0, s.y1 - s.y0) +
                                 std::hypot(s.x2 - s.x1, s.y2 - s.y1));
      const int n = steps_for(len);
      for (int k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) / n, u = 1.0 - t;
        draw_point(canvas, u * u * s.x0 + 2 * u * t * s.x1 + t * t * s.x2,
                   u * u * s.y0 + 2 * u * t * s.y1 + t * t * s.y2, j);
      }
      break;
    }
    case Stroke::Type::Arc: {
      const double span = std::abs(s.a1 - s.a0) * kRad;
      const double len = 20.0 * span * 0.5 * (s.rx + s.ry);
      const int n = steps_for(len);
      for (int k = 0; k <= n; ++k) {
        const double a = (s.a0 + (s.a1 - s.a0) * k / n) * kRad;
        draw_point(canvas, s.cx + s.rx * std::cos(a), s.cy + s.ry * std::sin(a), j);
      }
      break;
    }
  }
}

void render_digit(int digit, Rng& rng, std::uint8_t* out) {
  Jitter j;
  j.rot = rng.uniform(-0.22, 0.22);
  j.sx = rng.uniform(0.78, 1.06);
  j.sy = rng.uniform(0.78, 1.06);
  j.shear = rng.uniform(-0.15, 0.15);
  j.tx = rng.uniform(-1.8, 1.8);
  j.ty = rng.uniform(-1.8, 1.8);
  j.thick = rng.uniform(0.55, 1.05);
  j.ink = rng.uniform(0.75, 1.0);

  double canvas[kSide * kSide] = {0.0};
  for (const Stroke& s : glyphs()[digit]) draw_stroke(canvas, s, j);
  for (int k = 0; k < kSide * kSide; ++k) {
    double v = canvas[k] + rng.normal(0.0, 0.02);
    v = std::clamp(v, 0.0, 1.0);
    out[k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
}

void generate(std::uint64_t seed, std::size_t n, std::vector<std::uint8_t>& pixels,
              std::vector<std::uint8_t>& labels) {
  Rng rng(seed);
  pixels.resize(n * kSide * kSide);
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(rng.index(10));
    labels[i] = static_cast<std::uint8_t>(digit);
    render_digit(digit, rng, pixels.data() + i * kSide * kSide);
  }
}

}  // namespace

Dataset digits_dataset(std::uint64_t seed, std::size_t n, const std::string& split) {
  std::vector<std::uint8_t> pixels, labels;
  generate(seed, n, pixels, labels);
  Dataset d;
  d.split = split;
  d.num_classes = 10;
  d.geometry = ActShape{false, 0, 1, kSide, kSide};
  d.images = Tensor::matrix(n, kSide * kSide);
  const double inv = 1.0 / 255.0;
  for (std::size_t k = 0; k < pixels.size(); ++k) d.images[k] = pixels[k] * inv;
  d.labels.assign(labels.begin(), labels.end());
  return d;
}

void write_digits_idx(const std::string& images_path, const std::string& labels_path,
                      std::uint64_t seed, std::size_t n) {
  std::vector<std::uint8_t> pixels, labels;
  generate(seed, n, pixels, labels);
  save_idx(images_path, labels_path, pixels, static_cast<std::uint32_t>(n), kSide, kSide,
           labels);
}

}  // namespace nap::io
