#include "akb/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace akb::synth {

namespace {

using rgb = std::array<double, 3>;

rgb random_colour(rng_stream& rng) { return {255 * rng.uniform(), 255 * rng.uniform(), 255 * rng.uniform()}; }

// Bilinear value noise on a (cells + 1)^2 lattice, values in [-1, 1].
struct value_noise {
  int cells;
  std::vector<double> grid;
  value_noise(int c, rng_stream& rng) : cells(c), grid(static_cast<std::size_t>((c + 1) * (c + 1))) {
    for (auto& g : grid) g = 2 * rng.uniform() - 1;
  }
  double at(double u, double v) const {  // u, v in [0, 1]
    const double x = u * cells, y = v * cells;
    const int x0 = std::min(static_cast<int>(x), cells - 1), y0 = std::min(static_cast<int>(y), cells - 1);
    const double fx = x - x0, fy = y - y0;
    auto g = [&](int yy, int xx) { return grid[static_cast<std::size_t>(yy * (cells + 1) + xx)]; };
    const double top = g(y0, x0) * (1 - fx) + g(y0, x0 + 1) * fx;
    const double bot = g(y0 + 1, x0) * (1 - fx) + g(y0 + 1, x0 + 1) * fx;
    return top * (1 - fy) + bot * fy;
  }
};

}  // namespace

image scene(int height, int width, rng_stream& rng) {
  const std::size_t px = static_cast<std::size_t>(height) * width;
  std::vector<rgb> buf(px);

  // Background: two-colour blend along a random direction plus low-frequency waves.
  const rgb c0 = random_colour(rng), c1 = random_colour(rng);
  const double ang = 2 * std::numbers::pi * rng.uniform();
  const double dx = std::cos(ang), dy = std::sin(ang);
  struct wave { double fx, fy, phase; rgb amp; };
  std::vector<wave> waves(3);
  for (auto& w : waves) {
    w.fx = (rng.uniform() * 4 - 2) * 2 * std::numbers::pi;
    w.fy = (rng.uniform() * 4 - 2) * 2 * std::numbers::pi;
    w.phase = 2 * std::numbers::pi * rng.uniform();
    for (auto& a : w.amp) a = 10 * rng.uniform();
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width, v = (y + 0.5) / height;
      const double t = std::clamp(0.5 + (u - 0.5) * dx + (v - 0.5) * dy, 0.0, 1.0);
      auto& p = buf[static_cast<std::size_t>(y) * width + x];
      for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>(c)] = c0[static_cast<std::size_t>(c)] * (1 - t) + c1[static_cast<std::size_t>(c)] * t;
      for (const auto& w : waves) {
        const double s = std::sin(w.fx * u + w.fy * v + w.phase);
        for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>(c)] += w.amp[static_cast<std::size_t>(c)] * s;
      }
    }
  }

  // Shapes: ellipses and rotated rectangles, painter's order, soft edges.
  // Some carry a fine texture, so detail is concentrated in a few regions
  // and the rest of the frame stays smooth.
  const int shapes = 1 + static_cast<int>(rng.below(5));
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(), cy = rng.uniform();
    const double rx = 0.06 + 0.26 * rng.uniform(), ry = 0.06 + 0.26 * rng.uniform();
    const double rot = std::numbers::pi * rng.uniform();
    const double cr = std::cos(rot), sr = std::sin(rot);
    const rgb col = random_colour(rng);
    const double shade = 0.6 * rng.uniform() - 0.3;
    const double edge = 0.5 + 1.5 * rng.uniform();  // edge width in pixels
    const bool textured = rng.uniform() < 0.6;
    const double tex_amp = textured ? 15 + 35 * rng.uniform() : 0.0;
    const value_noise fine(16 + static_cast<int>(rng.below(17)), rng);
    const value_noise coarse(8, rng);
    const double stripe_f = 2 * std::numbers::pi * (4 + 8 * rng.uniform());
    const double stripe_mix = rng.uniform();
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double u = (x + 0.5) / width - cx, v = (y + 0.5) / height - cy;
        const double a = (u * cr + v * sr) / rx, b = (-u * sr + v * cr) / ry;
        // Signed distance in normalised units, roughly converted to pixels.
        const double d = ellipse ? std::sqrt(a * a + b * b) - 1.0 : std::max(std::abs(a), std::abs(b)) - 1.0;
        const double dpix = d * std::min(rx, ry) * std::min(width, height);
        const double alpha = std::clamp(0.5 - dpix / edge, 0.0, 1.0);
        if (alpha <= 0) continue;
        auto& p = buf[static_cast<std::size_t>(y) * width + x];
        const double lit = 1.0 + shade * a;
        double tex = 0.0;
        if (textured) {
          const double uu = (x + 0.5) / width, vv = (y + 0.5) / height;
          const double stripes = std::sin(stripe_f * (uu * cr + vv * sr) + 3 * coarse.at(uu, vv));
          tex = tex_amp * (stripe_mix * stripes + (1 - stripe_mix) * fine.at(uu, vv));
        }
        for (int c = 0; c < 3; ++c) {
          p[static_cast<std::size_t>(c)] =
              (1 - alpha) * p[static_cast<std::size_t>(c)] + alpha * (col[static_cast<std::size_t>(c)] * lit + tex);
        }
      }
    }
  }

  // Faint global grain.
  const double grain = 3 * rng.uniform();
  const value_noise grain_noise(32, rng);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double n = grain * grain_noise.at((x + 0.5) / width, (y + 0.5) / height);
      for (auto& ch : buf[static_cast<std::size_t>(y) * width + x]) ch += n;
    }
  }

  image img(height, width);
  auto out = img.data();
  for (std::size_t i = 0; i < px; ++i) {
    for (int c = 0; c < 3; ++c) {
      out[3 * i + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(std::clamp(buf[i][static_cast<std::size_t>(c)], 0.0, 255.0)));
    }
  }
  return img;
}

image dataset_image(std::uint64_t seed, std::uint64_t index, int size) {
  rng_stream rng(seed, {0x5C3E, index});
  return scene(size, size, rng);
}

}  // namespace akb::synth
