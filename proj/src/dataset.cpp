/*
 * Copyright 2026 The qshape Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <cmath>
#include <numbers>
#include <random>

#include "qshape/error.hpp"
#include "qshape/train.hpp"

namespace qshape {

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double t = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

void make_templates(const DatasetSpec& spec, Rng& rng, Tensor& out) {
  const std::size_t c = spec.channels, h = spec.height, w = spec.width;
  constexpr int kBlobs = 4;
  for (int cls = 0; cls < spec.classes; ++cls) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* img = out.data() + (static_cast<std::size_t>(cls) * c + ch) * h * w;
      for (int b = 0; b < kBlobs; ++b) {
        const double cy = rng.uniform(0.0, static_cast<double>(h));
        const double cx = rng.uniform(0.0, static_cast<double>(w));
        const double sigma = rng.uniform(1.0, 2.5);
        const double amp = rng.uniform() < 0.5 ? -1.0 : 1.0;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            img[y * w + x] += static_cast<float>(
                amp * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)));
          }
        }
      }
    }
    // Unit RMS over the whole class template.
    auto tpl = out.row(static_cast<std::size_t>(cls));
    double sq = 0.0;
    for (float v : tpl) sq += static_cast<double>(v) * v;
    const double rms = std::sqrt(sq / static_cast<double>(tpl.size()));
    for (float& v : tpl) v = static_cast<float>(v / rms);
  }
}

void fill_split(const DatasetSpec& spec, const Tensor& templates, Rng& rng,
                std::size_t per_class, Tensor& x, std::vector<int>& y) {
  const std::size_t n = per_class * static_cast<std::size_t>(spec.classes);
  const Shape chw{spec.channels, spec.height, spec.width};
  const std::size_t per = shape_numel(chw);
  x = Tensor({n, spec.channels, spec.height, spec.width});
  y.resize(n);
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i % spec.classes);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.engine()() % (i + 1)]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = order[i];
    y[i] = cls;
    const int dy = spec.max_shift > 0 ? rng.integer(-spec.max_shift, spec.max_shift) : 0;
    const int dx = spec.max_shift > 0 ? rng.integer(-spec.max_shift, spec.max_shift) : 0;
    const double amp = rng.uniform(1.0 - spec.amplitude_jitter, 1.0 + spec.amplitude_jitter);
    const Tensor shifted =
        shift_image(templates.row(static_cast<std::size_t>(cls)), chw, dy, dx);
    float* dst = x.data() + i * per;
    for (std::size_t j = 0; j < per; ++j) {
      dst[j] = static_cast<float>(amp * shifted[j] + spec.noise * rng.normal());
    }
  }
}

}  // namespace

Tensor shift_image(std::span<const float> image, const Shape& chw, int dy, int dx) {
  const std::size_t c = chw.at(0), h = chw.at(1), w = chw.at(2);
  if (image.size() != c * h * w) throw ShapeError("shift_image: size mismatch");
  Tensor out(chw);
  const auto wrap = [](long v, std::size_t n) {
    const long m = static_cast<long>(n);
    return static_cast<std::size_t>(((v % m) + m) % m);
  };
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = wrap(static_cast<long>(y) - dy, h);
        const std::size_t sx = wrap(static_cast<long>(x) - dx, w);
        out[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

ToyDataset generate_toy_dataset(const DatasetSpec& spec) {
  if (spec.classes < 2 || spec.channels == 0 || spec.height < 3 || spec.width < 3 ||
      spec.train_per_class == 0 || spec.test_per_class == 0 || spec.noise < 0.0 ||
      spec.max_shift < 0 || spec.amplitude_jitter < 0.0 || spec.amplitude_jitter >= 1.0) {
    throw InvalidArgument("invalid dataset spec");
  }
  Rng rng(spec.seed);
  ToyDataset d;
  d.spec = spec;
  d.templates = Tensor({static_cast<std::size_t>(spec.classes), spec.channels,
                        spec.height, spec.width});
  make_templates(spec, rng, d.templates);
  fill_split(spec, d.templates, rng, spec.train_per_class, d.train_x, d.train_y);
  fill_split(spec, d.templates, rng, spec.test_per_class, d.test_x, d.test_y);
  return d;
}

}  // namespace qshape
