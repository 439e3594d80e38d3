// Copyright 2026 The ODiMO Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "odimo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "odimo/tensor_io.hpp"

namespace odimo {

namespace {
constexpr char kDatasetMagic[4] = {'O', 'D', 'D', '1'};
}

int64_t Dataset::num_classes() const {
  uint8_t mx = 0;
  for (uint8_t v : y) mx = std::max(mx, v);
  return static_cast<int64_t>(mx) + 1;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  ODIMO_CHECK(ds.x.defined() && ds.x.rank() == 4, "dataset features must be [N,C,H,W]");
  ODIMO_CHECK(static_cast<int64_t>(ds.y.size()) == ds.size(),
              strcat_msg("dataset has ", ds.size(), " samples but ", ds.y.size(), " labels"));
  ODIMO_CHECK(ds.train_count >= 0 && ds.train_count <= ds.size(),
              "train_count outside [0, N]");
  std::ofstream os(path, std::ios::binary);
  ODIMO_CHECK(os.good(), strcat_msg("cannot open ", path, " for writing"));
  os.write(kDatasetMagic, 4);
  uint8_t counts[4];
  for (int i = 0; i < 4; ++i)
    counts[i] = static_cast<uint8_t>((static_cast<uint32_t>(ds.train_count) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(counts), 4);
  write_odt(os, to_raw(ds.x));
  write_odt(os, raw_from_u8({static_cast<int64_t>(ds.y.size())}, ds.y));
  ODIMO_CHECK(os.good(), strcat_msg("write failed for ", path));
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ODIMO_CHECK(is.good(), strcat_msg("cannot open dataset ", path));
  char magic[4];
  is.read(magic, 4);
  ODIMO_CHECK(is.good() && std::memcmp(magic, kDatasetMagic, 4) == 0,
              strcat_msg(path, ": bad dataset magic (expected ODD1)"));
  uint8_t counts[4];
  is.read(reinterpret_cast<char*>(counts), 4);
  ODIMO_CHECK(is.good(), strcat_msg(path, ": truncated header"));
  uint32_t train_count = 0;
  for (int i = 0; i < 4; ++i) train_count |= static_cast<uint32_t>(counts[i]) << (8 * i);

  Dataset ds;
  ds.x = from_raw(read_odt(is));
  ODIMO_CHECK(ds.x.rank() == 4, strcat_msg(path, ": features must be rank-4, got ",
                                           shape_str(ds.x.shape())));
  ds.y = u8_from_raw(read_odt(is));
  ODIMO_CHECK(static_cast<int64_t>(ds.y.size()) == ds.x.dim(0),
              strcat_msg(path, ": ", ds.x.dim(0), " samples but ", ds.y.size(), " labels"));
  ds.train_count = train_count;
  ODIMO_CHECK(ds.train_count <= ds.size(), strcat_msg(path, ": train_count out of range"));
  return ds;
}

Dataset gen_synthetic(int64_t classes, int64_t samples_per_class, int64_t image_size,
                      Rng& rng, double noise, double val_fraction) {
  ODIMO_CHECK(classes >= 2 && classes <= 256, "classes must be in [2,256]");
  ODIMO_CHECK(samples_per_class >= 2 && image_size >= 4, "dataset too small");

  // Smooth per-class templates: coarse random grids, bilinearly upsampled.
  const int64_t coarse = 4;
  std::vector<std::vector<double>> templates(static_cast<size_t>(classes));
  for (auto& tpl : templates) {
    std::vector<double> grid(static_cast<size_t>(coarse * coarse));
    for (auto& g : grid) g = rng.uniform(-1.0, 1.0);
    tpl.resize(static_cast<size_t>(image_size * image_size));
    for (int64_t yy = 0; yy < image_size; ++yy)
      for (int64_t xx = 0; xx < image_size; ++xx) {
        const double gy = static_cast<double>(yy) / static_cast<double>(image_size - 1) *
                          static_cast<double>(coarse - 1);
        const double gx = static_cast<double>(xx) / static_cast<double>(image_size - 1) *
                          static_cast<double>(coarse - 1);
        const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(gy), coarse - 2);
        const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(gx), coarse - 2);
        const double fy = gy - static_cast<double>(y0), fx = gx - static_cast<double>(x0);
        const double v00 = grid[static_cast<size_t>(y0 * coarse + x0)];
        const double v01 = grid[static_cast<size_t>(y0 * coarse + x0 + 1)];
        const double v10 = grid[static_cast<size_t>((y0 + 1) * coarse + x0)];
        const double v11 = grid[static_cast<size_t>((y0 + 1) * coarse + x0 + 1)];
        tpl[static_cast<size_t>(yy * image_size + xx)] =
            (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
      }
  }

  const int64_t total = classes * samples_per_class;
  Dataset ds;
  ds.x = Tensor::zeros({total, 1, image_size, image_size});
  ds.y.resize(static_cast<size_t>(total));

  // Interleave classes so the recorded split is stratified.
  int64_t sample = 0;
  for (int64_t s = 0; s < samples_per_class; ++s)
    for (int64_t c = 0; c < classes; ++c, ++sample) {
      ds.y[static_cast<size_t>(sample)] = static_cast<uint8_t>(c);
      const double gain = rng.uniform(0.8, 1.2);
      real* px = ds.x.data().data() + sample * image_size * image_size;
      const auto& tpl = templates[static_cast<size_t>(c)];
      for (int64_t i = 0; i < image_size * image_size; ++i) {
        const double v =
            0.5 + 0.35 * gain * tpl[static_cast<size_t>(i)] + noise * rng.normal(0.0, 1.0) * 0.5;
        px[i] = static_cast<real>(std::clamp(v, 0.0, 1.0));
      }
    }

  ds.train_count = total - static_cast<int64_t>(std::round(val_fraction * static_cast<double>(total)));
  return ds;
}

std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds,
                                               const std::vector<int64_t>& indices) {
  const int64_t per = ds.x.size() / ds.size();
  Tensor batch = Tensor::zeros({static_cast<int64_t>(indices.size()), ds.x.dim(1),
                                ds.x.dim(2), ds.x.dim(3)});
  std::vector<int> labels(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    ODIMO_CHECK(indices[i] >= 0 && indices[i] < ds.size(), "batch index out of range");
    std::memcpy(batch.data().data() + static_cast<int64_t>(i) * per,
                ds.x.data().data() + indices[i] * per, sizeof(real) * static_cast<size_t>(per));
    labels[i] = ds.y[static_cast<size_t>(indices[i])];
  }
  return {batch, labels};
}

std::vector<std::vector<int64_t>> epoch_batches(const Dataset& ds, int64_t batch_size,
                                                Rng& rng) {
  std::vector<int64_t> order(static_cast<size_t>(ds.train_count));
  for (int64_t i = 0; i < ds.train_count; ++i) order[static_cast<size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < ds.train_count; start += batch_size) {
    const int64_t end = std::min(ds.train_count, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace odimo
