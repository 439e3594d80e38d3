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

#pragma once

#include <string>
#include <vector>

#include "odimo/rng.hpp"
#include "odimo/tensor.hpp"

namespace odimo {

// Labeled image set with a recorded train/val split: the first
// `train_count` samples are training data, the rest validation.
//
// File layout ("ODD1"): magic | u32 train_count | ODT1 features | ODT1 labels.
struct Dataset {
  Tensor x;                 // [N,C,H,W], values in [0,1]
  std::vector<uint8_t> y;   // class labels
  int64_t train_count = 0;

  int64_t size() const { return x.defined() ? x.dim(0) : 0; }
  int64_t val_count() const { return size() - train_count; }
  int64_t num_classes() const;
};

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Deterministic synthetic classification data: per-class smooth random
// templates plus pixel noise and a brightness jitter, clipped to [0,1].
// Calibrated so a small CNN separates the classes comfortably.
Dataset gen_synthetic(int64_t classes, int64_t samples_per_class, int64_t image_size,
                      Rng& rng, double noise = 0.35, double val_fraction = 0.2);

// Gathers samples by index into a batch tensor and label vector.
std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds,
                                               const std::vector<int64_t>& indices);

// Shuffled train-set batch order for one epoch.
std::vector<std::vector<int64_t>> epoch_batches(const Dataset& ds, int64_t batch_size,
                                                Rng& rng);

}  // namespace odimo
