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

#include <algorithm>
#include <cstdint>
#include <random>

namespace odimo {

// Single seeded generator threaded through every source of randomness
// (weight init, shuffling, synthetic data). Reruns with the same seed are
// byte-identical on the same binary.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(splitmix(seed)) {}

  uint64_t seed() const { return seed_; }

  // Deterministically derived sub-generator; salts keep independent
  // consumers (data gen, init, shuffling) from sharing a stream.
  Rng child(uint64_t salt) const { return Rng(splitmix(seed_ + 0x9e3779b97f4a7c15ULL * (salt + 1))); }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }

  double normal(double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(gen_);
  }

  int64_t randint(int64_t lo, int64_t hi_inclusive) {
    std::uniform_int_distribution<int64_t> d(lo, hi_inclusive);
    return d(gen_);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), gen_);
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace odimo
