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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "odimo/common.hpp"

namespace odimo {

// Structured text config: '[type name]' section headers followed by
// 'key = value' lines; '#' starts a comment. Key order within a section is
// preserved; consumers reject keys they do not understand.
struct ConfigSection {
  std::string type;   // e.g. "run", "accelerator", "layer"
  std::string name;   // optional second token of the header
  std::vector<std::pair<std::string, std::string>> entries;
  int line = 0;  // header line, for error messages

  bool has(const std::string& key) const;
  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int_or(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;          // comma split
  std::vector<double> get_double_list(const std::string& key) const;

  // Throws if any key is outside `allowed`; catches config typos early.
  void check_keys(const std::vector<std::string>& allowed,
                  const std::string& context) const;
};

struct ConfigFile {
  std::string path;
  std::vector<ConfigSection> sections;

  std::vector<const ConfigSection*> sections_of(const std::string& type) const;
  const ConfigSection* find_one(const std::string& type) const;  // nullptr if absent
  const ConfigSection& require_one(const std::string& type) const;
};

ConfigFile parse_config_file(const std::string& path);
ConfigFile parse_config_text(const std::string& text, const std::string& origin);

}  // namespace odimo
