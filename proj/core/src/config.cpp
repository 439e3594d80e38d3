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

#include "odimo/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace odimo {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

bool ConfigSection::has(const std::string& key) const {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const auto& e) { return e.first == key; });
}

std::string ConfigSection::get(const std::string& key) const {
  for (const auto& e : entries)
    if (e.first == key) return e.second;
  fail(strcat_msg("missing key '", key, "' in section [", type,
                  name.empty() ? "" : " " + name, "]"));
}

std::string ConfigSection::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

int64_t ConfigSection::get_int(const std::string& key) const {
  const std::string v = get(key);
  char* end = nullptr;
  const long long r = std::strtoll(v.c_str(), &end, 10);
  ODIMO_CHECK(end && *end == '\0' && !v.empty(),
              strcat_msg("key '", key, "' = '", v, "' is not an integer"));
  return r;
}

int64_t ConfigSection::get_int_or(const std::string& key, int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double ConfigSection::get_double(const std::string& key) const {
  const std::string v = get(key);
  char* end = nullptr;
  const double r = std::strtod(v.c_str(), &end);
  ODIMO_CHECK(end && *end == '\0' && !v.empty(),
              strcat_msg("key '", key, "' = '", v, "' is not a number"));
  return r;
}

double ConfigSection::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool ConfigSection::get_bool_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(strcat_msg("key '", key, "' = '", v, "' is not a boolean"));
}

std::vector<std::string> ConfigSection::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> ConfigSection::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : get_list(key)) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    ODIMO_CHECK(end && *end == '\0', strcat_msg("key '", key, "': '", s, "' is not a number"));
    out.push_back(v);
  }
  return out;
}

void ConfigSection::check_keys(const std::vector<std::string>& allowed,
                               const std::string& context) const {
  for (const auto& e : entries) {
    if (std::find(allowed.begin(), allowed.end(), e.first) == allowed.end())
      fail(strcat_msg(context, ": unknown key '", e.first, "' in section [", type,
                      name.empty() ? "" : " " + name, "] (line ", line, ")"));
  }
}

std::vector<const ConfigSection*> ConfigFile::sections_of(const std::string& type) const {
  std::vector<const ConfigSection*> out;
  for (const auto& s : sections)
    if (s.type == type) out.push_back(&s);
  return out;
}

const ConfigSection* ConfigFile::find_one(const std::string& type) const {
  auto matches = sections_of(type);
  ODIMO_CHECK(matches.size() <= 1,
              strcat_msg(path, ": multiple [", type, "] sections"));
  return matches.empty() ? nullptr : matches[0];
}

const ConfigSection& ConfigFile::require_one(const std::string& type) const {
  const ConfigSection* s = find_one(type);
  ODIMO_CHECK(s != nullptr, strcat_msg(path, ": missing [", type, "] section"));
  return *s;
}

ConfigFile parse_config_text(const std::string& text, const std::string& origin) {
  ConfigFile f;
  f.path = origin;
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  ConfigSection* current = nullptr;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      ODIMO_CHECK(line.back() == ']',
                  strcat_msg(origin, ":", lineno, ": unterminated section header"));
      std::string header = trim(line.substr(1, line.size() - 2));
      ODIMO_CHECK(!header.empty(), strcat_msg(origin, ":", lineno, ": empty section header"));
      ConfigSection s;
      const size_t sp = header.find_first_of(" \t");
      if (sp == std::string::npos) {
        s.type = header;
      } else {
        s.type = header.substr(0, sp);
        s.name = trim(header.substr(sp));
      }
      s.line = lineno;
      f.sections.push_back(std::move(s));
      current = &f.sections.back();
      continue;
    }
    const size_t eq = line.find('=');
    ODIMO_CHECK(eq != std::string::npos,
                strcat_msg(origin, ":", lineno, ": expected 'key = value', got '", line, "'"));
    ODIMO_CHECK(current != nullptr,
                strcat_msg(origin, ":", lineno, ": key outside of any section"));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    ODIMO_CHECK(!key.empty(), strcat_msg(origin, ":", lineno, ": empty key"));
    for (const auto& e : current->entries)
      ODIMO_CHECK(e.first != key,
                  strcat_msg(origin, ":", lineno, ": duplicate key '", key, "'"));
    current->entries.emplace_back(key, value);
  }
  return f;
}

ConfigFile parse_config_file(const std::string& path) {
  std::ifstream is(path);
  ODIMO_CHECK(is.good(), strcat_msg("cannot open config file ", path));
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace odimo
