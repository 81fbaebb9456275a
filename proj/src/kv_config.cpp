// Copyright 2026 The residrl Authors
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

#include "residrl/kv_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace residrl {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw KvParseError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

KvConfig KvConfig::load(const std::string& path) {
  KvConfig cfg;
  cfg.base_dir_ = std::filesystem::path(path).parent_path().string();
  cfg.parse_into(read_file(path), path, 0);
  return cfg;
}

KvConfig KvConfig::parse(const std::string& text, const std::string& origin) {
  KvConfig cfg;
  cfg.parse_into(text, origin, 0);
  return cfg;
}

void KvConfig::parse_into(const std::string& text, const std::string& origin, int depth) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    lineno++;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.rfind("include ", 0) == 0) {
      if (depth >= 1) {
        throw KvParseError(origin + ":" + std::to_string(lineno) +
                           ": includes may not nest");
      }
      std::string inc = trim(t.substr(8));
      std::filesystem::path p(inc);
      if (p.is_relative() && !base_dir_.empty()) p = std::filesystem::path(base_dir_) / p;
      parse_into(read_file(p.string()), p.string(), depth + 1);
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw KvParseError(origin + ":" + std::to_string(lineno) +
                         ": expected `name = value`, got: " + t);
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw KvParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    values_[key] = value;
  }
}

std::string KvConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw KvParseError("missing config key: " + key);
  return it->second;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  char* end = nullptr;
  double d = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0') {
    throw KvParseError("config key `" + key + "`: not a number: " + v);
  }
  return d;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long KvConfig::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  char* end = nullptr;
  long n = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0') {
    throw KvParseError("config key `" + key + "`: not an integer: " + v);
  }
  return n;
}

long KvConfig::get_int(const std::string& key, long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool KvConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw KvParseError("config key `" + key + "`: not a boolean: " + v);
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::vector<long> KvConfig::get_int_list(const std::string& key) const {
  std::vector<long> out;
  std::istringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string t = trim(item);
    if (t.empty()) continue;
    char* end = nullptr;
    long n = std::strtol(t.c_str(), &end, 10);
    if (end == t.c_str() || *end != '\0') {
      throw KvParseError("config key `" + key + "`: not an integer list element: " + t);
    }
    out.push_back(n);
  }
  if (out.empty()) throw KvParseError("config key `" + key + "`: empty list");
  return out;
}

}  // namespace residrl
