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

#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace residrl {

/// Flat `name = value` text document. One parameter per line, `#` comments,
/// and a single-level `include <path>` directive (paths relative to the
/// including file). Later lines override earlier ones, so an including file
/// can patch individual keys of an included one.
class KvConfig {
 public:
  KvConfig() = default;

  /// Parse a file. Throws KvParseError (with file:line context) on malformed
  /// lines, unreadable files, or nested includes deeper than one level.
  static KvConfig load(const std::string& path);

  /// Parse from a string (no include resolution). For tests.
  static KvConfig parse(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  /// Typed getters. The non-defaulted forms throw KvParseError when the key
  /// is missing or the value does not parse.
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list of integers.
  std::vector<long> get_int_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  const std::map<std::string, std::string>& values() const { return values_; }

  /// Directory of the file this config was loaded from ("" for parse()).
  /// Used to resolve relative paths referenced by values.
  const std::string& base_dir() const { return base_dir_; }

 private:
  void parse_into(const std::string& text, const std::string& origin, int depth);

  std::map<std::string, std::string> values_;
  std::string base_dir_;
};

/// Parse/validation failure with file and line context where available.
struct KvParseError : std::runtime_error {
  explicit KvParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace residrl
