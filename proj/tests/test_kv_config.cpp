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

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "residrl/kv_config.hpp"

using residrl::KvConfig;
using residrl::KvParseError;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("residrl_kv_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string write(const std::string& name, const std::string& text) {
    auto p = path / name;
    std::ofstream os(p);
    os << text;
    return p.string();
  }
};

}  // namespace

TEST_CASE("parses names, comments, and blank lines") {
  KvConfig kv = KvConfig::parse(
      "# header comment\n"
      "\n"
      "alpha = 1.5\n"
      "name = hello world\n"
      "flag = true\n"
      "count = 42\n",
      "<test>");
  CHECK(kv.get_double("alpha") == 1.5);
  CHECK(kv.get_string("name") == "hello world");
  CHECK(kv.get_bool("flag"));
  CHECK(kv.get_int("count") == 42);
  CHECK_FALSE(kv.has("missing"));
  CHECK(kv.get_double("missing", -2.0) == -2.0);
}

TEST_CASE("later assignments override earlier ones") {
  KvConfig kv = KvConfig::parse("a = 1\na = 2\n", "<test>");
  CHECK(kv.get_int("a") == 2);
}

TEST_CASE("integer list values") {
  KvConfig kv = KvConfig::parse("sizes = 256, 256\none = 7\n", "<test>");
  auto sizes = kv.get_int_list("sizes");
  REQUIRE(sizes.size() == 2);
  CHECK(sizes[0] == 256);
  CHECK(sizes[1] == 256);
  CHECK(kv.get_int_list("one").size() == 1);
}

TEST_CASE("malformed lines carry file and line context") {
  CHECK_THROWS_AS(KvConfig::parse("just a bare line\n", "conf.txt"), KvParseError);
  try {
    KvConfig::parse("ok = 1\nbroken line\n", "conf.txt");
    FAIL("expected parse error");
  } catch (const KvParseError& e) {
    std::string msg = e.what();
    CHECK(msg.find("conf.txt") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
  }
  KvConfig typed = KvConfig::parse("v = notanumber\n", "<t>");
  CHECK_THROWS_AS(typed.get_double("v"), KvParseError);
}

TEST_CASE("include pulls in a sibling file with local overrides winning") {
  TempDir dir;
  dir.write("base.conf", "a = 1\nb = 2\n");
  std::string child =
      dir.write("child.conf", "include base.conf\nb = 3\nc = 4\n");
  KvConfig kv = KvConfig::load(child);
  CHECK(kv.get_int("a") == 1);
  CHECK(kv.get_int("b") == 3);
  CHECK(kv.get_int("c") == 4);
}

TEST_CASE("nested includes are rejected") {
  TempDir dir;
  dir.write("leaf.conf", "x = 1\n");
  dir.write("mid.conf", "include leaf.conf\n");
  std::string top = dir.write("top.conf", "include mid.conf\n");
  CHECK_THROWS_AS(KvConfig::load(top), KvParseError);
}
