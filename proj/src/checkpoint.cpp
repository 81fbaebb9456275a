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

#include "residrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace residrl {

void Checkpoint::add(const std::string& name, const VectorXd& data) {
  for (auto& s : sections)
    if (s.first == name)
      throw std::invalid_argument("duplicate checkpoint section " + name);
  sections.emplace_back(name, data);
}

bool Checkpoint::has(const std::string& name) const {
  for (auto& s : sections)
    if (s.first == name) return true;
  return false;
}

const VectorXd& Checkpoint::get(const std::string& name) const {
  for (auto& s : sections)
    if (s.first == name) return s.second;
  throw std::out_of_range("missing checkpoint section " + name);
}

uint64_t Checkpoint::hash() const {
  uint64_t h = 14695981039346656037ull;
  for (auto& s : sections) {
    for (char c : s.first) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h = fnv1a_combine(h, s.second);
  }
  return h;
}

std::string Checkpoint::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash()));
  return std::string(buf);
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header;
  header["sections"] = nlohmann::json::array();
  for (auto& s : sections)
    header["sections"].push_back(
        {{"name", s.first}, {"count", s.second.size()}});
  header["meta"] = meta;
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kMagic, 8);
  const uint32_t version = kVersion;
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  const uint64_t hlen = header_text.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  os.write(header_text.data(), static_cast<std::streamsize>(hlen));
  for (auto& s : sections)
    os.write(reinterpret_cast<const char*>(s.second.data()),
             static_cast<std::streamsize>(s.second.size() * sizeof(double)));
  if (!os) throw std::runtime_error("short write on " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kVersion) {
    std::ostringstream msg;
    msg << path << ": unsupported checkpoint version " << version;
    throw std::runtime_error(msg.str());
  }
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!is || hlen > (64u << 20))
    throw std::runtime_error(path + ": corrupt checkpoint header");
  std::string header_text(hlen, '\0');
  is.read(header_text.data(), static_cast<std::streamsize>(hlen));
  if (static_cast<uint64_t>(is.gcount()) != hlen)
    throw std::runtime_error(path + ": truncated checkpoint header");

  nlohmann::json header = nlohmann::json::parse(header_text);
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (auto& sec : header.at("sections")) {
    const std::string name = sec.at("name").get<std::string>();
    const auto count = sec.at("count").get<int64_t>();
    VectorXd data(count);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
      throw std::runtime_error(path + ": truncated section " + name);
    ck.sections.emplace_back(name, std::move(data));
  }
  return ck;
}

}  // namespace residrl
