// SPDX-License-Identifier: Apache-2.0
#include "egfi/checkpoint_io.hpp"

#include "egfi/corpus.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace egfi {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void put_f32_le(std::string& out, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

float get_f32_le(const unsigned char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CheckpointError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw CheckpointError(origin + ":" + std::to_string(n) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str(), path.string());
}

void write_key_values(const fs::path& path, const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  write_file_atomic(path, out);
}

void write_tensors(const fs::path& dir, const std::vector<NamedMatrix>& tensors, const std::string& index,
                   const std::string& subdir) {
  fs::create_directories(dir / subdir);
  std::string idx;
  for (const auto& t : tensors) {
    idx += t.name + "\t" + std::to_string(t.value.rows()) + "\t" + std::to_string(t.value.cols()) + "\n";
    std::string bytes;
    bytes.reserve(static_cast<std::size_t>(t.value.size()) * 4);
    for (Eigen::Index i = 0; i < t.value.size(); ++i) put_f32_le(bytes, static_cast<float>(t.value.data()[i]));
    write_file_atomic(dir / subdir / (t.name + ".f32"), bytes);
  }
  write_file_atomic(dir / index, idx);
}

std::vector<NamedMatrix> read_tensors(const fs::path& dir, const std::string& index, const std::string& subdir) {
  std::ifstream in(dir / index);
  if (!in) throw CheckpointError((dir / index).string() + ": cannot open tensor index");
  std::vector<NamedMatrix> out;
  std::vector<std::string> bad;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name;
    long rows = -1, cols = -1;
    if (!std::getline(fields, name, '\t') || !(fields >> rows >> cols) || rows < 0 || cols < 0)
      throw CheckpointError((dir / index).string() + ": malformed line '" + line + "'");
    const fs::path file = dir / subdir / (name + ".f32");
    std::ifstream bin(file, std::ios::binary);
    if (!bin) {
      bad.push_back(name + " (missing file)");
      continue;
    }
    std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    if (bytes.size() != static_cast<std::size_t>(rows * cols * 4)) {
      bad.push_back(name + " (expected " + std::to_string(rows * cols * 4) + " bytes, found " +
                    std::to_string(bytes.size()) + ")");
      continue;
    }
    Matrix m(rows, cols);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(get_f32_le(p + 4 * i));
    out.push_back({name, std::move(m)});
  }
  if (!bad.empty()) {
    std::string msg = dir.string() + ": unreadable tensors:";
    for (const auto& b : bad) msg += " " + b;
    throw CheckpointError(msg);
  }
  return out;
}

std::vector<NamedMatrix> snapshot(const ParamStore& store) {
  std::vector<NamedMatrix> out;
  for (const auto& p : store) out.push_back({p->name, p->value});
  return out;
}

void assign(ParamStore& store, const std::vector<NamedMatrix>& tensors) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& t : tensors) {
    seen.insert(t.name);
    Parameter* p = store.find(t.name);
    if (p == nullptr) {
      problems.push_back(t.name + " (unexpected)");
    } else if (p->value.rows() != t.value.rows() || p->value.cols() != t.value.cols()) {
      problems.push_back(t.name + " (shape " + std::to_string(t.value.rows()) + "x" +
                         std::to_string(t.value.cols()) + ", expected " + std::to_string(p->value.rows()) + "x" +
                         std::to_string(p->value.cols()) + ")");
    }
  }
  for (const auto& p : store)
    if (!seen.contains(p->name)) problems.push_back(p->name + " (missing)");
  if (!problems.empty()) {
    std::string msg = "tensor mismatch:";
    for (const auto& s : problems) msg += " " + s;
    throw CheckpointError(msg);
  }
  for (const auto& t : tensors) store.get(t.name).value = t.value;
}

void round_to_float32(ParamStore& store) {
  for (auto& p : store)
    p->value = p->value.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

}  // namespace egfi
