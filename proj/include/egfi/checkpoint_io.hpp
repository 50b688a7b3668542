// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "egfi/tape.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace egfi {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` text. '#' starts a comment; blank lines are ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text, const std::string& origin);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

struct NamedMatrix {
  std::string name;
  Matrix value;
};

/// Tensor directory layout:
///   <dir>/<index>          one "name<TAB>rows<TAB>cols" line per tensor
///   <dir>/<subdir>/<name>.f32  rows*cols little-endian float32, row-major
void write_tensors(const std::filesystem::path& dir, const std::vector<NamedMatrix>& tensors,
                   const std::string& index = "tensors.tsv", const std::string& subdir = "tensors");
std::vector<NamedMatrix> read_tensors(const std::filesystem::path& dir, const std::string& index = "tensors.tsv",
                                      const std::string& subdir = "tensors");

std::vector<NamedMatrix> snapshot(const ParamStore& store);
/// Copies tensors into `store` by name. Missing, unexpected or mis-shaped
/// tensors are reported together in one CheckpointError.
void assign(ParamStore& store, const std::vector<NamedMatrix>& tensors);

/// Rounds every value to the nearest float32, the precision checkpoints keep.
void round_to_float32(ParamStore& store);

}  // namespace egfi
