#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "seqrec/autograd.hpp"

namespace seqrec {

/// Checkpoint file layout:
///
///   seqrec-checkpoint 1
///   meta <key> <value>            (zero or more, value runs to end of line)
///   param <name> <d0xd1x...> <byte offset> <element count>
///   ...
///   end
///   <payload: little-endian IEEE-754 doubles, parameters back to back>
///
/// Offsets are relative to the first payload byte.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const std::string& meta_value(const std::string& key) const;
  const Tensor& tensor(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& meta,
                      const ParameterSet& params);

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into matching parameters; names and shapes must agree.
void load_parameters(const Checkpoint& ckpt, ParameterSet& params);

}  // namespace seqrec
