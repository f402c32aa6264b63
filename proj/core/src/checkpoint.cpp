#include "seqrec/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace seqrec {
namespace {

constexpr const char* kMagic = "seqrec-checkpoint 1";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return out;
  }
}

std::string dims_string(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_dims(const std::string& text) {
  if (text == "scalar") return {};
  Shape shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoull(part));
  return shape;
}

}  // namespace

const std::string& Checkpoint::meta_value(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw Error("checkpoint has no meta key '" + key + "'");
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw Error("checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, std::string>>& meta,
                      const ParameterSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  out << kMagic << '\n';
  for (const auto& [k, v] : meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error("checkpoint meta entries must be single-line, key without spaces: " + k);
    }
    out << "meta " << k << ' ' << v << '\n';
  }
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    out << "param " << p.name << ' ' << dims_string(p.value.shape()) << ' ' << offset << ' '
        << p.value.size() << '\n';
    offset += p.value.size() * sizeof(double);
  }
  out << "end\n";
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : params[i].value.data()) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw Error("not a seqrec checkpoint: " + path.string());
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
    std::uint64_t count;
  };
  Checkpoint ckpt;
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta.emplace_back(key, value);
    } else if (kind == "param") {
      Entry e;
      std::string dims;
      ls >> e.name >> dims >> e.offset >> e.count;
      if (!ls) throw Error("malformed checkpoint manifest line: " + line);
      e.shape = parse_dims(dims);
      if (shape_size(e.shape) != e.count) throw Error("checkpoint shape/count mismatch: " + line);
      entries.push_back(std::move(e));
    } else {
      throw Error("unknown checkpoint manifest line: " + line);
    }
  }
  if (!ended) throw Error("checkpoint manifest not terminated");
  const std::streampos payload = in.tellg();
  for (const Entry& e : entries) {
    in.seekg(payload + static_cast<std::streamoff>(e.offset));
    std::vector<double> values(e.count);
    for (double& v : values) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof(bits));
      v = std::bit_cast<double>(to_little_endian(bits));
    }
    if (!in) throw Error("truncated checkpoint payload for " + e.name);
    ckpt.tensors.emplace_back(e.name, Tensor(e.shape, std::move(values)));
  }
  return ckpt;
}

void load_parameters(const Checkpoint& ckpt, ParameterSet& params) {
  if (ckpt.tensors.size() != params.size()) {
    throw Error("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const Tensor& t = ckpt.tensor(p.name);
    if (!t.same_shape(p.value)) {
      throw Error("checkpoint shape mismatch for " + p.name + ": " + shape_string(t.shape()) +
                  " vs " + shape_string(p.value.shape()));
    }
    p.value = t;
  }
}

}  // namespace seqrec
