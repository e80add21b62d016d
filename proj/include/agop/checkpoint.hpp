#pragma once

// Checkpoints: <stem>.bin holds the raw little-endian f64 values back to back;
// <stem>.manifest lists "meta <key> <value>" lines followed by one
// "tensor <name> <rows> <cols> <offset>" line per tensor (offset in values).

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agop/toymodel.hpp"
#include "agop/transformer.hpp"

namespace agop {

static_assert(std::endian::native == std::endian::little, "checkpoint files assume a little-endian host");

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<TensorSlot> tensors;
  std::vector<double> data;

  const TensorSlot& find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw std::out_of_range("checkpoint has no tensor '" + name + "'");
  }
  Matrix matrix(const std::string& name) const {
    const auto& t = find(name);
    return ConstMatrixMap(data.data() + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }
};

inline void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ck) {
  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  {
    std::ofstream bin(stem.string() + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + stem.string() + ".bin");
    bin.write(reinterpret_cast<const char*>(ck.data.data()), static_cast<std::streamsize>(ck.data.size() * sizeof(double)));
  }
  std::ofstream man(stem.string() + ".manifest");
  if (!man) throw std::runtime_error("cannot write " + stem.string() + ".manifest");
  for (const auto& [k, v] : ck.meta) man << "meta " << k << ' ' << v << '\n';
  for (const auto& t : ck.tensors) man << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << ' ' << t.offset << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  Checkpoint ck;
  std::ifstream man(stem.string() + ".manifest");
  if (!man) throw std::runtime_error("cannot open " + stem.string() + ".manifest");
  std::string line;
  std::size_t lineno = 0, total = 0;
  while (std::getline(man, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      ck.meta[k] = v;
    } else if (kind == "tensor") {
      TensorSlot t;
      if (!(ls >> t.name >> t.rows >> t.cols >> t.offset))
        throw std::runtime_error("manifest line " + std::to_string(lineno) + " is malformed");
      total = std::max(total, t.offset + t.size());
      ck.tensors.push_back(t);
    } else {
      throw std::runtime_error("manifest line " + std::to_string(lineno) + ": unknown record '" + kind + "'");
    }
  }
  const std::string bytes = read_file_bytes(stem.string() + ".bin");
  if (bytes.size() != total * sizeof(double))
    throw std::runtime_error("checkpoint data holds " + std::to_string(bytes.size()) + " bytes, manifest needs " +
                             std::to_string(total * sizeof(double)));
  ck.data.resize(total);
  std::memcpy(ck.data.data(), bytes.data(), bytes.size());
  return ck;
}

inline Checkpoint to_checkpoint(const TinyTransformer& m) {
  Checkpoint ck;
  const auto& s = m.shape();
  ck.meta = {{"kind", "transformer"},       {"layers", std::to_string(s.layers)},
             {"d_model", std::to_string(s.d_model)}, {"vocab", std::to_string(s.vocab)},
             {"context", std::to_string(s.context)}, {"target_N", std::to_string(s.target_n)}};
  ck.tensors = m.slots();
  ck.data.assign(m.parameters().begin(), m.parameters().end());
  return ck;
}

inline TinyTransformer transformer_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.count("kind") == 0 || ck.meta.at("kind") != "transformer")
    throw std::invalid_argument("checkpoint is not a transformer");
  const auto num = [&](const char* k) { return static_cast<std::size_t>(std::stoull(ck.meta.at(k))); };
  TinyTransformer m(make_shape(num("layers"), num("d_model"), num("target_N"), num("vocab"), num("context")));
  for (const auto& t : m.slots()) {
    const auto& src = ck.find(t.name);
    if (src.rows != t.rows || src.cols != t.cols) throw std::invalid_argument("tensor '" + t.name + "' has the wrong shape");
    std::copy_n(ck.data.begin() + static_cast<std::ptrdiff_t>(src.offset), t.size(),
                m.parameters().begin() + static_cast<std::ptrdiff_t>(t.offset));
  }
  return m;
}

inline Checkpoint to_checkpoint(const TiedAutoencoder& m) {
  Checkpoint ck;
  ck.meta = {{"kind", "tied_autoencoder"}, {"m", std::to_string(m.bottleneck())}, {"d", std::to_string(m.dim())}};
  ck.tensors = {{"W", m.bottleneck(), m.dim(), 0}, {"b", 1, m.dim(), m.bottleneck() * m.dim()}};
  ck.data.assign(m.w.data(), m.w.data() + m.w.size());
  ck.data.insert(ck.data.end(), m.b.data(), m.b.data() + m.b.size());
  return ck;
}

inline TiedAutoencoder autoencoder_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.count("kind") == 0 || ck.meta.at("kind") != "tied_autoencoder")
    throw std::invalid_argument("checkpoint is not a tied autoencoder");
  const Matrix b = ck.matrix("b");
  return TiedAutoencoder(ck.matrix("W"), b.row(0).transpose());
}

}  // namespace agop
