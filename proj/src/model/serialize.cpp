// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>

#include "dfilm/model.hpp"

namespace dfilm {
namespace {

static_assert(std::endian::native == std::endian::little,
              "model files are written in host order; big-endian hosts need byte swaps");

constexpr char kMagic[8] = {'D', 'F', 'I', 'L', 'M', 'M', 'O', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kMaxRecords = 1u << 20;
constexpr std::uint64_t kMaxString = 1u << 24;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  }
  template <typename T>
  void put(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void string32(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    string32(name);
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(d);
    bytes(t.data(), t.size() * sizeof(double));
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw IoError("write to '" + path.string() + "' failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open model file '" + path.string() + "'");
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw IoError("model file '" + path_.string() + "' is truncated");
    }
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string string(std::uint64_t n) {
    if (n > kMaxString) throw IoError("model file: implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = string(get<std::uint32_t>());
    const auto rank = get<std::uint32_t>();
    if (rank < 1 || rank > 3) throw IoError("model file: tensor '" + name + "' has bad rank");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& d : shape) {
      const auto v = get<std::uint64_t>();
      if (v == 0 || v > kMaxString) throw IoError("model file: tensor '" + name + "' has bad dims");
      d = static_cast<std::size_t>(v);
      total *= v;
      if (total > kMaxString) throw IoError("model file: tensor '" + name + "' is too large");
    }
    Tensor t(shape);
    bytes(t.data(), t.size() * sizeof(double));
    return {std::move(name), std::move(t)};
  }
  bool at_end() { return in_.peek() == std::ifstream::traits_type::eof(); }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

std::string state_name(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "." + what;
}

}  // namespace

void save_model(const Model& m, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kVersion);
  const std::string cfg = config_to_json(m.config);
  w.put<std::uint64_t>(cfg.size());
  w.bytes(cfg.data(), cfg.size());
  w.put<std::uint64_t>(m.params.size());
  for (const auto& e : m.params.entries()) w.tensor(e.name, e.value);
  w.put<std::uint64_t>(2 * m.bn.size());
  for (std::size_t l = 0; l < m.bn.size(); ++l) {
    w.tensor(state_name(l + 1, "running_mean"), m.bn[l].running_mean);
    w.tensor(state_name(l + 1, "running_var"), m.bn[l].running_var);
  }
  w.finish(path);
}

Model load_model(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError("'" + path.string() + "' is not a model file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw IoError("unsupported model file version " + std::to_string(version));
  }
  const ModelConfig config = config_from_json(r.string(r.get<std::uint64_t>()));

  // Build the skeleton, then overwrite every tensor; names and shapes must agree.
  Model m = build_model(config, 0);
  const auto count = r.get<std::uint64_t>();
  if (count != m.params.size()) {
    throw IoError("model file has " + std::to_string(count) + " parameters, config implies " +
                  std::to_string(m.params.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    auto [name, t] = r.tensor();
    if (!m.params.contains(name)) throw IoError("model file: unexpected parameter '" + name + "'");
    Tensor& dst = m.params.value(name);
    if (dst.shape() != t.shape()) {
      throw IoError("model file: parameter '" + name + "' has shape " +
                    shape_to_string(t.shape()) + ", expected " + shape_to_string(dst.shape()));
    }
    dst = std::move(t);
  }
  const auto states = r.get<std::uint64_t>();
  if (states != 2 * m.bn.size() || states > kMaxRecords) {
    throw IoError("model file: wrong number of state tensors");
  }
  for (std::size_t l = 0; l < m.bn.size(); ++l) {
    for (const char* what : {"running_mean", "running_var"}) {
      auto [name, t] = r.tensor();
      if (name != state_name(l + 1, what)) {
        throw IoError("model file: expected state '" + state_name(l + 1, what) + "', got '" +
                      name + "'");
      }
      Tensor& dst = std::string(what) == "running_mean" ? m.bn[l].running_mean
                                                        : m.bn[l].running_var;
      if (dst.shape() != t.shape()) throw IoError("model file: state '" + name + "' shape");
      dst = std::move(t);
    }
    m.bn[l].validate();
  }
  if (!r.at_end()) throw IoError("model file has trailing bytes");
  for (const auto& e : m.params.entries()) {
    if (!e.value.all_finite()) throw IoError("model file: non-finite values in '" + e.name + "'");
  }
  return m;
}

}  // namespace dfilm
