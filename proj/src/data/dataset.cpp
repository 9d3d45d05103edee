// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "dfilm/data.hpp"
#include "dfilm/rng.hpp"

namespace dfilm {

using nlohmann::json;

void Dataset::validate() const {
  if (feature_dim == 0 || num_classes == 0) {
    throw ConfigError("dataset: feature_dim and num_classes must be positive");
  }
  for (const auto& u : utterances) {
    if (u.labels.empty()) throw ConfigError("utterance '" + u.id + "' has no frames");
    if (u.frames.shape() != Shape{u.labels.size(), feature_dim}) {
      throw ConfigError("utterance '" + u.id + "': frames " + shape_to_string(u.frames.shape()) +
                        " do not match " + std::to_string(u.labels.size()) + " labels x " +
                        std::to_string(feature_dim) + " features");
    }
    for (int l : u.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
        throw ConfigError("utterance '" + u.id + "': label " + std::to_string(l) +
                          " out of range [0," + std::to_string(num_classes) + ")");
      }
    }
    if (!u.frames.all_finite()) {
      throw NumericError("utterance '" + u.id + "' has a non-finite feature");
    }
  }
}

std::size_t Dataset::total_frames() const noexcept {
  std::size_t n = 0;
  for (const auto& u : utterances) n += u.length();
  return n;
}

std::vector<std::string> Dataset::dialects() const {
  std::vector<std::string> out;
  for (const auto& u : utterances) {
    if (std::find(out.begin(), out.end(), u.dialect) == out.end()) out.push_back(u.dialect);
  }
  return out;
}

Dataset Dataset::filter_dialect(const std::string& dialect) const {
  Dataset d{feature_dim, num_classes, {}};
  for (const auto& u : utterances) {
    if (u.dialect == dialect) d.utterances.push_back(u);
  }
  return d;
}

Dataset Dataset::exclude_dialects(const std::vector<std::string>& names) const {
  Dataset d{feature_dim, num_classes, {}};
  for (const auto& u : utterances) {
    if (std::find(names.begin(), names.end(), u.dialect) == names.end()) {
      d.utterances.push_back(u);
    }
  }
  return d;
}

DatasetManifest DatasetManifest::of(const Dataset& d) {
  DatasetManifest m;
  for (const auto& name : d.dialects()) m.dialects.push_back({name, 0, 0});
  for (const auto& u : d.utterances) {
    auto it = std::find_if(m.dialects.begin(), m.dialects.end(),
                           [&](const DialectCount& c) { return c.dialect == u.dialect; });
    ++it->utterances;
    it->frames += u.length();
  }
  m.total_utterances = d.utterances.size();
  m.total_frames = d.total_frames();
  return m;
}

bool DatasetManifest::matches(const Dataset& d) const {
  const DatasetManifest actual = of(d);
  if (actual.total_utterances != total_utterances || actual.total_frames != total_frames ||
      actual.dialects.size() != dialects.size()) {
    return false;
  }
  for (std::size_t i = 0; i < dialects.size(); ++i) {
    if (actual.dialects[i].dialect != dialects[i].dialect ||
        actual.dialects[i].utterances != dialects[i].utterances ||
        actual.dialects[i].frames != dialects[i].frames) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Files

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  json header = {{"format", "dfilm-dataset"},
                 {"version", 1},
                 {"feature_dim", d.feature_dim},
                 {"num_classes", d.num_classes},
                 {"utterances", d.utterances.size()}};
  out << header.dump() << '\n';
  for (const auto& u : d.utterances) {
    json frames = json::array();
    for (std::size_t t = 0; t < u.length(); ++t) {
      const auto row = u.frames.row(t);
      frames.push_back(std::vector<double>(row.begin(), row.end()));
    }
    json rec = {{"id", u.id}, {"dialect", u.dialect}, {"labels", u.labels}, {"frames", frames}};
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

json parse_line(const std::string& line, std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line_no);
  }
}

template <typename T>
T field(const json& j, const char* key, std::size_t line_no) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError(std::string("missing field '") + key + "'", line_no);
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad field '") + key + "': " + e.what(), line_no);
  }
}

Utterance parse_record(const json& rec, std::size_t feature_dim, std::size_t num_classes,
                       std::size_t line_no) {
  Utterance u;
  u.id = field<std::string>(rec, "id", line_no);
  u.dialect = field<std::string>(rec, "dialect", line_no);
  u.labels = field<std::vector<int>>(rec, "labels", line_no);
  if (!rec.contains("frames") || !rec["frames"].is_array()) {
    throw ParseError("missing field 'frames'", line_no);
  }
  const json& frames = rec["frames"];
  if (u.labels.empty()) throw ParseError("utterance has no frames", line_no);
  if (frames.size() != u.labels.size()) {
    throw ParseError("frames/labels length mismatch (" + std::to_string(frames.size()) +
                         " vs " + std::to_string(u.labels.size()) + ")",
                     line_no);
  }
  u.frames = Tensor({u.labels.size(), feature_dim});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const json& row = frames[t];
    if (!row.is_array() || row.size() != feature_dim) {
      throw ParseError("frame " + std::to_string(t) + " must have " +
                           std::to_string(feature_dim) + " features",
                       line_no);
    }
    for (std::size_t k = 0; k < feature_dim; ++k) {
      // Non-finite values are serialized as null by the writer side of JSON.
      if (!row[k].is_number()) {
        throw ParseError("non-finite or non-numeric feature at frame " + std::to_string(t),
                         line_no);
      }
      const double v = row[k].get<double>();
      if (!std::isfinite(v)) {
        throw ParseError("non-finite feature at frame " + std::to_string(t), line_no);
      }
      u.frames(t, k) = v;
    }
  }
  for (int l : u.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ParseError("label " + std::to_string(l) + " out of range [0," +
                           std::to_string(num_classes) + ")",
                       line_no);
    }
  }
  return u;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  ++line_no;
  const json header = parse_line(line, line_no);
  if (field<std::string>(header, "format", line_no) != "dfilm-dataset") {
    throw ParseError("not a dfilm dataset file", line_no);
  }
  if (field<int>(header, "version", line_no) != 1) {
    throw ParseError("unsupported dataset version", line_no);
  }
  Dataset d;
  d.feature_dim = field<std::size_t>(header, "feature_dim", line_no);
  d.num_classes = field<std::size_t>(header, "num_classes", line_no);
  const auto expected = field<std::size_t>(header, "utterances", line_no);
  if (d.feature_dim == 0 || d.num_classes == 0) {
    throw ParseError("feature_dim and num_classes must be positive", line_no);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (d.utterances.size() == expected) {
      throw ParseError("more records than the header declares", line_no);
    }
    d.utterances.push_back(
        parse_record(parse_line(line, line_no), d.feature_dim, d.num_classes, line_no));
  }
  if (d.utterances.size() != expected) {
    throw ParseError("truncated file: header declares " + std::to_string(expected) +
                         " utterances, found " + std::to_string(d.utterances.size()),
                     line_no + 1);
  }
  return d;
}

std::string manifest_json(const DatasetManifest& m) {
  json dialects = json::array();
  for (const auto& c : m.dialects) {
    dialects.push_back({{"dialect", c.dialect}, {"utterances", c.utterances}, {"frames", c.frames}});
  }
  return json{{"dialects", dialects},
              {"total_utterances", m.total_utterances},
              {"total_frames", m.total_frames}}
      .dump(2);
}

void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  save_dataset(b.train, dir / "train.jsonl");
  save_dataset(b.dev, dir / "dev.jsonl");
  save_dataset(b.test, dir / "test.jsonl");
  auto split = [](const Dataset& d) { return json::parse(manifest_json(DatasetManifest::of(d))); };
  json manifest = {{"native", b.native},
                   {"train_dialects", b.train_dialects},
                   {"held_out", b.held_out},
                   {"train", split(b.train)},
                   {"dev", split(b.dev)},
                   {"test", split(b.test)}};
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
  DatasetBundle b;
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw IoError("cannot open '" + (dir / "manifest.json").string() + "'");
  json manifest;
  try {
    manifest = json::parse(in);
    b.native = manifest.at("native").get<std::string>();
    b.train_dialects = manifest.at("train_dialects").get<std::vector<std::string>>();
    b.held_out = manifest.at("held_out").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad manifest: ") + e.what(), 0);
  }
  b.train = load_dataset(dir / "train.jsonl");
  b.dev = load_dataset(dir / "dev.jsonl");
  b.test = load_dataset(dir / "test.jsonl");
  return b;
}

// ---------------------------------------------------------------------------
// Batching

std::size_t PaddedBatch::total_frames() const noexcept {
  std::size_t n = 0;
  for (auto l : lengths) n += l;
  return n;
}

PaddedBatch make_batch(const Dataset& d, const std::vector<std::size_t>& indices) {
  PaddedBatch b;
  std::size_t t_max = 0;
  for (auto i : indices) t_max = std::max(t_max, d.utterances.at(i).length());
  const std::size_t f = d.feature_dim;
  b.frames = Tensor({indices.size(), std::max<std::size_t>(t_max, 1), f});
  b.mask = Tensor({indices.size(), std::max<std::size_t>(t_max, 1)});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Utterance& u = d.utterances[indices[r]];
    std::vector<int> labels(t_max, -1);
    for (std::size_t t = 0; t < u.length(); ++t) {
      labels[t] = u.labels[t];
      b.mask(r, t) = 1.0;
      for (std::size_t k = 0; k < f; ++k) b.frames(r, t, k) = u.frames(t, k);
    }
    b.labels.push_back(std::move(labels));
    b.dialects.push_back(u.dialect);
    b.indices.push_back(indices[r]);
    b.lengths.push_back(u.length());
  }
  return b;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& d, std::size_t batch_size, std::uint64_t seed,
                             bool shuffle)
    : data_(d), order_(batch_indices(d.utterances.size(), batch_size, seed, shuffle)) {}

bool BatchIterator::next(PaddedBatch& out) {
  if (pos_ >= order_.size()) return false;
  out = make_batch(data_, order_[pos_++]);
  return true;
}

}  // namespace dfilm
