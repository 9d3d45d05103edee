// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>

#include "dfilm/eval.hpp"

namespace dfilm {

std::string to_string(DialectPolicy p) {
  switch (p) {
    case DialectPolicy::true_label: return "true";
    case DialectPolicy::native_fallback: return "native-fallback";
    case DialectPolicy::unknown: return "unknown";
  }
  return "?";
}

DialectPolicy parse_policy(const std::string& s) {
  for (auto p : {DialectPolicy::true_label, DialectPolicy::native_fallback, DialectPolicy::unknown}) {
    if (s == to_string(p)) return p;
  }
  throw ConfigError("unknown dialect policy '" + s + "' (true, native-fallback, unknown)");
}

DialectPolicy default_policy(const ModelConfig& config) {
  return config.vocabulary.has_unknown() ? DialectPolicy::unknown
                                         : DialectPolicy::native_fallback;
}

std::string policy_dialect(const ModelConfig& config, const std::string& dialect,
                           DialectPolicy policy, const std::string& native) {
  if (!config.uses_dialect()) return dialect;
  const DialectVocabulary& vocab = config.vocabulary;
  if (dialect != DialectVocabulary::kUnknown && vocab.index(dialect)) return dialect;
  switch (policy) {
    case DialectPolicy::true_label:
      throw ConfigError("dialect '" + dialect + "' is not in the model vocabulary");
    case DialectPolicy::native_fallback:
      if (!vocab.index(native)) {
        throw ConfigError("native dialect '" + native + "' is not in the model vocabulary");
      }
      return native;
    case DialectPolicy::unknown:
      if (!vocab.has_unknown()) {
        throw ConfigError("policy 'unknown' needs a model with an unknown dialect entry");
      }
      return std::string(DialectVocabulary::kUnknown);
  }
  return dialect;
}

void ErrorTable::add(const std::string& dialect, std::size_t frames, std::size_t errors) {
  for (auto& d : dialects) {
    if (d.dialect == dialect) {
      d.frames += frames;
      d.errors += errors;
      return;
    }
  }
  dialects.push_back({dialect, frames, errors});
}

const DialectScore* ErrorTable::find(const std::string& dialect) const {
  for (const auto& d : dialects) {
    if (d.dialect == dialect) return &d;
  }
  return nullptr;
}

std::size_t ErrorTable::frames() const noexcept {
  std::size_t n = 0;
  for (const auto& d : dialects) n += d.frames;
  return n;
}

std::size_t ErrorTable::errors() const noexcept {
  std::size_t n = 0;
  for (const auto& d : dialects) n += d.errors;
  return n;
}

double ErrorTable::overall() const noexcept {
  const std::size_t f = frames();
  return f ? static_cast<double>(errors()) / static_cast<double>(f) : 0.0;
}

double ErrorTable::overall_excluding(const std::vector<std::string>& excluded) const {
  std::size_t f = 0, e = 0;
  for (const auto& d : dialects) {
    if (std::find(excluded.begin(), excluded.end(), d.dialect) != excluded.end()) continue;
    f += d.frames;
    e += d.errors;
  }
  return f ? static_cast<double>(e) / static_cast<double>(f) : 0.0;
}

std::size_t count_frame_errors(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("count_frame_errors: logits " + shape_to_string(logits.shape()) +
                     " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t c = logits.dim(1);
  std::size_t errors = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const auto row = logits.row(t);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= c) {
      throw ConfigError("count_frame_errors: label out of range");
    }
    if (best != static_cast<std::size_t>(labels[t])) ++errors;
  }
  return errors;
}

namespace {

void check_data(const Model& model, const Dataset& data) {
  if (data.num_classes != model.config.num_classes) {
    throw ConfigError("class count mismatch: data has " + std::to_string(data.num_classes) +
                      ", model has " + std::to_string(model.config.num_classes));
  }
  if (data.feature_dim != model.config.input_dim) {
    throw ConfigError("feature dimension mismatch: data has " + std::to_string(data.feature_dim) +
                      ", model has " + std::to_string(model.config.input_dim));
  }
}

// Runs `fn(batch, result)` over infer-mode forwards of `data` in file order.
template <typename Fn>
void for_each_forward(const Model& model, const Dataset& data, DialectPolicy policy,
                      const std::string& native, std::size_t batch_size, Fn&& fn) {
  for (const auto& idx : batch_indices(data.utterances.size(), batch_size, 0, false)) {
    PaddedBatch batch = make_batch(data, idx);
    const std::vector<std::string> truth = batch.dialects;
    for (auto& d : batch.dialects) d = policy_dialect(model.config, d, policy, native);
    const ForwardResult r = forward(model, batch, Mode::infer);
    fn(batch, truth, r);
  }
}

}  // namespace

ErrorTable frame_error_rate(const Model& model, const Dataset& data, DialectPolicy policy,
                            const std::string& native, std::size_t batch_size) {
  check_data(model, data);
  ErrorTable table;
  for_each_forward(model, data, policy, native, batch_size,
                   [&](const PaddedBatch& batch, const std::vector<std::string>& truth,
                       const ForwardResult& r) {
                     for (std::size_t b = 0; b < batch.size(); ++b) {
                       const std::size_t len = batch.lengths[b];
                       const std::size_t c = model.config.num_classes;
                       Tensor logits({len, c});
                       for (std::size_t t = 0; t < len; ++t) {
                         for (std::size_t k = 0; k < c; ++k) logits(t, k) = r.logits(b, t, k);
                       }
                       const std::span<const int> labels(batch.labels[b].data(), len);
                       table.add(truth[b], len, count_frame_errors(logits, labels));
                     }
                   });
  return table;
}

// ---------------------------------------------------------------------------

std::vector<double> FilmRecord::features() const {
  std::vector<double> v(gamma.values().begin(), gamma.values().end());
  v.insert(v.end(), beta.values().begin(), beta.values().end());
  return v;
}

std::vector<FilmRecord> dump_film(const Model& model, const Dataset& data, DialectPolicy policy,
                                  const std::string& native, std::size_t batch_size) {
  if (model.config.cond_source == CondSource::none) {
    throw ConfigError("dump_film: model has no FiLM conditioning");
  }
  check_data(model, data);
  std::vector<FilmRecord> out;
  for_each_forward(model, data, policy, native, batch_size,
                   [&](const PaddedBatch& batch, const std::vector<std::string>& truth,
                       const ForwardResult& r) {
                     for (std::size_t b = 0; b < batch.size(); ++b) {
                       const auto& film = r.film[b];
                       for (std::size_t l = 0; l < film.num_layers(); ++l) {
                         out.push_back({data.utterances[batch.indices[b]].id, truth[b], l + 1,
                                        film.gamma[l], film.beta[l]});
                       }
                     }
                   });
  return out;
}

void save_film_dump(const std::vector<FilmRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) {
    nlohmann::json j = {{"utt", r.utterance},
                        {"dialect", r.dialect},
                        {"layer", r.layer},
                        {"gamma", r.gamma.storage()},
                        {"beta", r.beta.storage()}};
    out << j.dump() << '\n';
  }
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<FilmRecord> load_film_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open FiLM dump '" + path.string() + "'");
  std::vector<FilmRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FilmRecord r;
      r.utterance = j.at("utt").get<std::string>();
      r.dialect = j.at("dialect").get<std::string>();
      r.layer = j.at("layer").get<std::size_t>();
      auto g = j.at("gamma").get<std::vector<double>>();
      auto b = j.at("beta").get<std::vector<double>>();
      if (g.empty() || g.size() != b.size() || r.layer == 0) {
        throw ParseError("gamma/beta must be non-empty and of equal width", lineno);
      }
      r.gamma = Tensor::vector(std::move(g));
      r.beta = Tensor::vector(std::move(b));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad FiLM record: ") + e.what(), lineno);
    }
  }
  return out;
}

double silhouette(const std::vector<std::vector<double>>& points,
                  const std::vector<std::string>& labels) {
  const std::size_t n = points.size();
  if (labels.size() != n) throw ShapeError("silhouette: points and labels differ in length");
  std::map<std::string, std::size_t> ids;
  std::vector<std::size_t> cluster(n);
  for (std::size_t i = 0; i < n; ++i) {
    cluster[i] = ids.try_emplace(labels[i], ids.size()).first->second;
  }
  const std::size_t k = ids.size();
  if (k < 2) throw ConfigError("silhouette: need at least two labels");
  std::vector<std::size_t> sizes(k, 0);
  for (auto c : cluster) ++sizes[c];
  for (const auto& [name, id] : ids) {
    if (sizes[id] < 2) throw ConfigError("silhouette: label '" + name + "' has a single record");
  }
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ShapeError("silhouette: points differ in dimension");
  }

  double total = 0.0;
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::size_t q = 0; q < dim; ++q) {
        const double diff = points[i][q] - points[j][q];
        d2 += diff * diff;
      }
      sums[cluster[j]] += std::sqrt(d2);
    }
    const std::size_t own = cluster[i];
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

double cluster_score(const std::vector<FilmRecord>& records, std::size_t layer) {
  std::vector<std::vector<double>> points;
  std::vector<std::string> labels;
  for (const auto& r : records) {
    if (r.layer != layer) continue;
    points.push_back(r.features());
    labels.push_back(r.dialect);
  }
  if (points.empty()) throw ConfigError("cluster_score: no records for layer " + std::to_string(layer));
  return silhouette(points, labels);
}

}  // namespace dfilm
