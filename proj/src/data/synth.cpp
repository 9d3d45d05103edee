// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dfilm/data.hpp"
#include "dfilm/rng.hpp"

namespace dfilm {
namespace {

constexpr double kMaxCondition = 100.0;

double condition_number(const Tensor& a) {
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      m(i, j) = a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s(n - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(n - 1);
}

// Product of `planes` random Givens rotations, each with angle in [-max, max].
Tensor random_rotation(std::size_t dim, std::size_t planes, double max_angle, Rng& rng) {
  Tensor q = Tensor::identity(dim);
  if (dim < 2) return q;
  for (std::size_t r = 0; r < planes; ++r) {
    const std::size_t i = rng.below(dim);
    std::size_t j = rng.below(dim - 1);
    if (j >= i) ++j;
    const double theta = rng.uniform(-max_angle, max_angle);
    const double c = std::cos(theta), s = std::sin(theta);
    // q <- G * q, rotating rows i and j.
    for (std::size_t k = 0; k < dim; ++k) {
      const double qi = q(i, k), qj = q(j, k);
      q(i, k) = c * qi - s * qj;
      q(j, k) = s * qi + c * qj;
    }
  }
  return q;
}

int sample_row(const Tensor& transitions, std::size_t from, Rng& rng) {
  const std::size_t c = transitions.dim(1);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    acc += transitions(from, k);
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(c - 1);
}

Utterance make_utterance(const SynthSpec& spec, const DialectSpec& dialect,
                         const std::string& id, Rng& rng) {
  const std::size_t f = spec.feature_dim;
  const std::size_t span = spec.max_length - spec.min_length + 1;
  const std::size_t length = spec.min_length + rng.below(span);
  Utterance u;
  u.id = id;
  u.dialect = dialect.name;
  u.frames = Tensor({length, f});
  u.labels.resize(length);
  std::vector<double> offset(f, 0.0);
  if (dialect.utterance_offset_scale > 0.0) {
    for (auto& o : offset) o = dialect.utterance_offset_scale * rng.normal();
  }
  int label = static_cast<int>(rng.below(spec.num_classes));
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) label = sample_row(spec.transitions, static_cast<std::size_t>(label), rng);
    u.labels[t] = label;
    const auto mu = spec.class_means.row(static_cast<std::size_t>(label));
    for (std::size_t i = 0; i < f; ++i) {
      double v = dialect.shift[i] + offset[i];
      for (std::size_t j = 0; j < f; ++j) v += dialect.transform(i, j) * mu[j];
      if (dialect.noise_scale > 0.0) v += dialect.noise_scale * rng.normal();
      u.frames(t, i) = v;
    }
  }
  return u;
}

std::string utterance_id(const std::string& dialect, const char* split, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", n);
  return dialect + "-" + split + "-" + buf;
}

}  // namespace

void SynthSpec::validate() const {
  if (feature_dim == 0 || num_classes == 0) {
    throw ConfigError("synth spec: feature_dim and num_classes must be positive");
  }
  if (min_length == 0 || max_length < min_length) {
    throw ConfigError("synth spec: need 1 <= min_length <= max_length");
  }
  if (class_means.shape() != Shape{num_classes, feature_dim}) {
    throw ConfigError("synth spec: class_means must be [C, F]");
  }
  if (transitions.shape() != Shape{num_classes, num_classes}) {
    throw ConfigError("synth spec: transitions must be [C, C]");
  }
  for (std::size_t r = 0; r < num_classes; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      const double p = transitions(r, c);
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw ConfigError("synth spec: degenerate transition matrix (negative or non-finite)");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("synth spec: degenerate transition matrix (row " + std::to_string(r) +
                        " sums to " + std::to_string(sum) + ")");
    }
  }
  if (dialects.empty()) throw ConfigError("synth spec: no dialects");
  bool has_native = false;
  for (const auto& d : dialects) {
    if (d.transform.shape() != Shape{feature_dim, feature_dim} ||
        d.shift.shape() != Shape{feature_dim}) {
      throw ConfigError("synth spec: dialect '" + d.name + "' transform/shift shape");
    }
    if (!(d.noise_scale >= 0.0) || !(d.utterance_offset_scale >= 0.0)) {
      throw ConfigError("synth spec: negative noise or offset scale");
    }
    const double cond = condition_number(d.transform);
    if (!(cond < kMaxCondition)) {
      throw ConfigError("synth spec: dialect '" + d.name +
                        "' transform is ill-conditioned (condition number " +
                        std::to_string(cond) + ")");
    }
    if (d.held_out && (d.train_utterances || d.dev_utterances)) {
      throw ConfigError("synth spec: held-out dialect '" + d.name + "' has training data");
    }
    if (d.name == native) has_native = true;
  }
  if (!has_native) throw ConfigError("synth spec: native dialect '" + native + "' missing");
}

std::vector<std::string> SynthSpec::train_dialects() const {
  std::vector<std::string> out;
  for (const auto& d : dialects) {
    if (!d.held_out) out.push_back(d.name);
  }
  return out;
}

std::vector<std::string> SynthSpec::held_out_dialects() const {
  std::vector<std::string> out;
  for (const auto& d : dialects) {
    if (d.held_out) out.push_back(d.name);
  }
  return out;
}

SynthSpec make_synth_spec(const SynthOptions& o) {
  if (o.feature_dim == 0 || o.num_classes < 2) {
    throw ConfigError("synth options: need feature_dim >= 1 and num_classes >= 2");
  }
  if (!(o.self_transition >= 0.0 && o.self_transition <= 1.0)) {
    throw ConfigError("synth options: self_transition must lie in [0, 1]");
  }
  if (!(o.scale_jitter >= 0.0 && o.scale_jitter < 1.0)) {
    throw ConfigError("synth options: scale_jitter must lie in [0, 1)");
  }
  Rng rng(o.structure_seed);
  SynthSpec s;
  s.feature_dim = o.feature_dim;
  s.num_classes = o.num_classes;
  s.min_length = o.min_length;
  s.max_length = o.max_length;
  s.native = o.native;
  s.class_means = Tensor({o.num_classes, o.feature_dim});
  for (std::size_t i = 0; i < s.class_means.size(); ++i) {
    s.class_means[i] = o.class_spread * rng.normal();
  }
  s.transitions = Tensor({o.num_classes, o.num_classes});
  const double off = (1.0 - o.self_transition) / static_cast<double>(o.num_classes - 1);
  for (std::size_t r = 0; r < o.num_classes; ++r) {
    for (std::size_t c = 0; c < o.num_classes; ++c) {
      s.transitions(r, c) = r == c ? o.self_transition : off;
    }
  }

  DialectSpec native;
  native.name = o.native;
  native.transform = Tensor::identity(o.feature_dim);
  native.shift = Tensor({o.feature_dim});
  native.noise_scale = o.noise_scale;
  native.utterance_offset_scale = o.utterance_offset_scale;
  native.train_utterances = o.native_train;
  native.dev_utterances = o.dev_per_dialect;
  native.test_utterances = o.test_per_dialect;
  s.dialects.push_back(native);

  auto distorted = [&](const std::string& name, bool held_out) {
    DialectSpec d;
    d.name = name;
    const Tensor q = random_rotation(o.feature_dim, o.feature_dim, o.rotation_angle, rng);
    d.transform = Tensor({o.feature_dim, o.feature_dim});
    for (std::size_t i = 0; i < o.feature_dim; ++i) {
      const double scale = rng.uniform(1.0 - o.scale_jitter, 1.0 + o.scale_jitter);
      for (std::size_t j = 0; j < o.feature_dim; ++j) d.transform(i, j) = scale * q(i, j);
    }
    d.shift = Tensor({o.feature_dim});
    for (std::size_t i = 0; i < o.feature_dim; ++i) d.shift[i] = o.shift_scale * rng.normal();
    d.noise_scale = o.noise_scale;
    d.utterance_offset_scale = o.utterance_offset_scale;
    d.held_out = held_out;
    d.train_utterances = held_out ? 0 : o.nonnative_train;
    d.dev_utterances = held_out ? 0 : o.dev_per_dialect;
    d.test_utterances = o.test_per_dialect;
    return d;
  };
  for (const auto& n : o.nonnative) s.dialects.push_back(distorted(n, false));
  for (const auto& n : o.held_out) s.dialects.push_back(distorted(n, true));
  s.validate();
  return s;
}

DatasetBundle synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  DatasetBundle b;
  b.native = spec.native;
  b.train_dialects = spec.train_dialects();
  b.held_out = spec.held_out_dialects();
  for (Dataset* d : {&b.train, &b.dev, &b.test}) {
    d->feature_dim = spec.feature_dim;
    d->num_classes = spec.num_classes;
  }
  Rng root(seed);
  for (std::size_t k = 0; k < spec.dialects.size(); ++k) {
    const DialectSpec& dialect = spec.dialects[k];
    struct Split {
      const char* name;
      std::size_t count;
      Dataset* out;
    };
    const Split splits[] = {{"train", dialect.train_utterances, &b.train},
                            {"dev", dialect.dev_utterances, &b.dev},
                            {"test", dialect.test_utterances, &b.test}};
    for (std::size_t s = 0; s < 3; ++s) {
      Rng rng = root.fork(k * 4 + s);
      for (std::size_t n = 0; n < splits[s].count; ++n) {
        splits[s].out->utterances.push_back(make_utterance(
            spec, dialect, utterance_id(dialect.name, splits[s].name, n), rng));
      }
    }
  }
  return b;
}

}  // namespace dfilm
