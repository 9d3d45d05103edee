// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "dfilm/conditioning.hpp"
#include "dfilm/kernels.hpp"
#include "dfilm/ops.hpp"

namespace dfilm {
namespace {

constexpr double kHiddenInit = 0.05;
constexpr double kExternalGammaTarget = 0.75;

// a = tanh(x W + b)
Tensor dense_tanh(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor pre = b;
  vec_mat_acc(x.values(), w, pre.values());
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = std::tanh(pre[i]);
  return pre;
}

// y = x W + b
Tensor dense_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = b;
  vec_mat_acc(x.values(), w, y.values());
  return y;
}

// Reverse of y = x W + b given dy; returns dx.
Tensor dense_linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                             Tensor& dw, Tensor& db) {
  matmul_tn_acc(x, dy, dw);
  kernels::axpy(1.0, dy.data(), db.data(), dy.size());
  Tensor dx(x.shape());
  mat_vec_acc(w, dy.values(), dx.values());
  return dx;
}

// Reverse of a = tanh(x W + b) given da; returns dx.
Tensor dense_tanh_backward(const Tensor& x, const Tensor& a, const Tensor& w,
                           const Tensor& da, Tensor& dw, Tensor& db) {
  Tensor dpre(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) dpre[i] = da[i] * (1.0 - a[i] * a[i]);
  return dense_linear_backward(x, w, dpre, dw, db);
}

void add_uniform(ParamStore& p, const std::string& name, Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-kHiddenInit, kHiddenInit);
  p.add(name, std::move(t));
}

void add_heads(ParamStore& p, const std::string& prefix, std::size_t in, std::size_t out,
               double gamma_bias) {
  p.add(prefix + "w_gamma", Tensor({in, out}));
  p.add(prefix + "b_gamma", Tensor({out}, gamma_bias));
  p.add(prefix + "w_beta", Tensor({in, out}));
  p.add(prefix + "b_beta", Tensor({out}));
}

std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

void check_layer(const ConditioningLayout& layout, std::size_t layer) {
  if (layer < 1 || layer > layout.num_layers) {
    throw ConfigError("generator layer " + std::to_string(layer) + " out of range 1.." +
                      std::to_string(layout.num_layers));
  }
}

}  // namespace

std::string layer_prefix(std::size_t layer) { return "gen.l" + std::to_string(layer) + "."; }

void ConditioningLayout::validate() const {
  if ((source == CondSource::none) != (position == CondPosition::none)) {
    throw ConfigError("conditioning source and position must both be none or both set");
  }
  if (source == CondSource::none) return;
  if (num_layers == 0 || hidden == 0) throw ConfigError("conditioning needs L >= 1 and H >= 1");
  if ((source == CondSource::internal || source == CondSource::both) &&
      summary_widths.size() != num_layers) {
    throw ConfigError("conditioning: need one summary width per layer");
  }
  if ((source == CondSource::external || source == CondSource::both) && dialects == 0) {
    throw ConfigError("conditioning on dialect identity needs a non-empty vocabulary");
  }
  if (widths.hidden == 0 || widths.branch == 0 || widths.combiner == 0) {
    throw ConfigError("generator widths must be positive");
  }
}

void init_conditioning(ParamStore& p, const ConditioningLayout& layout, Rng& rng) {
  layout.validate();
  const std::size_t width = layout.film_width();
  const auto& gw = layout.widths;
  switch (layout.source) {
    case CondSource::none:
      return;
    case CondSource::external: {
      add_uniform(p, "gen.ext.w_d", {layout.dialects, gw.hidden}, rng);
      p.add("gen.ext.b_d", Tensor({gw.hidden}));
      add_uniform(p, "gen.ext.w_c", {gw.hidden, gw.combiner}, rng);
      p.add("gen.ext.b_c", Tensor({gw.combiner}));
      add_heads(p, "gen.ext.", gw.combiner, layout.num_layers * width,
                std::atanh(kExternalGammaTarget));
      return;
    }
    case CondSource::internal:
      for (std::size_t l = 1; l <= layout.num_layers; ++l) {
        const std::string pre = layer_prefix(l);
        add_uniform(p, pre + "w_s", {layout.summary_widths[l - 1], gw.hidden}, rng);
        p.add(pre + "b_s", Tensor({gw.hidden}));
        add_uniform(p, pre + "w_c", {gw.hidden, gw.combiner}, rng);
        p.add(pre + "b_c", Tensor({gw.combiner}));
        add_heads(p, pre, gw.combiner, width, 1.0);
      }
      return;
    case CondSource::both:
      for (std::size_t l = 1; l <= layout.num_layers; ++l) {
        const std::string pre = layer_prefix(l);
        add_uniform(p, pre + "w_d", {layout.dialects, gw.branch}, rng);
        p.add(pre + "b_d", Tensor({gw.branch}));
        add_uniform(p, pre + "w_s", {layout.summary_widths[l - 1], gw.branch}, rng);
        p.add(pre + "b_s", Tensor({gw.branch}));
        add_uniform(p, pre + "w_c", {2 * gw.branch, gw.combiner}, rng);
        p.add(pre + "b_c", Tensor({gw.combiner}));
        add_heads(p, pre, gw.combiner, width, 1.0);
      }
      return;
  }
}

std::size_t conditioning_param_count(const ConditioningLayout& layout) {
  layout.validate();
  const std::size_t width = layout.film_width();
  const auto& gw = layout.widths;
  std::size_t n = 0;
  switch (layout.source) {
    case CondSource::none:
      break;
    case CondSource::external:
      n += dense_count(layout.dialects, gw.hidden) + dense_count(gw.hidden, gw.combiner) +
           2 * dense_count(gw.combiner, layout.num_layers * width);
      break;
    case CondSource::internal:
      for (std::size_t l = 0; l < layout.num_layers; ++l) {
        n += dense_count(layout.summary_widths[l], gw.hidden) +
             dense_count(gw.hidden, gw.combiner) + 2 * dense_count(gw.combiner, width);
      }
      break;
    case CondSource::both:
      for (std::size_t l = 0; l < layout.num_layers; ++l) {
        n += dense_count(layout.dialects, gw.branch) +
             dense_count(layout.summary_widths[l], gw.branch) +
             dense_count(2 * gw.branch, gw.combiner) + 2 * dense_count(gw.combiner, width);
      }
      break;
  }
  return n;
}

Tensor summarize_utterance(const Tensor& h, std::span<const double> mask,
                           const Tensor& w_s, const Tensor& b_s, SummaryCache* cache) {
  if (h.rank() != 2 || w_s.rank() != 2 || w_s.dim(0) != h.dim(1) ||
      b_s.shape() != Shape{w_s.dim(1)}) {
    throw ShapeError("summarize_utterance: h " + shape_to_string(h.shape()) + ", W_s " +
                     shape_to_string(w_s.shape()) + ", b_s " + shape_to_string(b_s.shape()));
  }
  if (!mask.empty() && mask.size() != h.dim(0)) {
    throw ShapeError("summarize_utterance: mask length does not match frames");
  }
  const std::size_t steps = h.dim(0), width = w_s.dim(1);
  Tensor act({steps, width});
  FrameMask m(mask.begin(), mask.end());
  if (m.empty()) m.assign(steps, 1.0);
  std::size_t frames = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    if (m[t] == 0.0) continue;
    ++frames;
    auto row = act.row(t);
    std::copy(b_s.values().begin(), b_s.values().end(), row.begin());
    vec_mat_acc(h.row(t), w_s, row);
    for (auto& v : row) v = std::tanh(v);
  }
  if (frames == 0) throw NumericError("summarize_utterance: utterance has no unpadded frames");
  Tensor a_s = masked_mean_over_time(act, m);
  if (cache != nullptr) {
    cache->inputs = h;
    cache->activations = std::move(act);
    cache->mask = std::move(m);
    cache->frames = frames;
  }
  return a_s;
}

Tensor summarize_utterance_backward(const SummaryCache& cache, const Tensor& w_s,
                                    const Tensor& da_s, Tensor& dw_s, Tensor& db_s) {
  const std::size_t steps = cache.inputs.dim(0), width = w_s.dim(1);
  if (da_s.shape() != Shape{width}) {
    throw ShapeError("summarize_utterance_backward: da_s " + shape_to_string(da_s.shape()));
  }
  const double inv = 1.0 / static_cast<double>(cache.frames);
  Tensor dh(cache.inputs.shape());
  Tensor dpre({width});
  for (std::size_t t = 0; t < steps; ++t) {
    if (cache.mask[t] == 0.0) continue;
    const auto a = cache.activations.row(t);
    for (std::size_t k = 0; k < width; ++k) dpre[k] = da_s[k] * inv * (1.0 - a[k] * a[k]);
    const auto x = cache.inputs.row(t);
    for (std::size_t p = 0; p < x.size(); ++p) {
      if (x[p] != 0.0) kernels::axpy(x[p], dpre.data(), dw_s.data() + p * width, width);
    }
    kernels::axpy(1.0, dpre.data(), db_s.data(), width);
    mat_vec_acc(w_s, dpre.values(), dh.row(t));
  }
  return dh;
}

FilmParams generate_external(const Tensor& d, const ParamStore& p,
                             const ConditioningLayout& layout, ExternalCache* cache) {
  if (layout.source != CondSource::external) {
    throw ConfigError("generate_external called for a non-external layout");
  }
  require_one_hot(d, layout.dialects);
  const Tensor a_d = dense_tanh(d, p.value("gen.ext.w_d"), p.value("gen.ext.b_d"));
  const Tensor a_c = dense_tanh(a_d, p.value("gen.ext.w_c"), p.value("gen.ext.b_c"));
  const Tensor gamma_all =
      dense_tanh(a_c, p.value("gen.ext.w_gamma"), p.value("gen.ext.b_gamma"));
  const Tensor beta_all = dense_tanh(a_c, p.value("gen.ext.w_beta"), p.value("gen.ext.b_beta"));

  const std::size_t width = layout.film_width();
  if (gamma_all.size() != layout.num_layers * width) {
    throw ShapeError("generate_external: head width " + std::to_string(gamma_all.size()) +
                     " != L * " + std::to_string(width));
  }
  FilmParams film;
  film.position = layout.position;
  for (std::size_t l = 0; l < layout.num_layers; ++l) {
    const auto off = static_cast<std::ptrdiff_t>(l * width);
    film.gamma.push_back(Tensor::vector(std::vector<double>(
        gamma_all.storage().begin() + off, gamma_all.storage().begin() + off + width)));
    film.beta.push_back(Tensor::vector(std::vector<double>(
        beta_all.storage().begin() + off, beta_all.storage().begin() + off + width)));
  }
  if (cache != nullptr) *cache = ExternalCache{d, a_d, a_c, gamma_all, beta_all};
  return film;
}

void generate_external_backward(const ExternalCache& cache, std::span<const Tensor> dgamma,
                                std::span<const Tensor> dbeta, ParamStore& p,
                                const ConditioningLayout& layout) {
  const std::size_t width = layout.film_width();
  if (dgamma.size() != layout.num_layers || dbeta.size() != layout.num_layers) {
    throw ShapeError("generate_external_backward: need one gradient per layer");
  }
  Tensor dg_all({layout.num_layers * width});
  Tensor db_all({layout.num_layers * width});
  for (std::size_t l = 0; l < layout.num_layers; ++l) {
    if (dgamma[l].size() != width || dbeta[l].size() != width) {
      throw ShapeError("generate_external_backward: layer gradient width mismatch");
    }
    std::copy(dgamma[l].values().begin(), dgamma[l].values().end(),
              dg_all.values().begin() + static_cast<std::ptrdiff_t>(l * width));
    std::copy(dbeta[l].values().begin(), dbeta[l].values().end(),
              db_all.values().begin() + static_cast<std::ptrdiff_t>(l * width));
  }
  Tensor da_c = dense_tanh_backward(cache.a_c, cache.gamma_all, p.value("gen.ext.w_gamma"),
                                    dg_all, p.grad("gen.ext.w_gamma"),
                                    p.grad("gen.ext.b_gamma"));
  Tensor da_c_beta = dense_tanh_backward(cache.a_c, cache.beta_all, p.value("gen.ext.w_beta"),
                                         db_all, p.grad("gen.ext.w_beta"),
                                         p.grad("gen.ext.b_beta"));
  kernels::axpy(1.0, da_c_beta.data(), da_c.data(), da_c.size());
  Tensor da_d = dense_tanh_backward(cache.a_d, cache.a_c, p.value("gen.ext.w_c"), da_c,
                                    p.grad("gen.ext.w_c"), p.grad("gen.ext.b_c"));
  dense_tanh_backward(cache.d, cache.a_d, p.value("gen.ext.w_d"), da_d,
                      p.grad("gen.ext.w_d"), p.grad("gen.ext.b_d"));
}

FilmLayer generate_internal(const Tensor& a_s, const ParamStore& p,
                            const ConditioningLayout& layout, std::size_t layer,
                            LayerGenCache* cache) {
  if (layout.source != CondSource::internal) {
    throw ConfigError("generate_internal called for a non-internal layout");
  }
  check_layer(layout, layer);
  const std::string pre = layer_prefix(layer);
  const Tensor& w_c = p.value(pre + "w_c");
  if (a_s.rank() != 1 || a_s.size() != w_c.dim(0)) {
    throw ShapeError("generate_internal: a_s " + shape_to_string(a_s.shape()) +
                     " does not match W_c " + shape_to_string(w_c.shape()));
  }
  const Tensor a_c = dense_tanh(a_s, w_c, p.value(pre + "b_c"));
  FilmLayer out{dense_linear(a_c, p.value(pre + "w_gamma"), p.value(pre + "b_gamma")),
                dense_linear(a_c, p.value(pre + "w_beta"), p.value(pre + "b_beta"))};
  if (cache != nullptr) *cache = LayerGenCache{Tensor(), Tensor(), a_s, a_c};
  return out;
}

FilmLayer generate_combined(const Tensor& d, const Tensor& a_s, const ParamStore& p,
                            const ConditioningLayout& layout, std::size_t layer,
                            LayerGenCache* cache) {
  if (layout.source != CondSource::both) {
    throw ConfigError("generate_combined called for a non-combined layout");
  }
  check_layer(layout, layer);
  require_one_hot(d, layout.dialects);
  const std::string pre = layer_prefix(layer);
  const Tensor& w_c = p.value(pre + "w_c");
  const Tensor a_d = dense_tanh(d, p.value(pre + "w_d"), p.value(pre + "b_d"));
  if (a_s.rank() != 1 || a_d.size() + a_s.size() != w_c.dim(0)) {
    throw ShapeError("generate_combined: a_d[" + std::to_string(a_d.size()) + "] + a_s " +
                     shape_to_string(a_s.shape()) + " does not match W_c " +
                     shape_to_string(w_c.shape()));
  }
  std::vector<double> cat(a_d.values().begin(), a_d.values().end());
  cat.insert(cat.end(), a_s.values().begin(), a_s.values().end());
  const Tensor a_c = dense_tanh(Tensor::vector(std::move(cat)), w_c, p.value(pre + "b_c"));
  FilmLayer out{dense_linear(a_c, p.value(pre + "w_gamma"), p.value(pre + "b_gamma")),
                dense_linear(a_c, p.value(pre + "w_beta"), p.value(pre + "b_beta"))};
  if (cache != nullptr) *cache = LayerGenCache{d, a_d, a_s, a_c};
  return out;
}

Tensor generate_layer_backward(const LayerGenCache& cache, const Tensor& dgamma,
                               const Tensor& dbeta, ParamStore& p,
                               const ConditioningLayout& layout, std::size_t layer) {
  check_layer(layout, layer);
  const std::string pre = layer_prefix(layer);
  Tensor da_c = dense_linear_backward(cache.a_c, p.value(pre + "w_gamma"), dgamma,
                                      p.grad(pre + "w_gamma"), p.grad(pre + "b_gamma"));
  Tensor da_c_beta = dense_linear_backward(cache.a_c, p.value(pre + "w_beta"), dbeta,
                                           p.grad(pre + "w_beta"), p.grad(pre + "b_beta"));
  kernels::axpy(1.0, da_c_beta.data(), da_c.data(), da_c.size());

  if (layout.source == CondSource::internal) {
    return dense_tanh_backward(cache.a_s, cache.a_c, p.value(pre + "w_c"), da_c,
                               p.grad(pre + "w_c"), p.grad(pre + "b_c"));
  }
  std::vector<double> cat(cache.a_d.values().begin(), cache.a_d.values().end());
  cat.insert(cat.end(), cache.a_s.values().begin(), cache.a_s.values().end());
  const Tensor dcat = dense_tanh_backward(Tensor::vector(std::move(cat)), cache.a_c,
                                          p.value(pre + "w_c"), da_c, p.grad(pre + "w_c"),
                                          p.grad(pre + "b_c"));
  const std::size_t nd = cache.a_d.size();
  Tensor da_d = Tensor::vector(
      std::vector<double>(dcat.storage().begin(),
                          dcat.storage().begin() + static_cast<std::ptrdiff_t>(nd)));
  Tensor da_s = Tensor::vector(std::vector<double>(
      dcat.storage().begin() + static_cast<std::ptrdiff_t>(nd), dcat.storage().end()));
  dense_tanh_backward(cache.d, cache.a_d, p.value(pre + "w_d"), da_d, p.grad(pre + "w_d"),
                      p.grad(pre + "b_d"));
  return da_s;
}

}  // namespace dfilm
