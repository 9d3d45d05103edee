// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "dfilm/kernels.hpp"
#include "dfilm/model.hpp"
#include "dfilm/ops.hpp"
#include "dfilm/rng.hpp"

namespace dfilm {
namespace {

std::string lname(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "." + what;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

struct LayerRefs {
  const Tensor& w_x;
  const Tensor& w_h;
  const Tensor& bias;
  const Tensor& bn_gamma;
  const Tensor& bn_beta;
  const Tensor& lookahead;
};

LayerRefs layer_refs(const ParamStore& p, std::size_t l) {
  return {p.value(lname(l, "w_x")),      p.value(lname(l, "w_h")),
          p.value(lname(l, "bias")),     p.value(lname(l, "bn_gamma")),
          p.value(lname(l, "bn_beta")),  p.value(lname(l, "lookahead"))};
}

// Strips padding; appends the one-hot dialect for dialect-aware input.
std::vector<Tensor> unpad_inputs(const Model& model, const PaddedBatch& batch,
                                 const std::vector<std::size_t>& dialect_ids) {
  const ModelConfig& cfg = model.config;
  if (batch.frames.rank() != 3 || batch.frames.dim(2) != cfg.input_dim) {
    throw ShapeError("forward: batch frames " + shape_to_string(batch.frames.shape()) +
                     " do not match input_dim " + std::to_string(cfg.input_dim));
  }
  const std::size_t width = cfg.layer_input_width(1);
  std::vector<Tensor> xs;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t len = batch.lengths[b];
    if (len == 0) throw ShapeError("forward: utterance with no frames");
    Tensor x({len, width});
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t k = 0; k < cfg.input_dim; ++k) x(t, k) = batch.frames(b, t, k);
      if (cfg.dialect_aware_input) x(t, cfg.input_dim + dialect_ids[b]) = 1.0;
    }
    xs.push_back(std::move(x));
  }
  return xs;
}

void check_batch(const PaddedBatch& batch) {
  const std::size_t n = batch.size();
  if (batch.mask.rank() != 2 || batch.mask.dim(0) != n || batch.frames.dim(0) != n ||
      batch.mask.dim(1) != batch.frames.dim(1) || batch.dialects.size() != n ||
      batch.labels.size() != n) {
    throw ShapeError("forward: inconsistent padded batch");
  }
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t len = batch.lengths[b];
    for (std::size_t t = 0; t < batch.mask.dim(1); ++t) {
      const bool real = batch.mask(b, t) != 0.0;
      if (real != (t < len)) {
        throw ShapeError("forward: masks must be prefix masks matching lengths");
      }
    }
  }
}

std::vector<std::size_t> resolve_dialects(const Model& model, const PaddedBatch& batch) {
  std::vector<std::size_t> ids(batch.size(), 0);
  if (!model.config.uses_dialect()) return ids;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch.dialects[b].empty()) {
      throw ConfigError("forward: missing dialect label for utterance " + std::to_string(b));
    }
    ids[b] = model.config.vocabulary.require_index(batch.dialects[b]);
  }
  return ids;
}

}  // namespace

bool operator==(const Model& a, const Model& b) {
  if (!(a.config == b.config) || !(a.params == b.params) || a.bn.size() != b.bn.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.bn.size(); ++i) {
    if (!(a.bn[i].running_mean == b.bn[i].running_mean) ||
        !(a.bn[i].running_var == b.bn[i].running_var)) {
      return false;
    }
  }
  return true;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  Rng rng(seed);
  const std::size_t h = config.hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (std::size_t l = 1; l <= config.num_layers; ++l) {
    m.params.add(lname(l, "w_x"), uniform_tensor({config.layer_input_width(l), 4 * h}, bound, rng));
    m.params.add(lname(l, "w_h"), uniform_tensor({h, 4 * h}, bound, rng));
    Tensor bias({4 * h});
    for (std::size_t k = 0; k < h; ++k) bias[h + k] = 1.0;  // forget gate
    m.params.add(lname(l, "bias"), std::move(bias));
    m.params.add(lname(l, "bn_gamma"), Tensor({4 * h}, 1.0));
    m.params.add(lname(l, "bn_beta"), Tensor({4 * h}));
    Tensor la({config.lookahead_tau + 1, h});
    for (std::size_t k = 0; k < h; ++k) la(0, k) = 1.0;
    m.params.add(lname(l, "lookahead"), std::move(la));

    BatchNormState bn = BatchNormState::fresh(4 * h);
    bn.epsilon = config.bn_epsilon;
    bn.momentum = config.bn_momentum;
    m.bn.push_back(std::move(bn));
  }
  m.params.add("softmax.w", uniform_tensor({h, config.num_classes}, bound, rng));
  m.params.add("softmax.b", Tensor({config.num_classes}));
  Rng gen_rng = rng.fork(0x6e6);
  init_conditioning(m.params, config.conditioning_layout(), gen_rng);
  return m;
}

std::size_t count_params(const ModelConfig& config) {
  config.validate();
  const std::size_t h = config.hidden;
  std::size_t n = 0;
  for (std::size_t l = 1; l <= config.num_layers; ++l) {
    n += config.layer_input_width(l) * 4 * h;  // W_x
    n += h * 4 * h + 4 * h;                    // W_h, bias
    n += 2 * 4 * h;                            // BN affine
    n += (config.lookahead_tau + 1) * h;       // lookahead
  }
  n += h * config.num_classes + config.num_classes;
  return n + conditioning_param_count(config.conditioning_layout());
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p(logits.shape());
  const std::size_t c = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double* in = logits.data() + r * c;
    double* out = p.data() + r * c;
    double mx = in[0];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, in[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      out[k] = std::exp(in[k] - mx);
      sum += out[k];
    }
    for (std::size_t k = 0; k < c; ++k) out[k] /= sum;
  }
  return p;
}

ForwardResult forward(const Model& model, const PaddedBatch& batch, Mode mode,
                      const std::vector<FilmParams>* film_override) {
  const ModelConfig& cfg = model.config;
  const ParamStore& p = model.params;
  check_batch(batch);
  const std::size_t n = batch.size();
  const std::size_t layers = cfg.num_layers;
  const bool conditioned = cfg.cond_source != CondSource::none;
  const ConditioningLayout layout = cfg.conditioning_layout();
  const bool per_layer_gen =
      cfg.cond_source == CondSource::internal || cfg.cond_source == CondSource::both;

  if (film_override != nullptr) {
    if (film_override->size() != n) {
      throw ShapeError("forward: need one FiLM override per utterance");
    }
    for (const auto& f : *film_override) {
      if (f.position == CondPosition::none || f.num_layers() != layers) {
        throw ShapeError("forward: FiLM override must cover every layer");
      }
      f.validate(cfg.hidden);
    }
  }

  const std::vector<std::size_t> dialect_ids = resolve_dialects(model, batch);
  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.lengths = batch.lengths;
  cache.film_injected = film_override != nullptr;
  cache.layers.resize(layers);

  // FiLM vectors in use, per utterance.
  std::vector<FilmParams>& film = result.film;
  if (film_override != nullptr) {
    film = *film_override;
  } else if (conditioned) {
    film.resize(n);
    for (auto& f : film) {
      f.position = cfg.cond_position;
      f.gamma.resize(layers);
      f.beta.resize(layers);
    }
    if (cfg.cond_source == CondSource::external) {
      cache.external.resize(n);
      for (std::size_t b = 0; b < n; ++b) {
        film[b] = generate_external(cfg.vocabulary.one_hot(dialect_ids[b]), p, layout,
                                    &cache.external[b]);
      }
    }
  }
  const CondPosition position = film.empty() ? CondPosition::none : film.front().position;

  std::vector<Tensor> xs = unpad_inputs(model, batch, dialect_ids);
  for (std::size_t l = 1; l <= layers; ++l) {
    LayerCache& lc = cache.layers[l - 1];
    lc.seqs.resize(n);
    const LayerRefs w = layer_refs(p, l);

    if (per_layer_gen && film_override == nullptr) {
      const std::string pre = layer_prefix(l);
      for (std::size_t b = 0; b < n; ++b) {
        SeqLayerCache& sc = lc.seqs[b];
        const Tensor a_s =
            summarize_utterance(xs[b], {}, p.value(pre + "w_s"), p.value(pre + "b_s"),
                                &sc.summary);
        FilmLayer fl = cfg.cond_source == CondSource::internal
                           ? generate_internal(a_s, p, layout, l, &sc.generator)
                           : generate_combined(cfg.vocabulary.one_hot(dialect_ids[b]), a_s, p,
                                               layout, l, &sc.generator);
        film[b].gamma[l - 1] = std::move(fl.gamma);
        film[b].beta[l - 1] = std::move(fl.beta);
      }
    }

    std::vector<Tensor> preacts;
    preacts.reserve(n);
    for (std::size_t b = 0; b < n; ++b) {
      Tensor u({xs[b].dim(0), 4 * cfg.hidden});
      matmul_acc(xs[b], w.w_x, u);
      preacts.push_back(std::move(u));
    }
    BatchNormState bn = model.bn[l - 1];
    bn.mode = mode == Mode::train ? BnMode::train : BnMode::infer;
    std::vector<Tensor> normed = batch_norm_forward(preacts, {}, w.bn_gamma, w.bn_beta, bn, &lc.bn);

    for (std::size_t b = 0; b < n; ++b) {
      SeqLayerCache& sc = lc.seqs[b];
      sc.input = std::move(xs[b]);
      sc.bn_out = std::move(normed[b]);
      const Tensor z = position == CondPosition::input
                           ? apply_film(sc.bn_out, film[b].gamma[l - 1], film[b].beta[l - 1])
                           : sc.bn_out;
      const Tensor h = lstm_recurrence_forward(z, w.w_h, w.bias, {}, {}, &sc.recurrence);
      sc.lookahead_out = lookahead_forward(h, w.lookahead);
      sc.output = position == CondPosition::output
                      ? apply_film(sc.lookahead_out, film[b].gamma[l - 1], film[b].beta[l - 1])
                      : sc.lookahead_out;
      xs[b] = sc.output;
    }
  }

  const Tensor& w_o = p.value("softmax.w");
  const Tensor& b_o = p.value("softmax.b");
  const std::size_t classes = cfg.num_classes;
  result.logits = Tensor({n, batch.max_length(), classes});
  cache.probs.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t len = batch.lengths[b];
    Tensor logits({len, classes});
    for (std::size_t t = 0; t < len; ++t) {
      std::copy(b_o.values().begin(), b_o.values().end(), logits.row(t).begin());
    }
    matmul_acc(xs[b], w_o, logits);
    if (!logits.all_finite()) throw NumericError("forward: non-finite logits");
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t k = 0; k < classes; ++k) result.logits(b, t, k) = logits(t, k);
    }
    cache.probs[b] = softmax_rows(logits);
  }
  return result;
}

double loss_only(const Model& model, const PaddedBatch& batch, Mode mode,
                 const std::vector<FilmParams>* film_override) {
  const ForwardResult r = forward(model, batch, mode, film_override);
  double loss = 0.0;
  std::size_t frames = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) {
      const int label = batch.labels[b][t];
      if (label < 0 || static_cast<std::size_t>(label) >= model.config.num_classes) {
        throw ConfigError("label " + std::to_string(label) + " out of range");
      }
      loss -= std::log(r.cache.probs[b](t, static_cast<std::size_t>(label)));
      ++frames;
    }
  }
  return loss / static_cast<double>(frames);
}

LossResult loss_and_grads(Model& model, const PaddedBatch& batch,
                          const std::vector<FilmParams>* film_override) {
  const ModelConfig& cfg = model.config;
  ParamStore& p = model.params;
  ForwardResult fr = forward(model, batch, Mode::train, film_override);
  ForwardCache& cache = fr.cache;
  const std::size_t n = batch.size();
  const std::size_t layers = cfg.num_layers;
  const std::size_t classes = cfg.num_classes;
  const ConditioningLayout layout = cfg.conditioning_layout();
  const bool generated = cfg.cond_source != CondSource::none && film_override == nullptr;
  const CondPosition position = fr.film.empty() ? CondPosition::none : fr.film.front().position;

  p.zero_grads();
  LossResult out;
  for (auto l : batch.lengths) out.frames += l;
  const double inv_frames = 1.0 / static_cast<double>(out.frames);

  // Softmax head.
  const Tensor& w_o = p.value("softmax.w");
  std::vector<Tensor> dh(n);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t len = batch.lengths[b];
    Tensor dlogits = cache.probs[b];
    for (std::size_t t = 0; t < len; ++t) {
      const int label = batch.labels[b][t];
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw ConfigError("label " + std::to_string(label) + " out of range [0," +
                          std::to_string(classes) + ")");
      }
      out.loss -= std::log(cache.probs[b](t, static_cast<std::size_t>(label)));
      dlogits(t, static_cast<std::size_t>(label)) -= 1.0;
    }
    for (std::size_t i = 0; i < dlogits.size(); ++i) dlogits[i] *= inv_frames;
    const Tensor& h_top = cache.layers[layers - 1].seqs[b].output;
    matmul_tn_acc(h_top, dlogits, p.grad("softmax.w"));
    Tensor& db_o = p.grad("softmax.b");
    for (std::size_t t = 0; t < len; ++t) kernels::axpy(1.0, dlogits.data() + t * classes, db_o.data(), classes);
    dh[b] = Tensor(h_top.shape());
    matmul_nt_acc(dlogits, w_o, dh[b]);
  }
  out.loss *= inv_frames;
  if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");

  // Per-utterance FiLM gradients, [b][layer].
  std::vector<std::vector<Tensor>> dgamma(n, std::vector<Tensor>(layers));
  std::vector<std::vector<Tensor>> dbeta(n, std::vector<Tensor>(layers));

  for (std::size_t l = layers; l >= 1; --l) {
    LayerCache& lc = cache.layers[l - 1];
    const LayerRefs w = layer_refs(p, l);
    Tensor& g_w_h = p.grad(lname(l, "w_h"));
    Tensor& g_bias = p.grad(lname(l, "bias"));
    Tensor& g_la = p.grad(lname(l, "lookahead"));

    std::vector<Tensor> dbn_out(n);
    for (std::size_t b = 0; b < n; ++b) {
      SeqLayerCache& sc = lc.seqs[b];
      Tensor dla;
      if (position == CondPosition::output) {
        FilmBackward fb = apply_film_backward(sc.lookahead_out, fr.film[b].gamma[l - 1], dh[b]);
        dla = std::move(fb.dx);
        dgamma[b][l - 1] = std::move(fb.dgamma);
        dbeta[b][l - 1] = std::move(fb.dbeta);
      } else {
        dla = std::move(dh[b]);
      }
      const Tensor dlstm = lookahead_backward(sc.recurrence.hiddens, w.lookahead, dla, g_la);
      Tensor dz = lstm_recurrence_backward(sc.recurrence, w.w_h, dlstm, g_w_h, g_bias);
      if (position == CondPosition::input) {
        FilmBackward fb = apply_film_backward(sc.bn_out, fr.film[b].gamma[l - 1], dz);
        dbn_out[b] = std::move(fb.dx);
        dgamma[b][l - 1] = std::move(fb.dgamma);
        dbeta[b][l - 1] = std::move(fb.dbeta);
      } else {
        dbn_out[b] = std::move(dz);
      }
    }

    std::vector<Tensor> dpre = batch_norm_backward(lc.bn, w.bn_gamma, dbn_out,
                                                   p.grad(lname(l, "bn_gamma")),
                                                   p.grad(lname(l, "bn_beta")));
    Tensor& g_w_x = p.grad(lname(l, "w_x"));
    for (std::size_t b = 0; b < n; ++b) {
      SeqLayerCache& sc = lc.seqs[b];
      matmul_tn_acc(sc.input, dpre[b], g_w_x);
      if (l > 1) {
        dh[b] = Tensor(sc.input.shape());
        matmul_nt_acc(dpre[b], w.w_x, dh[b]);
      }
      if (generated && (cfg.cond_source == CondSource::internal ||
                        cfg.cond_source == CondSource::both)) {
        const std::string pre = layer_prefix(l);
        const Tensor da_s = generate_layer_backward(sc.generator, dgamma[b][l - 1],
                                                    dbeta[b][l - 1], p, layout, l);
        const Tensor dsum = summarize_utterance_backward(
            sc.summary, p.value(pre + "w_s"), da_s, p.grad(pre + "w_s"), p.grad(pre + "b_s"));
        if (l > 1) kernels::axpy(1.0, dsum.data(), dh[b].data(), dsum.size());
      }
    }
    out.bn_batch.insert(out.bn_batch.begin(), lc.bn);
  }

  if (generated && cfg.cond_source == CondSource::external) {
    for (std::size_t b = 0; b < n; ++b) {
      generate_external_backward(cache.external[b], dgamma[b], dbeta[b], p, layout);
    }
  }
  for (const auto& e : p.entries()) {
    if (!e.grad.all_finite()) throw NumericError("non-finite gradient for '" + e.name + "'");
  }
  return out;
}

void commit_running_stats(Model& model, const LossResult& r) {
  if (r.bn_batch.size() != model.bn.size()) {
    throw ShapeError("commit_running_stats: layer count mismatch");
  }
  for (std::size_t l = 0; l < model.bn.size(); ++l) commit_running_stats(model.bn[l], r.bn_batch[l]);
}

}  // namespace dfilm
