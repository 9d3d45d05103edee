// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion with the
// measured numbers and exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dfilm/conditioning.hpp"
#include "dfilm/diagnostics.hpp"
#include "dfilm/eval.hpp"
#include "dfilm/layers.hpp"
#include "dfilm/model.hpp"
#include "dfilm/run_config.hpp"
#include "dfilm/train.hpp"
#include "test_util.hpp"

using namespace dfilm;
using testutil::random_tensor;
using testutil::to_mat;
using testutil::to_vec;

namespace {

namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++g_failures;
  std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_diff_vec(const Tensor& t, const oracle::Vec& v) {
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) d = std::max(d, std::abs(t[i] - v[i]));
  return d;
}

oracle::Vec slice(const oracle::Vec& v, std::size_t from, std::size_t n) {
  return {v.begin() + static_cast<std::ptrdiff_t>(from),
          v.begin() + static_cast<std::ptrdiff_t>(from + n)};
}

Dataset random_dataset(const ModelConfig& cfg, const std::vector<std::size_t>& lengths,
                       std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.feature_dim = cfg.input_dim;
  d.num_classes = cfg.num_classes;
  const auto names = cfg.vocabulary.names();
  for (std::size_t u = 0; u < lengths.size(); ++u) {
    Utterance utt;
    utt.id = "u" + std::to_string(u);
    utt.dialect = names.empty() ? "a" : names[u % names.size()];
    utt.frames = random_tensor({lengths[u], cfg.input_dim}, rng, 1.5);
    for (std::size_t t = 0; t < lengths[u]; ++t)
      utt.labels.push_back(static_cast<int>(rng.below(cfg.num_classes)));
    d.utterances.push_back(std::move(utt));
  }
  return d;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_variant;
  for (Variant v : kAllVariants) {
    const GradCheckResult g = variant_grad_check(v, 1);
    if (g.max_rel_error >= worst) {
      worst = g.max_rel_error;
      worst_variant = variant_name(v);
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-4 && secs < 120.0,
          fmt("worst relative error %.2e (%s), %.1f s for all variants", worst,
              worst_variant.c_str(), secs)};
}

Outcome film_identity() {
  const ModelConfig c1 = toy_config(Variant::M1);
  const Dataset d = random_dataset(c1, {5, 4}, 31);
  const PaddedBatch batch = make_batch(d, {0, 1});
  // Injected gamma = 1, beta = 0 into every conditioned variant, trained-looking weights.
  double injected = 0.0;
  for (Variant v : {Variant::M4, Variant::M5, Variant::M6, Variant::M7, Variant::M8, Variant::M9,
                    Variant::M10}) {
    Model cond = build_model(toy_config(v), 32);
    randomize_params(cond, 33);
    Model plain = build_model(c1, 99);
    plain.params.copy_matching_values(cond.params);
    const std::vector<FilmParams> ident(
        2, FilmParams::identity(cond.config.cond_position, cond.config.num_layers, cond.config.hidden));
    for (Mode mode : {Mode::train, Mode::infer})
      injected = std::max(injected, max_abs_diff(forward(cond, batch, mode, &ident).logits,
                                                 forward(plain, batch, mode).logits));
  }
  // Summary-driven generators start at the identity without injection.
  double initial = 0.0;
  for (Variant v : {Variant::M5, Variant::M6, Variant::M8, Variant::M9, Variant::M10}) {
    const Model cond = build_model(toy_config(v), 32);
    Model plain = build_model(c1, 99);
    plain.params.copy_matching_values(cond.params);
    for (Mode mode : {Mode::train, Mode::infer})
      initial = std::max(initial, max_abs_diff(forward(cond, batch, mode).logits,
                                               forward(plain, batch, mode).logits));
  }
  return {injected <= 1e-12 && initial <= 1e-12,
          fmt("max logit gap %.1e with injected identity (M4-M10), %.1e at initialization "
              "(summary-driven variants)",
              injected, initial)};
}

Outcome widths() {
  ModelConfig base;
  base.num_layers = 4;
  base.hidden = 640;
  base.input_dim = 80;
  base.num_classes = 100;
  const std::vector<std::string> dialects = {"us", "chi", "ger", "esp", "frn", "ita", "por"};
  const ModelConfig m4 = variant_config(Variant::M4, base, dialects);
  const ModelConfig m7 = variant_config(Variant::M7, base, dialects);
  const std::size_t out_w = variant_config(Variant::M9, base, dialects).conditioning_layout().film_width();
  const std::size_t in_w = variant_config(Variant::M6, base, dialects).conditioning_layout().film_width();
  const std::size_t expected = 2 * (m4.generator.combiner + 1) * (3 * 640 * 4);
  const std::size_t diff = count_params(m4) - count_params(m7);
  return {out_w == 640 && in_w == 2560 && in_w == 4 * out_w && diff == expected,
          fmt("output width %zu, input width %zu, M4 - M7 = %zu parameters (expected %zu)", out_w,
              in_w, diff, expected)};
}

Outcome relabel() {
  const std::vector<std::string> labels(10000, "chi");
  Rng rng(1);
  const auto out = relabel_unknown(labels, 0.1, rng);
  const double frac =
      static_cast<double>(std::count(out.begin(), out.end(), std::string(DialectVocabulary::kUnknown))) /
      10000.0;
  return {frac >= 0.091 && frac <= 0.109, fmt("unknown fraction %.4f over 10000 labels", frac)};
}

// The suite run is shared by the trend and clustering criteria.
struct SuiteRun {
  EvalReport report;
  std::vector<std::pair<double, double>> m9_cluster;  // (first, last) per seed
  double seconds = 0.0;
};

SuiteRun run_suite() {
  RunConfig rc;  // every variant, seeds 1-3
  const DatasetBundle bundle = synth_generate(make_synth_spec(rc.synth), 11);
  const SuiteConfig sc = make_suite_config(rc, bundle.train.feature_dim, bundle.train.num_classes);
  SuiteRun run;
  SuiteHooks hooks;
  hooks.model = [&](Variant v, std::uint64_t, const std::string&, const Model& m) {
    if (v != Variant::M9) return;
    const auto dump = dump_film(m, bundle.dev, default_policy(m.config), bundle.native);
    run.m9_cluster.emplace_back(cluster_score(dump, 1), cluster_score(dump, m.config.num_layers));
  };
  const auto t0 = std::chrono::steady_clock::now();
  run.report = compare_suite(bundle, sc, rc.seeds, hooks);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

Outcome trends(const SuiteRun& run) {
  const EvalReport& r = run.report;
  const ReportRow *m1 = r.row(Variant::M1), *m9 = r.row(Variant::M9), *m10 = r.row(Variant::M10);
  if (!m1 || !m9 || !m10 || m1->seeds != 3 || m9->seeds != 3 || m10->seeds != 3)
    return {false, "suite did not complete every seed"};
  const std::string held = r.held_out.at(0);
  const double rel_gain = (m1->overall_seen - m9->overall_seen) / m1->overall_seen;
  const double k9 = r.score(Variant::M9, held), k10 = r.score(Variant::M10, held);
  const double seen_gap = std::abs(m10->overall_seen - m9->overall_seen) / m9->overall_seen;
  return {rel_gain >= 0.02 && k10 < k9 && seen_gap <= 0.05 && run.seconds < 45 * 60,
          fmt("seen M1 %.4f M9 %.4f (gain %.1f%%); %s M9 %.4f M10 %.4f; M10 seen %.4f "
              "(%.1f%% from M9); full suite %.0f s for 3 seeds",
              m1->overall_seen, m9->overall_seen, 100 * rel_gain, held.c_str(), k9, k10,
              m10->overall_seen, 100 * seen_gap, run.seconds)};
}

Outcome clustering(const SuiteRun& run) {
  int wins = 0;
  std::ostringstream s;
  for (const auto& [first, last] : run.m9_cluster) {
    if (last > first) ++wins;
    s << fmt(" (%.3f -> %.3f)", first, last);
  }
  return {run.m9_cluster.size() == 3 && wins >= 2,
          fmt("last layer above first in %d of %zu seeds:", wins, run.m9_cluster.size()) + s.str()};
}

Outcome invariants() {
  std::vector<std::string> broken;
  Rng rng(5);

  // Train-mode BN standardizes pooled unpadded frames; padding is inert.
  {
    std::vector<Tensor> xs = {random_tensor({4, 3}, rng, 3.0), random_tensor({6, 3}, rng, 3.0)};
    std::vector<FrameMask> masks = {FrameMask(4, 1.0), FrameMask(6, 1.0)};
    masks[1][4] = masks[1][5] = 0.0;
    BatchNormState st = BatchNormState::fresh(3);
    st.epsilon = 1e-14;
    const Tensor gamma({3}, 1.0), beta({3}, 0.0);
    const auto y = batch_norm_forward(xs, masks, gamma, beta, st, nullptr);
    xs[1](4, 0) = 1e6;
    const auto y2 = batch_norm_forward(xs, masks, gamma, beta, st, nullptr);
    for (std::size_t j = 0; j < 3; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < y[b].dim(0); ++t)
          if (masks[b][t] > 0) m += y[b](t, j), v += y[b](t, j) * y[b](t, j);
      if (std::abs(m / 8) > 1e-9 || std::abs(v / 8 - 1) > 1e-9) broken.push_back("bn stats");
    }
    if (!(y[1] == y2[1])) broken.push_back("bn padding");
  }
  // Infer-mode logits do not depend on batch company or padding.
  for (Variant v : kAllVariants) {
    Model m = build_model(toy_config(v), 71);
    randomize_params(m, 72);
    const Dataset d = random_dataset(m.config, {3, 7, 5}, 73);
    const Tensor all = forward(m, make_batch(d, {0, 1, 2}), Mode::infer).logits;
    const Tensor alone = forward(m, make_batch(d, {0}), Mode::infer).logits;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < 3; ++k)
        if (std::abs(all(0, t, k) - alone(0, t, k)) > 1e-10) broken.push_back("padding " + variant_name(v));
  }
  // File round trips and deterministic reruns.
  const fs::path dir = fs::temp_directory_path() / "dfilm_acceptance";
  fs::create_directories(dir);
  Model m = build_model(toy_config(Variant::M10), 7);
  randomize_params(m, 8);
  save_model(m, dir / "m.bin");
  if (!(load_model(dir / "m.bin") == m)) broken.push_back("model round trip");
  SynthOptions so;
  so.native_train = 20;
  so.nonnative_train = 5;
  so.dev_per_dialect = 2;
  so.test_per_dialect = 2;
  const DatasetBundle b = synth_generate(make_synth_spec(so), 4);
  save_dataset(b.train, dir / "train.jsonl");
  if (!(load_dataset(dir / "train.jsonl") == b.train)) broken.push_back("dataset round trip");
  if (!(synth_generate(make_synth_spec(so), 4).train == b.train)) broken.push_back("synth rerun");
  ModelConfig base;
  base.hidden = 4;
  base.input_dim = so.feature_dim;
  base.num_classes = so.num_classes;
  TrainConfig tc;
  tc.max_epochs = 2;
  const ModelConfig cfg = variant_config(Variant::M10, base, b.train_dialects);
  Model r1 = build_model(cfg, 3), r2 = build_model(cfg, 3);
  const TrainLog l1 = train(r1, b.train, b.dev, tc), l2 = train(r2, b.train, b.dev, tc);
  if (!(r1 == r2) || train_log_json(l1) != train_log_json(l2)) broken.push_back("training rerun");
  fs::remove_all(dir);

  std::string detail = "batch norm, padding, round trips and reruns hold";
  if (!broken.empty()) {
    detail = "broken:";
    for (const auto& s : broken) detail += " " + s;
  }
  return {broken.empty(), detail};
}

ConditioningLayout layout_for(CondSource source, CondPosition position) {
  ConditioningLayout l;
  l.source = source;
  l.position = position;
  l.num_layers = 2;
  l.hidden = 3;
  l.summary_widths = {4, 3};
  l.dialects = 3;
  l.widths = {5, 2, 4};
  return l;
}

void scramble(ParamStore& p, Rng& rng) {
  for (auto& e : p.entries())
    for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = rng.uniform(-0.8, 0.8);
}

Outcome oracles() {
  Rng rng(17);
  double summary = 0.0, lstm = 0.0, ext = 0.0, inn = 0.0, comb = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    // Time-averaged summary.
    const std::size_t t = 1 + rng.below(6), in = 1 + rng.below(4), s = 1 + rng.below(4);
    const Tensor h = random_tensor({t, in}, rng, 2.0);
    const Tensor w = random_tensor({in, s}, rng), b = random_tensor({s}, rng);
    oracle::Mat act;
    for (const auto& row : to_mat(h)) act.push_back(oracle::dense(row, to_mat(w), to_vec(b), true));
    summary = std::max(summary, max_diff_vec(summarize_utterance(h, {}, w, b), oracle::time_mean(act)));

    // Single LSTM step.
    const std::size_t hid = 1 + rng.below(4);
    const Tensor z = random_tensor({1, 4 * hid}, rng, 2.0);
    const Tensor w_h = random_tensor({hid, 4 * hid}, rng), bias = random_tensor({4 * hid}, rng);
    const Tensor out = lstm_recurrence_forward(z, w_h, bias, {}, {}, nullptr);
    lstm = std::max(lstm, testutil::max_diff(out, oracle::lstm(to_mat(z), to_mat(w_h), to_vec(bias))));

    // Generators.
    const auto pos = rep % 2 ? CondPosition::input : CondPosition::output;
    const std::size_t width = film_width(pos, 3);
    Tensor d({3});
    d[rng.below(3)] = 1.0;
    const auto le = layout_for(CondSource::external, pos);
    ParamStore pe;
    init_conditioning(pe, le, rng);
    scramble(pe, rng);
    const FilmParams fe = generate_external(d, pe, le);
    const auto m = [&](const ParamStore& p, const std::string& n) { return to_mat(p.value(n)); };
    const auto v = [&](const ParamStore& p, const std::string& n) { return to_vec(p.value(n)); };
    const auto a_d = oracle::dense(to_vec(d), m(pe, "gen.ext.w_d"), v(pe, "gen.ext.b_d"), true);
    const auto a_c = oracle::dense(a_d, m(pe, "gen.ext.w_c"), v(pe, "gen.ext.b_c"), true);
    const auto g_all = oracle::dense(a_c, m(pe, "gen.ext.w_gamma"), v(pe, "gen.ext.b_gamma"), true);
    const auto b_all = oracle::dense(a_c, m(pe, "gen.ext.w_beta"), v(pe, "gen.ext.b_beta"), true);
    for (std::size_t l = 0; l < 2; ++l) {
      ext = std::max(ext, max_diff_vec(fe.gamma[l], slice(g_all, l * width, width)));
      ext = std::max(ext, max_diff_vec(fe.beta[l], slice(b_all, l * width, width)));
    }

    const auto li = layout_for(CondSource::internal, pos);
    ParamStore pi;
    init_conditioning(pi, li, rng);
    scramble(pi, rng);
    const auto lc = layout_for(CondSource::both, pos);
    ParamStore pc;
    init_conditioning(pc, lc, rng);
    scramble(pc, rng);
    for (std::size_t l = 1; l <= 2; ++l) {
      const std::string pre = layer_prefix(l);
      const Tensor a_s = random_tensor({5}, rng);
      const FilmLayer fi = generate_internal(a_s, pi, li, l);
      const auto ac_i = oracle::dense(to_vec(a_s), m(pi, pre + "w_c"), v(pi, pre + "b_c"), true);
      inn = std::max(inn, max_diff_vec(fi.gamma, oracle::dense(ac_i, m(pi, pre + "w_gamma"), v(pi, pre + "b_gamma"), false)));
      inn = std::max(inn, max_diff_vec(fi.beta, oracle::dense(ac_i, m(pi, pre + "w_beta"), v(pi, pre + "b_beta"), false)));

      const Tensor a_s2 = random_tensor({2}, rng);
      const FilmLayer fc = generate_combined(d, a_s2, pc, lc, l);
      auto cat = oracle::dense(to_vec(d), m(pc, pre + "w_d"), v(pc, pre + "b_d"), true);
      for (double x : to_vec(a_s2)) cat.push_back(x);
      const auto ac_c = oracle::dense(cat, m(pc, pre + "w_c"), v(pc, pre + "b_c"), true);
      comb = std::max(comb, max_diff_vec(fc.gamma, oracle::dense(ac_c, m(pc, pre + "w_gamma"), v(pc, pre + "b_gamma"), false)));
      comb = std::max(comb, max_diff_vec(fc.beta, oracle::dense(ac_c, m(pc, pre + "w_beta"), v(pc, pre + "b_beta"), false)));
    }
  }
  const double worst = std::max({summary, lstm, ext, inn, comb});
  return {worst < 1e-12,
          fmt("100 cases each, max gap: summary %.1e, lstm step %.1e, external %.1e, "
              "internal %.1e, combined %.1e",
              summary, lstm, ext, inn, comb)};
}

}  // namespace

int main() {
  report(1, "gradient check, every variant", gradients);
  report(2, "FiLM identity", film_identity);
  report(3, "FiLM widths and generator size", widths);
  report(4, "unknown relabel fraction", relabel);
  std::printf("training every variant on the default bundle over 3 seeds...\n");
  std::fflush(stdout);
  SuiteRun run;
  std::string suite_error;
  try {
    run = run_suite();
  } catch (const std::exception& e) {
    suite_error = e.what();
  }
  report(5, "ablation trends", [&] {
    return suite_error.empty() ? trends(run) : Outcome{false, "suite failed: " + suite_error};
  });
  report(6, "FiLM clustering grows with depth", [&] {
    return suite_error.empty() ? clustering(run) : Outcome{false, "suite failed: " + suite_error};
  });
  report(7, "infrastructure invariants", invariants);
  report(8, "oracle equivalence", oracles);
  std::printf("%d of 8 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
