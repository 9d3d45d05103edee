// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dfilm/diagnostics.hpp"
#include "dfilm/model.hpp"
#include "oracles/model_oracle.hpp"
#include "test_util.hpp"

using namespace dfilm;

namespace {

namespace fs = std::filesystem;

Dataset random_dataset(const ModelConfig& cfg, const std::vector<std::size_t>& lengths,
                       const std::vector<std::string>& dialects, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.feature_dim = cfg.input_dim;
  d.num_classes = cfg.num_classes;
  for (std::size_t u = 0; u < lengths.size(); ++u) {
    Utterance utt;
    utt.id = "u" + std::to_string(u);
    utt.dialect = dialects[u];
    utt.frames = testutil::random_tensor({lengths[u], cfg.input_dim}, rng, 1.5);
    for (std::size_t t = 0; t < lengths[u]; ++t)
      utt.labels.push_back(static_cast<int>(rng.below(cfg.num_classes)));
    d.utterances.push_back(std::move(utt));
  }
  return d;
}

std::vector<oracle::Utt> oracle_batch(const Dataset& d) {
  std::vector<oracle::Utt> out;
  for (const auto& u : d.utterances) out.push_back({testutil::to_mat(u.frames), u.dialect});
  return out;
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> idx(d.utterances.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

// Largest |logit - oracle| over unpadded frames.
double oracle_gap(const Model& m, const Dataset& d, bool train) {
  const PaddedBatch batch = make_batch(d, all_indices(d));
  const ForwardResult r = forward(m, batch, train ? Mode::train : Mode::infer);
  const auto ref = oracle::model_forward(m, oracle_batch(d), train);
  double gap = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t t = 0; t < batch.lengths[b]; ++t)
      for (std::size_t k = 0; k < m.config.num_classes; ++k)
        gap = std::max(gap, std::abs(r.logits(b, t, k) - ref[b][t][k]));
  return gap;
}

std::vector<std::string> dialects_for(const ModelConfig& cfg, std::size_t n) {
  std::vector<std::string> out;
  const auto names = cfg.vocabulary.names();
  for (std::size_t i = 0; i < n; ++i) out.push_back(names.empty() ? "a" : names[i % names.size()]);
  return out;
}

ModelConfig full_scale_base() {
  ModelConfig c;
  c.num_layers = 4;
  c.hidden = 640;
  c.input_dim = 80;
  c.num_classes = 100;
  return c;
}

const std::vector<std::string> kSevenDialects = {"us", "chi", "ger", "esp", "frn", "ita", "por"};

}  // namespace

TEST_CASE("parameter count: hand-counted toy") {
  ModelConfig c;
  c.num_layers = 1;
  c.input_dim = 2;
  c.hidden = 3;
  c.lookahead_tau = 1;
  c.num_classes = 2;
  CHECK(count_params(c) == 110);
  CHECK(build_model(c, 1).params.num_scalars() == 110);
}

TEST_CASE("parameter count agrees with the built store for every variant") {
  for (Variant v : kAllVariants) {
    const ModelConfig c = toy_config(v);
    CHECK(build_model(c, 3).params.num_scalars() == count_params(c));
  }
}

TEST_CASE("full-scale widths and size ordering") {
  const ModelConfig m9 = variant_config(Variant::M9, full_scale_base(), kSevenDialects);
  const ModelConfig m6 = variant_config(Variant::M6, full_scale_base(), kSevenDialects);
  CHECK(m9.conditioning_layout().film_width() == 640);
  CHECK(m6.conditioning_layout().film_width() == 2560);
  const ModelConfig m3 = variant_config(Variant::M3, full_scale_base(), kSevenDialects);
  CHECK(m3.layer_input_width(1) == 87);
  CHECK(m3.layer_input_width(2) == 640);

  const ModelConfig m1 = variant_config(Variant::M1, full_scale_base(), kSevenDialects);
  const ModelConfig m4 = variant_config(Variant::M4, full_scale_base(), kSevenDialects);
  const ModelConfig m7 = variant_config(Variant::M7, full_scale_base(), kSevenDialects);
  CHECK(count_params(m4) > count_params(m7));
  CHECK(count_params(m7) > count_params(m1));
  // Input-position heads are 4x wider: two heads of (combiner + 1) x (4HL - HL) extra.
  const std::size_t extra = 2 * (m4.generator.combiner + 1) * (3 * 640 * 4);
  CHECK(count_params(m4) - count_params(m7) == extra);
}

TEST_CASE("build_model is deterministic and follows the initialization rules") {
  const ModelConfig c = toy_config(Variant::M9);
  const Model a = build_model(c, 7), b = build_model(c, 7), other = build_model(c, 8);
  CHECK(a == b);
  CHECK_FALSE(a == other);
  const double bound = 1.0 / std::sqrt(4.0);
  for (double w : a.params.value("layer1.w_x").values()) CHECK(std::abs(w) <= bound);
  const Tensor& bias = a.params.value("layer2.bias");
  for (std::size_t k = 0; k < 16; ++k) CHECK(bias[k] == (k >= 4 && k < 8 ? 1.0 : 0.0));
  const Tensor& la = a.params.value("layer1.lookahead");
  CHECK(la.shape() == Shape{3, 4});
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 4; ++k) CHECK(la(j, k) == (j == 0 ? 1.0 : 0.0));
  for (double g : a.params.value("layer1.bn_gamma").values()) CHECK(g == 1.0);
  CHECK_THROWS_AS(variant_config(Variant::M10, c, {"a"}, 0.0), ConfigError);
}

TEST_CASE("config JSON round trip and strictness") {
  for (Variant v : kAllVariants) {
    const ModelConfig c = toy_config(v);
    CHECK(config_from_json(config_to_json(c)) == c);
  }
  CHECK_THROWS_AS(config_from_json(R"({"hidden": 4, "bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(config_from_json("not json"), ConfigError);
  CHECK(parse_variant("M10") == Variant::M10);
  CHECK_THROWS_AS(parse_variant("M11"), ConfigError);
}

TEST_CASE("forward matches the straight-line oracle for every variant") {
  for (Variant v : kAllVariants) {
    ModelConfig c = toy_config(v);
    Model m = build_model(c, 11);
    randomize_params(m, 12);
    Rng rng(13);
    for (auto& s : m.bn) {
      for (std::size_t k = 0; k < s.running_mean.size(); ++k) {
        s.running_mean[k] = rng.uniform(-0.5, 0.5);
        s.running_var[k] = rng.uniform(0.5, 2.0);
      }
    }
    const Dataset d = random_dataset(c, {5, 3, 4}, dialects_for(c, 3), 14);
    INFO("variant " << variant_name(v));
    CHECK(oracle_gap(m, d, true) < 1e-12);
    CHECK(oracle_gap(m, d, false) < 1e-12);
  }
}

TEST_CASE("two-frame, two-class model matches the oracle") {
  ModelConfig base;
  base.num_layers = 1;
  base.hidden = 2;
  base.input_dim = 2;
  base.num_classes = 2;
  base.lookahead_tau = 1;
  base.generator = {3, 2, 3};
  for (Variant v : {Variant::M1, Variant::M6, Variant::M9}) {
    const ModelConfig c = variant_config(v, base, {"a", "b"});
    Model m = build_model(c, 21);
    randomize_params(m, 22);
    const Dataset d = random_dataset(c, {2}, {"b"}, 23);
    CHECK(oracle_gap(m, d, false) < 1e-12);
  }
}

TEST_CASE("identity FiLM reproduces the unconditioned model") {
  const ModelConfig c1 = toy_config(Variant::M1);
  const Dataset d = random_dataset(c1, {5, 4}, {"a", "b"}, 31);
  const PaddedBatch batch = make_batch(d, {0, 1});
  for (Variant v : {Variant::M5, Variant::M6, Variant::M8, Variant::M9, Variant::M10}) {
    const Model cond = build_model(toy_config(v), 32);
    Model plain = build_model(c1, 99);
    plain.params.copy_matching_values(cond.params);
    const Tensor a = forward(cond, batch, Mode::train).logits;
    const Tensor b = forward(plain, batch, Mode::train).logits;
    CHECK(max_abs_diff(a, b) <= 1e-12);
  }
  // External heads start at gamma = 0.75: close, but not identical.
  for (Variant v : {Variant::M4, Variant::M7}) {
    const Model cond = build_model(toy_config(v), 33);
    Model plain = build_model(c1, 99);
    plain.params.copy_matching_values(cond.params);
    const double gap = max_abs_diff(forward(cond, batch, Mode::train).logits,
                                    forward(plain, batch, Mode::train).logits);
    CHECK(gap < 0.3);
    CHECK(gap > 0.0);
  }
  // Injected identity vectors behave the same for any conditioned model.
  Model m4 = build_model(toy_config(Variant::M4), 34);
  randomize_params(m4, 35);
  Model plain = build_model(c1, 99);
  plain.params.copy_matching_values(m4.params);
  const std::vector<FilmParams> ident(2, FilmParams::identity(CondPosition::input, 2, 4));
  CHECK(max_abs_diff(forward(m4, batch, Mode::train, &ident).logits,
                     forward(plain, batch, Mode::train).logits) <= 1e-12);
}

TEST_CASE("softmax rows and loss edge cases") {
  ModelConfig c = toy_config(Variant::M1);
  Model m = build_model(c, 41);
  randomize_params(m, 42);
  const Dataset d = random_dataset(c, {5, 2}, {"a", "b"}, 43);
  const PaddedBatch batch = make_batch(d, {0, 1});
  const ForwardResult r = forward(m, batch, Mode::train);
  for (const auto& p : r.cache.probs) {
    for (std::size_t t = 0; t < p.rows(); ++t) {
      double s = 0.0;
      for (double v : p.row(t)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  for (std::size_t k = 0; k < 3; ++k) CHECK(r.logits(1, 3, k) == 0.0);  // padding

  ModelConfig c4 = c;
  c4.num_classes = 4;
  Model u = build_model(c4, 44);
  u.params.value("softmax.w").fill(0.0);
  const Dataset d4 = random_dataset(c4, {3, 2}, {"a", "a"}, 45);
  CHECK(std::abs(loss_only(u, make_batch(d4, {0, 1})) - std::log(4.0)) < 1e-15);

  Dataset sure = d4;
  for (auto& utt : sure.utterances) std::fill(utt.labels.begin(), utt.labels.end(), 2);
  u.params.value("softmax.b")[2] = 60.0;
  CHECK(loss_only(u, make_batch(sure, {0, 1})) < 1e-20);

  Dataset bad = d4;
  bad.utterances[0].labels[0] = 4;
  CHECK_THROWS_AS(loss_only(u, make_batch(bad, {0, 1})), ConfigError);
}

TEST_CASE("dialect labels are validated") {
  const Model m = build_model(toy_config(Variant::M9), 51);
  const Dataset d = random_dataset(m.config, {3, 3}, {"a", "zz"}, 52);
  CHECK_THROWS_AS(forward(m, make_batch(d, {0, 1}), Mode::infer), ConfigError);
  PaddedBatch missing = make_batch(d, {0});
  missing.dialects[0].clear();
  CHECK_THROWS_AS(forward(m, missing, Mode::infer), ConfigError);
  // Dialect-unaware models ignore labels entirely.
  const Model m1 = build_model(toy_config(Variant::M1), 51);
  CHECK_NOTHROW(forward(m1, make_batch(d, {0, 1}), Mode::infer));
  // M9 has no unknown entry.
  PaddedBatch unk = make_batch(d, {0});
  unk.dialects[0] = "unknown";
  CHECK_THROWS_AS(forward(m, unk, Mode::infer), ConfigError);
  const Model m10 = build_model(toy_config(Variant::M10), 51);
  CHECK_NOTHROW(forward(m10, unk, Mode::infer));
}

TEST_CASE("external-only models are independent of other batch members in infer mode") {
  for (Variant v : {Variant::M4, Variant::M7}) {
    Model m = build_model(toy_config(v), 61);
    randomize_params(m, 62);
    Dataset d = random_dataset(m.config, {4, 6, 4}, {"a", "b", "a"}, 63);
    d.utterances[2].frames = d.utterances[0].frames;
    const ForwardResult r = forward(m, make_batch(d, {0, 1, 2}), Mode::infer);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t k = 0; k < 3; ++k) CHECK(r.logits(0, t, k) == r.logits(2, t, k));
  }
}

TEST_CASE("infer-mode logits do not depend on padding or batch company") {
  for (Variant v : kAllVariants) {
    Model m = build_model(toy_config(v), 71);
    randomize_params(m, 72);
    const Dataset d = random_dataset(m.config, {3, 7, 5}, dialects_for(m.config, 3), 73);
    const ForwardResult all = forward(m, make_batch(d, {0, 1, 2}), Mode::infer);
    const ForwardResult alone = forward(m, make_batch(d, {0}), Mode::infer);
    double gap = 0.0;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t k = 0; k < 3; ++k)
        gap = std::max(gap, std::abs(all.logits(0, t, k) - alone.logits(0, t, k)));
    CHECK(gap <= 1e-10);
  }
}

TEST_CASE("loss_and_grads leaves running statistics alone until committed") {
  Model m = build_model(toy_config(Variant::M1), 81);
  const PaddedBatch batch = toy_batch(m.config, 82);
  const Model before = m;
  const LossResult r = loss_and_grads(m, batch);
  CHECK(r.frames == 8);
  CHECK(std::abs(r.loss - loss_only(before, batch)) < 1e-12);
  CHECK(m.bn[0].running_mean == before.bn[0].running_mean);
  commit_running_stats(m, r);
  CHECK_FALSE(m.bn[0].running_mean == before.bn[0].running_mean);
}

TEST_CASE("end-to-end gradient check for every variant") {
  for (std::uint64_t seed : {1u, 2u}) {
    for (Variant v : kAllVariants) {
      const GradCheckResult g = variant_grad_check(v, seed);
      INFO(variant_name(v) << " seed " << seed << " worst " << g.worst_param << "["
                           << g.worst_index << "] analytic " << g.worst_analytic << " numeric "
                           << g.worst_numeric);
      CHECK(g.max_rel_error < 1e-4);
      CHECK(g.coordinates == count_params(toy_config(v)));
    }
  }
}

TEST_CASE("model file round trip is bit-exact") {
  const fs::path dir = fs::temp_directory_path() / "dfilm_test_model";
  fs::create_directories(dir);
  for (Variant v : {Variant::M1, Variant::M3, Variant::M7, Variant::M10}) {
    Model m = build_model(toy_config(v), 91);
    randomize_params(m, 92);
    m.bn[1].running_mean[3] = 0.1234567890123;
    const fs::path path = dir / ("m" + variant_name(v) + ".bin");
    save_model(m, path);
    const Model back = load_model(path);
    CHECK(back == m);
    const PaddedBatch batch = toy_batch(m.config, 93);
    CHECK(forward(back, batch, Mode::infer).logits == forward(m, batch, Mode::infer).logits);

    // Saving twice yields identical bytes.
    const fs::path again = dir / "again.bin";
    save_model(back, again);
    std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);

    // Truncation, trailing bytes and a bad magic are rejected.
    {
      std::ofstream t(dir / "trunc.bin", std::ios::binary);
      t << sa.substr(0, sa.size() - 5);
    }
    CHECK_THROWS_AS(load_model(dir / "trunc.bin"), IoError);
    {
      std::ofstream t(dir / "trail.bin", std::ios::binary);
      t << sa << 'x';
    }
    CHECK_THROWS_AS(load_model(dir / "trail.bin"), IoError);
    {
      std::ofstream t(dir / "magic.bin", std::ios::binary);
      t << "NOTAMODL" << sa.substr(8);
    }
    CHECK_THROWS_AS(load_model(dir / "magic.bin"), IoError);
  }
  CHECK_THROWS_AS(load_model(dir / "does-not-exist.bin"), IoError);
  fs::remove_all(dir);
}
