// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>

#include "dfilm/eval.hpp"

namespace dfilm {
namespace {

struct Accum {
  std::vector<double> per_dialect;
  double seen = 0.0;
  double all = 0.0;
  std::size_t seeds = 0;
  std::string failure;
};

void note(const SuiteHooks& hooks, const std::string& msg) {
  if (hooks.log) hooks.log(msg);
}

// Error table of M2: every dialect is scored by the model fine-tuned on it;
// held-out dialects fall back to the native model.
ErrorTable evaluate_m2(const DatasetBundle& bundle, const SuiteConfig& config, std::uint64_t seed,
                       const Model& m1, const SuiteHooks& hooks) {
  ErrorTable table;
  std::vector<std::pair<std::string, Model>> tuned;
  for (const auto& d : bundle.train_dialects) {
    Model m = m1;
    TrainConfig tc = config.fine_tune;
    tc.seed = seed;
    fine_tune(m, bundle.train.filter_dialect(d), bundle.dev.filter_dialect(d), tc);
    if (hooks.model) hooks.model(Variant::M2, seed, d, m);
    tuned.emplace_back(d, std::move(m));
  }
  for (const auto& d : bundle.test.dialects()) {
    const Model* use = nullptr;
    for (const auto& [name, m] : tuned) {
      if (name == d) use = &m;
    }
    if (use == nullptr) {
      for (const auto& [name, m] : tuned) {
        if (name == bundle.native) use = &m;
      }
    }
    if (use == nullptr) use = &m1;
    const ErrorTable t = frame_error_rate(*use, bundle.test.filter_dialect(d),
                                          DialectPolicy::native_fallback, bundle.native,
                                          config.eval_batch_size);
    for (const auto& s : t.dialects) table.add(s.dialect, s.frames, s.errors);
  }
  return table;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

EvalReport compare_suite(const DatasetBundle& bundle, const SuiteConfig& config,
                         const std::vector<std::uint64_t>& seeds, const SuiteHooks& hooks) {
  if (seeds.empty()) throw ConfigError("compare: at least one seed is required");
  if (config.variants.empty()) throw ConfigError("compare: no variants requested");
  if (bundle.train.utterances.empty() || bundle.test.utterances.empty()) {
    throw ConfigError("compare: bundle needs training and test data");
  }
  EvalReport report;
  report.dialects = bundle.test.dialects();
  report.held_out = bundle.held_out;
  report.seeds = seeds;

  std::vector<Variant> variants = config.variants;
  std::sort(variants.begin(), variants.end());
  variants.erase(std::unique(variants.begin(), variants.end()), variants.end());
  const bool want_m1 = std::find(variants.begin(), variants.end(), Variant::M1) != variants.end();
  const bool want_m2 = std::find(variants.begin(), variants.end(), Variant::M2) != variants.end();

  std::vector<Accum> acc(variants.size());
  for (auto& a : acc) a.per_dialect.assign(report.dialects.size(), 0.0);

  auto record = [&](std::size_t row, const ErrorTable& t) {
    Accum& a = acc[row];
    for (std::size_t d = 0; d < report.dialects.size(); ++d) {
      const DialectScore* s = t.find(report.dialects[d]);
      a.per_dialect[d] += s ? s->rate() : 0.0;
    }
    a.seen += t.overall_excluding(report.held_out);
    a.all += t.overall();
    ++a.seeds;
  };
  auto fail = [&](std::size_t row, std::uint64_t seed, const std::string& why) {
    Accum& a = acc[row];
    if (!a.failure.empty()) a.failure += "; ";
    a.failure += "seed " + std::to_string(seed) + ": " + why;
    note(hooks, variant_name(variants[row]) + " seed " + std::to_string(seed) + " failed: " + why);
  };

  for (const auto seed : seeds) {
    std::optional<Model> m1;
    std::string m1_failure;
    if (want_m2 && !want_m1) {
      try {
        Model model = build_model(
            variant_config(Variant::M1, config.base, bundle.train_dialects, config.unknown_prob),
            seed);
        TrainConfig tc = config.train;
        tc.seed = seed;
        note(hooks, "M1 seed " + std::to_string(seed) + ": training as the M2 base");
        train(model, bundle.train, bundle.dev, tc);
        m1 = std::move(model);
      } catch (const NumericError& e) {
        m1_failure = e.what();
      }
    }
    for (std::size_t row = 0; row < variants.size(); ++row) {
      const Variant v = variants[row];
      try {
        if (v == Variant::M2) {
          if (!m1) {
            fail(row, seed, m1_failure.empty() ? "M1 unavailable" : "M1 failed");
            continue;
          }
          note(hooks, "M2 seed " + std::to_string(seed) + ": fine-tuning per dialect");
          record(row, evaluate_m2(bundle, config, seed, *m1, hooks));
          continue;
        }
        const ModelConfig cfg =
            variant_config(v, config.base, bundle.train_dialects, config.unknown_prob);
        Model model = build_model(cfg, seed);
        TrainConfig tc = config.train;
        tc.seed = seed;
        note(hooks, variant_name(v) + " seed " + std::to_string(seed) + ": training");
        const TrainLog log = train(model, bundle.train, bundle.dev, tc);
        note(hooks, variant_name(v) + " seed " + std::to_string(seed) + ": best dev error " +
                        percent(log.best_dev_error) + "% at epoch " +
                        std::to_string(log.best_epoch));
        if (hooks.model) hooks.model(v, seed, "", model);
        record(row, frame_error_rate(model, bundle.test, default_policy(cfg), bundle.native,
                                     config.eval_batch_size));
        if (v == Variant::M1 && want_m2) m1 = std::move(model);
      } catch (const NumericError& e) {
        if (v == Variant::M1) m1_failure = e.what();
        fail(row, seed, e.what());
      }
    }
  }

  for (std::size_t row = 0; row < variants.size(); ++row) {
    ReportRow r;
    r.variant = variants[row];
    r.params = count_params(
        variant_config(variants[row], config.base, bundle.train_dialects, config.unknown_prob));
    const Accum& a = acc[row];
    r.seeds = a.seeds;
    r.failure = a.failure;
    const double n = a.seeds ? static_cast<double>(a.seeds) : 1.0;
    for (double v : a.per_dialect) r.per_dialect.push_back(v / n);
    r.overall_seen = a.seen / n;
    r.overall_all = a.all / n;
    report.rows.push_back(std::move(r));
  }
  return report;
}

const ReportRow* EvalReport::row(Variant v) const {
  for (const auto& r : rows) {
    if (r.variant == v) return &r;
  }
  return nullptr;
}

double EvalReport::score(Variant v, const std::string& dialect) const {
  const ReportRow* r = row(v);
  if (r == nullptr) throw ConfigError("report has no row " + variant_name(v));
  for (std::size_t d = 0; d < dialects.size(); ++d) {
    if (dialects[d] == dialect) return r->per_dialect[d];
  }
  throw ConfigError("report has no dialect '" + dialect + "'");
}

std::string EvalReport::to_table() const {
  // Columns: model, description, size, per-dialect, overall (-held-out, +held-out).
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"Model", "Description", "Params"};
  for (const auto& d : dialects) {
    const bool held = std::find(held_out.begin(), held_out.end(), d) != held_out.end();
    header.push_back(held ? d + "*" : d);
  }
  header.push_back("-held-out");
  header.push_back("+held-out");
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line = {"[" + variant_name(r.variant) + "]",
                                     variant_description(r.variant), std::to_string(r.params)};
    for (double v : r.per_dialect) line.push_back(r.seeds ? percent(v) : "-");
    line.push_back(r.seeds ? percent(r.overall_seen) : "-");
    line.push_back(r.seeds ? percent(r.overall_all) : "-");
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      const std::string& s = cells[i][c];
      const std::string pad(width[c] - s.size(), ' ');
      if (c > 0) out << "  ";
      // Text columns left-aligned, numbers right-aligned.
      out << (c < 2 ? s + pad : pad + s);
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  out << "frame error rate (%), averaged over " << seeds.size() << " seed(s)";
  if (!held_out.empty()) out << "; * = held out of training";
  out << '\n';
  for (const auto& r : rows) {
    if (!r.failure.empty()) out << variant_name(r.variant) << ": " << r.failure << '\n';
  }
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["dialects"] = dialects;
  j["held_out"] = held_out;
  j["seeds"] = seeds;
  j["metric"] = "frame_error_rate";
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["variant"] = variant_name(r.variant);
    row["description"] = variant_description(r.variant);
    row["params"] = r.params;
    row["seeds_completed"] = r.seeds;
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (std::size_t d = 0; d < dialects.size(); ++d) per[dialects[d]] = r.per_dialect[d];
    row["per_dialect"] = per;
    row["overall_excluding_held_out"] = r.overall_seen;
    row["overall_including_held_out"] = r.overall_all;
    if (!r.failure.empty()) row["failure"] = r.failure;
    j["rows"].push_back(std::move(row));
  }
  return j.dump(2);
}

}  // namespace dfilm
