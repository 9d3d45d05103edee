// SPDX-License-Identifier: Apache-2.0
#include "dfilm/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>

#include "dfilm/diagnostics.hpp"
#include "dfilm/eval.hpp"
#include "dfilm/kernels.hpp"
#include "dfilm/run_config.hpp"

namespace dfilm {
namespace {

namespace fs = std::filesystem;

constexpr double kGradTolerance = 1e-4;

/// Bad flags or flag combinations: exit 2 with the subcommand usage.
class UsageError : public Error {
 public:
  UsageError(const std::string& what, const CLI::App* app) : Error(what), app_(app) {}
  const CLI::App* app() const noexcept { return app_; }

 private:
  const CLI::App* app_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string error_table_text(const ErrorTable& t, const std::vector<std::string>& held_out) {
  std::string s;
  for (const auto& d : t.dialects) {
    char line[160];
    std::snprintf(line, sizeof line, "%-12s frames %8zu  errors %8zu  rate %6.2f%%\n",
                  d.dialect.c_str(), d.frames, d.errors, 100.0 * d.rate());
    s += line;
  }
  s += "overall" + std::string(6, ' ') + fmt("%6.2f%%", 100.0 * t.overall()) + "\n";
  if (!held_out.empty()) {
    s += "overall excluding held-out " + fmt("%6.2f%%", 100.0 * t.overall_excluding(held_out)) +
         "\n";
  }
  return s;
}

std::string error_table_json(const ErrorTable& t, const std::string& policy) {
  nlohmann::ordered_json j;
  j["policy"] = policy;
  j["dialects"] = nlohmann::ordered_json::array();
  for (const auto& d : t.dialects) {
    j["dialects"].push_back(
        {{"dialect", d.dialect}, {"frames", d.frames}, {"errors", d.errors}, {"rate", d.rate()}});
  }
  j["overall"] = t.overall();
  return j.dump(2) + "\n";
}

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

  int run(const std::vector<std::string>& args) {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app_.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out_ << (parsed_sub() ? parsed_sub()->help() : app_.help());
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app_.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << "\n\n" << (parsed_sub() ? parsed_sub()->help() : app_.help());
      return kExitUsage;
    }
    try {
      if (kernels_ != "auto") kernels::select_isa(kernels::parse_isa(kernels_));
      return dispatch();
    } catch (const UsageError& e) {
      err_ << "error: " << e.what() << "\n\n" << e.app()->help();
      return kExitUsage;
    } catch (const ConfigError& e) {
      err_ << "config error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const ShapeError& e) {
      err_ << "shape error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const IoError& e) {
      err_ << "I/O error: " << e.what() << '\n';
      return kExitIo;
    } catch (const ParseError& e) {
      err_ << "parse error: " << e.what() << '\n';
      return kExitIo;
    } catch (const NumericError& e) {
      err_ << "numeric error: " << e.what() << '\n';
      return kExitNumeric;
    }
  }

 private:
  // -------------------------------------------------------------------------
  // Option wiring

  void build() {
    app_.description("Dialect-conditioned acoustic models with FiLM layers");
    app_.require_subcommand(1);
    app_.add_option("--kernels", kernels_, "Numeric kernels: auto, scalar or avx2")
        ->check(CLI::IsMember({"auto", "scalar", "avx2"}));

    gen_ = app_.add_subcommand("gen", "Generate a synthetic multi-dialect bundle");
    gen_->add_option("--spec,--config", config_, "Run config (JSON) with a 'synth' section");
    gen_->add_option("--seed", seed_, "Data seed");
    gen_->add_option("--out", out_dir_, "Output directory (default: $DFILM_OUT_DIR)");

    train_ = app_.add_subcommand("train", "Train one model variant");
    train_->add_option("--variant", variant_, "M1..M10")->required();
    train_->add_option("--data", data_, "Training set (.jsonl)")->required();
    train_->add_option("--dev", dev_, "Dev set (.jsonl)")->required();
    train_->add_option("--config", config_, "Run config (JSON)");
    train_->add_option("--out", out_dir_, "Output directory (default: $DFILM_OUT_DIR)");
    train_->add_option("--base-model", base_model_, "Trained M1 model (M2 only)");
    train_->add_option("--dialect", dialect_, "Restrict data to one dialect (M2)");
    seed_opt_ = train_->add_option("--seed", seed_, "Init and shuffle seed");
    epochs_opt_ = train_->add_option("--epochs", epochs_, "Maximum epochs");
    lr_opt_ = train_->add_option("--lr", lr_, "Adam learning rate");
    batch_opt_ = train_->add_option("--batch-size", batch_size_, "Minibatch size");
    hidden_opt_ = train_->add_option("--hidden", hidden_, "LSTM units per layer");
    layers_opt_ = train_->add_option("--layers", layers_, "Number of LSTM layers");
    unk_opt_ = train_->add_option("--unknown-prob", unknown_prob_,
                                  "Unknown-dialect relabeling probability (M10)");

    eval_ = app_.add_subcommand("eval", "Frame error rate per dialect");
    eval_->add_option("--model", model_, "Model file")->required();
    eval_->add_option("--data", data_, "Dataset (.jsonl)")->required();
    eval_->add_option("--policy", policy_, "true, native-fallback or unknown (default by model)");
    eval_->add_option("--native", native_, "Native dialect name");
    eval_->add_option("--held-out", held_out_, "Dialects excluded from the second overall");
    eval_->add_option("--out", out_dir_, "Also write eval.json here");

    compare_ = app_.add_subcommand("compare", "Train and evaluate the model family");
    compare_->add_option("--bundle", bundle_, "Bundle directory from 'gen'")->required();
    compare_->add_option("--seeds", seeds_, "Comma-separated seeds")->delimiter(',');
    compare_->add_option("--variants", variants_, "Comma-separated subset of M1..M10")
        ->delimiter(',');
    compare_->add_option("--config", config_, "Run config (JSON)");
    compare_->add_option("--out", out_dir_, "Output directory (default: $DFILM_OUT_DIR)");
    compare_->add_flag("--quiet", quiet_, "No progress lines");

    grad_ = app_.add_subcommand("gradcheck", "Finite-difference check of every variant");
    grad_->add_option("--variant", variants_, "Variants to check (default: all)")->delimiter(',');
    grad_->add_option("--seed", seed_, "Instance seed");
    grad_->add_option("--eps", eps_, "Central-difference step");

    dump_ = app_.add_subcommand("dump", "Write generated FiLM vectors per utterance and layer");
    dump_->add_option("--model", model_, "Model file")->required();
    dump_->add_option("--data", data_, "Dataset (.jsonl)")->required();
    dump_->add_option("--out", out_dir_, "Output file")->required();
    dump_->add_option("--policy", policy_, "Dialect policy (default by model)");
    dump_->add_option("--native", native_, "Native dialect name");

    score_ = app_.add_subcommand("score", "Silhouette of a FiLM dump grouped by dialect");
    score_->add_option("--dump", dump_file_, "Dump file from 'dump'")->required();
    score_->add_option("--layer", layer_, "Layer (default: every layer)");
  }

  CLI::App* parsed_sub() {
    for (CLI::App* s : app_.get_subcommands()) return s;
    return nullptr;
  }

  int dispatch() {
    if (gen_->parsed()) return cmd_gen();
    if (train_->parsed()) return cmd_train();
    if (eval_->parsed()) return cmd_eval();
    if (compare_->parsed()) return cmd_compare();
    if (grad_->parsed()) return cmd_gradcheck();
    if (dump_->parsed()) return cmd_dump();
    if (score_->parsed()) return cmd_score();
    throw UsageError("no command given", &app_);
  }

  fs::path out_dir(const CLI::App* app) const {
    if (!out_dir_.empty()) return out_dir_;
    if (const char* env = std::getenv("DFILM_OUT_DIR"); env != nullptr && *env != '\0') return env;
    throw UsageError("--out is required (or set DFILM_OUT_DIR)", app);
  }

  RunConfig load_config() const {
    return config_.empty() ? RunConfig{} : load_run_config(config_);
  }

  DialectPolicy policy_for(const ModelConfig& cfg) const {
    return policy_.empty() ? default_policy(cfg) : parse_policy(policy_);
  }

  // -------------------------------------------------------------------------
  // Commands

  int cmd_gen() {
    const fs::path dir = out_dir(gen_);
    const RunConfig rc = load_config();
    const DatasetBundle bundle = synth_generate(make_synth_spec(rc.synth), seed_);
    make_dir(dir);
    save_bundle(bundle, dir);
    write_text(dir / "config.json", run_config_to_json(rc));
    const auto report = [&](const char* split, const Dataset& d) {
      const DatasetManifest m = DatasetManifest::of(d);
      out_ << split << ": " << m.total_utterances << " utterances, " << m.total_frames
           << " frames\n";
      for (const auto& c : m.dialects) {
        out_ << "  " << c.dialect << ' ' << c.utterances << " utts " << c.frames << " frames\n";
      }
    };
    report("train", bundle.train);
    report("dev", bundle.dev);
    report("test", bundle.test);
    out_ << "dialects: " << bundle.train_dialects.size() << " train + " << bundle.held_out.size()
         << " held-out\nwrote " << dir.string() << '\n';
    return kExitOk;
  }

  int cmd_train() {
    const Variant v = parse_variant(variant_);
    if (v == Variant::M2 && base_model_.empty()) {
      throw UsageError("M2 is a fine-tuned M1: --base-model is required", train_);
    }
    if (v != Variant::M2 && !base_model_.empty()) {
      throw UsageError("--base-model only applies to M2", train_);
    }
    const fs::path dir = out_dir(train_);
    RunConfig rc = load_config();
    if (seed_opt_->count()) rc.train.seed = rc.fine_tune.seed = seed_;
    if (epochs_opt_->count()) rc.train.max_epochs = rc.fine_tune.max_epochs = epochs_;
    if (lr_opt_->count()) rc.train.adam.lr = lr_;
    if (batch_opt_->count()) rc.train.batch_size = rc.fine_tune.batch_size = batch_size_;
    if (hidden_opt_->count()) rc.model.hidden = hidden_;
    if (layers_opt_->count()) rc.model.num_layers = layers_;
    if (unk_opt_->count()) rc.unknown_prob = unknown_prob_;
    if (v == Variant::M10 && !(rc.unknown_prob > 0.0)) {
      throw ConfigError("M10 needs --unknown-prob > 0");
    }
    rc.validate();

    Dataset train_set = load_dataset(data_);
    Dataset dev_set = load_dataset(dev_);
    if (!dialect_.empty()) {
      train_set = train_set.filter_dialect(dialect_);
      dev_set = dev_set.filter_dialect(dialect_);
    }

    Model model;
    TrainLog log;
    const auto on_epoch = [&](const EpochLog& e) {
      out_ << "epoch " << e.epoch << "  lr " << fmt("%.3g", e.lr) << "  train loss "
           << fmt("%.6f", e.train_loss) << "  dev error " << fmt("%.4f", e.dev_error) << '\n';
    };
    if (v == Variant::M2) {
      model = load_model(base_model_);
      if (model.config.cond_source != CondSource::none || model.config.dialect_aware_input) {
        throw ConfigError("M2 needs an M1 (dialect-unaware) base model");
      }
      log = fine_tune(model, train_set, dev_set, rc.fine_tune, 0.1, on_epoch);
    } else {
      ModelConfig base = rc.model;
      base.input_dim = train_set.feature_dim;
      base.num_classes = train_set.num_classes;
      const ModelConfig cfg = variant_config(v, base, train_set.dialects(), rc.unknown_prob);
      model = build_model(cfg, rc.train.seed);
      log = train(model, train_set, dev_set, rc.train, on_epoch);
    }
    make_dir(dir);
    save_model(model, dir / "model.bin");
    write_text(dir / "train_log.json", train_log_json(log) + "\n");
    write_text(dir / "config.json", run_config_to_json(rc));
    out_ << variant_name(v) << ": best dev error " << fmt("%.4f", log.best_dev_error)
         << " (epoch " << log.best_epoch << "), " << count_params(model.config)
         << " parameters\nwrote " << (dir / "model.bin").string() << '\n';
    return kExitOk;
  }

  int cmd_eval() {
    const Model model = load_model(model_);
    const Dataset data = load_dataset(data_);
    const DialectPolicy policy = policy_for(model.config);
    const ErrorTable t = frame_error_rate(model, data, policy, native_);
    out_ << "policy " << to_string(policy) << '\n' << error_table_text(t, held_out_);
    if (!out_dir_.empty()) {
      make_dir(out_dir_);
      write_text(fs::path(out_dir_) / "eval.json", error_table_json(t, to_string(policy)));
    }
    return kExitOk;
  }

  int cmd_compare() {
    const fs::path dir = out_dir(compare_);
    RunConfig rc = load_config();
    if (!seeds_.empty()) rc.seeds = seeds_;
    if (!variants_.empty()) {
      rc.variants.clear();
      for (const auto& n : variants_) rc.variants.push_back(parse_variant(n));
    }
    rc.validate();
    const DatasetBundle bundle = load_bundle(bundle_);
    const SuiteConfig sc =
        make_suite_config(rc, bundle.train.feature_dim, bundle.train.num_classes);
    SuiteHooks hooks;
    if (!quiet_) hooks.log = [&](const std::string& m) { err_ << m << '\n'; };
    const EvalReport report = compare_suite(bundle, sc, rc.seeds, hooks);
    make_dir(dir);
    write_text(dir / "report.txt", report.to_table());
    write_text(dir / "report.json", report.to_json() + "\n");
    write_text(dir / "config.json", run_config_to_json(rc));
    out_ << report.to_table();
    for (const auto& r : report.rows) {
      if (r.seeds == 0) return kExitNumeric;
    }
    return kExitOk;
  }

  int cmd_gradcheck() {
    std::vector<Variant> vs;
    for (const auto& n : variants_) vs.push_back(parse_variant(n));
    if (vs.empty()) vs.assign(std::begin(kAllVariants), std::end(kAllVariants));
    bool ok = true;
    for (const Variant v : vs) {
      const GradCheckResult r = variant_grad_check(v, seed_, eps_);
      const bool pass = r.max_rel_error < kGradTolerance;
      ok = ok && pass;
      out_ << variant_name(v) << "  max_rel_error " << fmt("%.3e", r.max_rel_error) << "  at "
           << r.worst_param << '[' << r.worst_index << "]  coordinates " << r.coordinates << "  "
           << (pass ? "ok" : "FAIL") << '\n';
    }
    return ok ? kExitOk : kExitNumeric;
  }

  int cmd_dump() {
    const Model model = load_model(model_);
    const Dataset data = load_dataset(data_);
    const auto records = dump_film(model, data, policy_for(model.config), native_);
    const fs::path path = out_dir_;
    if (path.has_parent_path()) make_dir(path.parent_path());
    save_film_dump(records, path);
    out_ << "wrote " << records.size() << " records to " << path.string() << '\n';
    return kExitOk;
  }

  int cmd_score() {
    const auto records = load_film_dump(dump_file_);
    std::size_t layers = 0;
    for (const auto& r : records) layers = std::max(layers, r.layer);
    if (layer_ > layers) throw ConfigError("dump has no layer " + std::to_string(layer_));
    for (std::size_t l = 1; l <= layers; ++l) {
      if (layer_ != 0 && l != layer_) continue;
      out_ << "layer " << l << "  silhouette " << fmt("%.6f", cluster_score(records, l)) << '\n';
    }
    return kExitOk;
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"dfilm"};
  CLI::App *gen_ = nullptr, *train_ = nullptr, *eval_ = nullptr, *compare_ = nullptr,
           *grad_ = nullptr, *dump_ = nullptr, *score_ = nullptr;
  CLI::Option *seed_opt_ = nullptr, *epochs_opt_ = nullptr, *lr_opt_ = nullptr,
              *batch_opt_ = nullptr, *hidden_opt_ = nullptr, *layers_opt_ = nullptr,
              *unk_opt_ = nullptr;

  std::string kernels_ = "auto";
  std::string config_, out_dir_, data_, dev_, variant_, base_model_, dialect_;
  std::string model_, policy_, native_ = "native", bundle_, dump_file_;
  std::vector<std::string> held_out_, variants_;
  std::vector<std::uint64_t> seeds_;
  std::uint64_t seed_ = 1;
  std::size_t epochs_ = 0, batch_size_ = 0, hidden_ = 0, layers_ = 0, layer_ = 0;
  double lr_ = 1e-3, unknown_prob_ = 0.1, eps_ = 1e-5;
  bool quiet_ = false;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  return cli.run(args);
}

}  // namespace dfilm
