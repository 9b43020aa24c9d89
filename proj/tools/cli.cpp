#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "keyforge/classifier.hpp"
#include "keyforge/csv.hpp"
#include "keyforge/dataset.hpp"
#include "keyforge/detectors.hpp"
#include "keyforge/embed.hpp"
#include "keyforge/error.hpp"
#include "keyforge/eval.hpp"
#include "keyforge/hyperopt.hpp"

namespace keyforge::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::string command_line;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 0;
  bool timing = true;
  bool quiet = false;
};

std::string join_command(const std::vector<std::string>& args) {
  std::string line = "keyforge";
  for (const auto& a : args) {
    line += ' ';
    line += a.find_first_of(" \t\"'") == std::string::npos ? a : "'" + a + "'";
  }
  return line;
}

json provenance(const Context& ctx, const json& config) {
  return {{"tool", "keyforge"}, {"command", ctx.command_line}, {"seed", ctx.seed}, {"config", config}};
}

const fs::path& with_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  return path;
}

std::ofstream open_output(const fs::path& path) {
  with_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

/// CSV artifacts carry their provenance in a sibling <file>.prov.json.
void write_sidecar(const Context& ctx, const fs::path& path, const json& config) {
  auto out = open_output(fs::path(path.string() + ".prov.json"));
  out << provenance(ctx, config).dump(2) << '\n';
}

void write_json(const fs::path& path, const json& doc) {
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
}

void announce(const Context& ctx, std::string_view name, const json& config) {
  ctx.out << "keyforge " << name << " seed=" << ctx.seed << " config=" << config.dump() << '\n';
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("KEYFORGE_SEED")) {
    long long value = 0;
    if (!csv::parse_int(env, value) || value < 0) throw ConfigError("KEYFORGE_SEED must be a non-negative integer");
    return static_cast<std::uint64_t>(value);
  }
  return kDefaultSeed;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

json parse_param_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

json load_config(const std::string& path, const std::vector<std::string>& params) {
  json config = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    try {
      config = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!config.is_object()) throw ConfigError("config '" + path + "' must hold a JSON object");
  }
  for (const auto& p : params) {
    const auto eq = p.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--param expects key=value, got '" + p + "'");
    config[p.substr(0, eq)] = parse_param_value(p.substr(eq + 1));
  }
  return config;
}

std::vector<std::string> pick_subjects(const Dataset& ds, const std::string& list, std::size_t first,
                                       std::size_t random_count, std::uint64_t seed) {
  if (!list.empty()) return split_list(list);
  std::vector<std::string> roster = ds.roster();
  if (first > 0) {
    roster.resize(std::min(first, roster.size()));
    return roster;
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(roster));
  roster.resize(std::min(random_count, roster.size()));
  return roster;
}

Dataset subset(const Dataset& ds, const std::vector<std::string>& subjects, std::size_t per_subject) {
  std::vector<KeystrokeRecord> records;
  for (const auto& s : subjects) {
    ds.subject_index(s);
    std::size_t taken = 0;
    for (const auto& r : ds.records()) {
      if (r.subject != s) continue;
      if (per_subject > 0 && taken >= per_subject) break;
      records.push_back(r);
      ++taken;
    }
  }
  return Dataset(std::move(records), subjects);
}

std::function<void(const std::string&)> progress_printer(const Context& ctx, int every) {
  if (ctx.quiet) return {};
  return [&ctx, every, count = 0](const std::string& line) mutable {
    if (++count % every == 0) ctx.err << line << '\n';
  };
}

// ---------------------------------------------------------------------------
// Options shared by the subcommands.

struct Options {
  std::string input;
  std::string out;
  std::string model = "gbt";
  std::string features = "all";
  std::string model_file;
  double train_frac = 0.8;
  bool no_stratify = false;
  long long augment_ratio = 0;
  double augment_range = 0.02;
  std::string config_path;
  std::vector<std::string> params;
  std::string name;
  int budget = 50;
  std::string method = "smbo";
  std::string space_path;
  std::string best_out;
  std::vector<std::string> metrics;
  std::string train_path;
  std::string test_path;
  std::string report_out;
  std::string roc_out;
  double perplexity = 30.0;
  int iterations = 1000;
  std::string subjects;
  std::size_t first = 0;
  std::size_t per_subject = 0;
  std::size_t random_subjects = 6;
  std::size_t synth_subjects = 51;
  std::size_t synth_reps = 400;
  double synth_noise = 3.0;
  std::vector<std::string> inputs;
  bool fast = false;
  bool synthetic = false;
};

// ---------------------------------------------------------------------------
// Commands

int cmd_ingest(Context& ctx, const Options& o) {
  announce(ctx, "ingest", {{"input", o.input}, {"out", o.out}});
  const Dataset ds = ingest_csv(o.input);
  ctx.out << "records=" << ds.size() << " subjects=" << ds.roster().size() << " columns=" << kFeatureCount << '\n';
  if (!o.out.empty()) {
    write_dataset_csv(with_parent(o.out), ds);
    write_sidecar(ctx, o.out, {{"input", o.input}});
  }
  return 0;
}

int cmd_synth(Context& ctx, const Options& o) {
  const json config = {{"subjects", o.synth_subjects}, {"reps", o.synth_reps}, {"noise", o.synth_noise}};
  announce(ctx, "synth", config);
  const Dataset ds = synth_fixture(o.synth_subjects, o.synth_reps, ctx.seed, o.synth_noise);
  write_dataset_csv(with_parent(o.out), ds);
  write_sidecar(ctx, o.out, config);
  ctx.out << "records=" << ds.size() << " subjects=" << ds.roster().size() << '\n';
  return 0;
}

int cmd_explore(Context& ctx, const Options& o) {
  const Dataset ds = ingest_csv(o.input);
  const FeatureGroup group = parse_feature_group(o.features);
  const auto subjects = pick_subjects(ds, o.subjects, 0, o.random_subjects, ctx.seed);
  const json config = {{"input", o.input}, {"features", to_string(group)}, {"subjects", subjects}};
  announce(ctx, "explore", config);
  const auto traces = explore_stats(ds, group, subjects);
  if (o.out.empty()) {
    write_traces_csv(ctx.out, traces);
  } else {
    auto file = open_output(o.out);
    write_traces_csv(file, traces);
    write_sidecar(ctx, o.out, config);
  }
  return 0;
}

int cmd_split(Context& ctx, const Options& o) {
  const SplitSpec spec{o.train_frac, ctx.seed, !o.no_stratify};
  const json config = {{"input", o.input}, {"train_frac", o.train_frac}, {"stratified", spec.stratified}};
  announce(ctx, "split", config);
  const Dataset ds = ingest_csv(o.input);
  const SplitResult parts = split(ds, spec);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_dataset_csv(dir / "train.csv", parts.train);
  write_dataset_csv(dir / "test.csv", parts.test);
  write_sidecar(ctx, dir / "train.csv", config);
  write_sidecar(ctx, dir / "test.csv", config);
  ctx.out << "train=" << parts.train.size() << " test=" << parts.test.size() << '\n';
  return 0;
}

int cmd_augment(Context& ctx, const Options& o) {
  const AugmentConfig cfg{o.augment_ratio, o.augment_range, ctx.seed};
  const json config = {{"input", o.input}, {"ratio", cfg.ratio}, {"range", cfg.range}};
  announce(ctx, "augment", config);
  const Dataset augmented = augment(ingest_csv(o.input), cfg);
  write_dataset_csv(with_parent(o.out), augmented);
  write_sidecar(ctx, o.out, config);
  ctx.out << "records=" << augmented.size() << '\n';
  return 0;
}

int cmd_train(Context& ctx, const Options& o) {
  const Family family = parse_family(o.model);
  const FeatureGroup group = parse_feature_group(o.features);
  const json model_config = load_config(o.config_path, o.params);
  Dataset train = ingest_csv(o.input);
  if (o.augment_ratio > 0) train = augment(train, AugmentConfig{o.augment_ratio, o.augment_range, ctx.seed});
  const json config = {{"input", o.input},
                       {"model", to_string(family)},
                       {"features", to_string(group)},
                       {"augment_ratio", o.augment_ratio},
                       {"augment_range", o.augment_range},
                       {"model_config", model_config}};
  announce(ctx, "train", config);

  FitOptions options;
  options.family = family;
  options.config = model_config;
  options.seed = ctx.seed;
  options.threads = ctx.threads;
  options.record_timing = ctx.timing;
  options.progress = progress_printer(ctx, family == Family::Gbt ? 100 : 10);
  ClassifierModel model = fit_classifier(train.select(group), group, options);
  model.name = !o.name.empty() ? o.name
               : o.augment_ratio > 0 ? std::string(to_string(family)) + "+aug" + std::to_string(o.augment_ratio)
                                     : std::string(to_string(family));
  save_model(with_parent(o.out), model, provenance(ctx, config));
  ctx.out << "model=" << model.name << " rows=" << train.size() << " train_seconds=" << model.train_seconds
          << " config=" << model.config().dump() << '\n';
  return 0;
}

int cmd_eval(Context& ctx, const Options& o) {
  announce(ctx, "eval", {{"model_file", o.model_file}, {"input", o.input}});
  const ClassifierModel model = load_model(o.model_file);
  const Dataset test = ingest_csv(o.input);
  const EvalReport report = accuracy_report(model, test, ctx.threads);
  json doc = report_to_json(report);
  doc["command"] = ctx.command_line;
  if (!o.out.empty()) write_json(o.out, doc);
  ctx.out << "model=" << report.model << " features=" << report.features << " accuracy=" << report.accuracy
          << " eer_mean=" << (report.eer_mean ? csv::format_double(*report.eer_mean) : "-") << '\n';
  return 0;
}

int cmd_tune(Context& ctx, const Options& o) {
  const Family family = parse_family(o.model);
  const FeatureGroup group = parse_feature_group(o.features);
  const SearchSpace space = o.space_path.empty() ? default_space(family) : load_space(o.space_path);
  const json base_config = load_config(o.config_path, o.params);
  const json config = {{"input", o.input},         {"model", to_string(family)}, {"features", to_string(group)},
                       {"budget", o.budget},        {"method", o.method},         {"space", o.space_path},
                       {"base_config", base_config}};
  announce(ctx, "tune", config);
  const Dataset train = ingest_csv(o.input);

  TuneOptions options;
  options.budget = o.budget;
  options.method = parse_search_method(o.method);
  options.seed = ctx.seed;
  options.workers = 1;
  options.record_timing = ctx.timing;
  if (!ctx.quiet) {
    options.on_trial = [&](const TrialRecord& t) {
      ctx.err << "trial " << t.trial << " score=" << t.score << " params=" << t.params.dump()
              << (t.failed ? " failed: " + t.error : std::string()) << '\n';
    };
  }
  const TuneResult result =
      tune(space, classifier_objective(train, family, group, base_config, ctx.seed, ctx.threads), options);
  auto file = open_output(o.out);
  write_ledger_csv(file, result.ledger);
  json sidecar = config;
  sidecar["best"] = result.best;
  sidecar["best_score"] = result.best_score;
  sidecar["best_trial"] = result.best_trial;
  write_sidecar(ctx, o.out, sidecar);
  if (!o.best_out.empty()) {
    json best = base_config;
    best.update(result.best);
    write_json(o.best_out, best);
  }
  ctx.out << "best_trial=" << result.best_trial << " best_score=" << result.best_score
          << " best=" << result.best.dump() << '\n';
  return 0;
}

struct EerInputs {
  Dataset train;
  Dataset test;
};

EerInputs eer_inputs(const Context& ctx, const Options& o) {
  if (!o.train_path.empty() || !o.test_path.empty()) {
    if (o.train_path.empty() || o.test_path.empty()) throw ConfigError("--train and --test must be given together");
    return {ingest_csv(o.train_path), ingest_csv(o.test_path)};
  }
  SplitResult parts = split(ingest_csv(o.input), SplitSpec{o.train_frac, ctx.seed, true});
  return {std::move(parts.train), std::move(parts.test)};
}

int cmd_eer(Context& ctx, const Options& o) {
  std::vector<Metric> metrics;
  for (const auto& m : o.metrics) {
    if (m == "all") {
      metrics = {Metric::Euclidean, Metric::Manhattan, Metric::ScaledManhattan, Metric::Mahalanobis};
      break;
    }
    metrics.push_back(parse_metric(m));
  }
  if (metrics.empty()) metrics.push_back(Metric::ScaledManhattan);
  const FeatureGroup group = parse_feature_group(o.features);
  json metric_names = json::array();
  for (Metric m : metrics) metric_names.push_back(to_string(m));
  const json config = {{"input", o.input}, {"train", o.train_path}, {"test", o.test_path},
                       {"train_frac", o.train_frac}, {"features", to_string(group)}, {"metrics", metric_names}};
  announce(ctx, "eer", config);

  const EerInputs data = eer_inputs(ctx, o);
  const LabeledMatrix train = data.train.select(group);
  const LabeledMatrix test = data.test.select(group);
  const auto templates = fit_templates(train);

  std::optional<std::ofstream> dump;
  if (!o.out.empty()) dump.emplace(open_output(o.out));
  std::optional<std::ofstream> roc;
  if (!o.roc_out.empty()) {
    roc.emplace(open_output(o.roc_out));
    *roc << "metric,subject,threshold,far,frr\n";
  }
  json report = {{"command", ctx.command_line}, {"seed", ctx.seed}, {"features", to_string(group)},
                 {"metrics", json::object()}};
  bool header_written = false;
  for (Metric metric : metrics) {
    if (dump) {
      std::ostringstream block;
      write_score_dump(block, templates, test, metric);
      std::string text = block.str();
      if (header_written) text.erase(0, text.find('\n') + 1);
      *dump << text;
      header_written = true;
    }
    const EerSummary eer = roc_and_eer(score_all(templates, test, metric, ctx.threads));
    json per_subject = json::object();
    for (const auto& c : eer.curves) {
      per_subject[c.subject] = c.eer;
      if (roc) {
        for (const auto& p : c.points) {
          if (!std::isfinite(p.threshold)) continue;
          *roc << to_string(metric) << ',' << csv::quote(c.subject) << ',' << csv::format_double(p.threshold) << ','
               << csv::format_double(p.far) << ',' << csv::format_double(p.frr) << '\n';
        }
      }
    }
    report["metrics"][std::string(to_string(metric))] = {{"eer_mean", eer.mean_eer}, {"per_subject", per_subject}};
    ctx.out << "metric=" << to_string(metric) << " eer_mean=" << eer.mean_eer << '\n';
  }
  if (dump) write_sidecar(ctx, o.out, config);
  if (roc) write_sidecar(ctx, o.roc_out, config);
  if (!o.report_out.empty()) write_json(o.report_out, report);
  return 0;
}

int cmd_tsne(Context& ctx, const Options& o) {
  const Dataset ds = ingest_csv(o.input);
  const FeatureGroup group = parse_feature_group(o.features);
  const auto subjects = pick_subjects(ds, o.subjects, o.first == 0 && o.subjects.empty() ? 7 : o.first, 0, ctx.seed);
  TsneConfig cfg;
  cfg.perplexity = o.perplexity;
  cfg.iterations = o.iterations;
  cfg.seed = ctx.seed;
  cfg.threads = ctx.threads;
  const json config = {{"input", o.input},           {"features", to_string(group)}, {"subjects", subjects},
                       {"per_subject", o.per_subject}, {"perplexity", cfg.perplexity}, {"iterations", cfg.iterations},
                       {"learning_rate", cfg.learning_rate}, {"exaggeration", cfg.exaggeration},
                       {"exaggeration_iterations", cfg.exaggeration_iterations}};
  announce(ctx, "tsne", config);
  const LabeledMatrix view = subset(ds, subjects, o.per_subject).select(group);
  const EmbeddingResult result = tsne_run(view, cfg);
  for (const auto& w : result.warnings) ctx.err << "warning: " << w << '\n';
  auto file = open_output(o.out);
  write_embedding_csv(file, result);
  write_sidecar(ctx, o.out, config);
  ctx.out << "points=" << view.rows() << " kl=" << result.kl
          << " purity10=" << neighbor_purity(result.coords, view.y, 10) << '\n';
  return 0;
}

int cmd_report(Context& ctx, const Options& o) {
  announce(ctx, "report", {{"inputs", o.inputs}});
  std::vector<EvalReport> reports;
  for (const auto& path : o.inputs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
      reports.push_back(report_from_json(json::parse(in)));
    } catch (const json::parse_error& e) {
      throw FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
  }
  if (reports.empty()) throw ConfigError("report needs at least one input");
  const auto rows = summary(std::move(reports));
  if (!o.out.empty()) {
    auto file = open_output(o.out);
    write_summary_csv(file, rows);
    write_sidecar(ctx, o.out, {{"inputs", o.inputs}});
  }
  write_summary_text(ctx.out, rows);
  return 0;
}

// Full experiment matrix with one seed.
int cmd_repro(Context& ctx, const Options& o) {
  const json config = {{"input", o.input}, {"synthetic", o.synthetic}, {"fast", o.fast}, {"out", o.out}};
  announce(ctx, "repro", config);
  const Dataset ds = o.synthetic ? synth_fixture(51, 400, ctx.seed, o.synth_noise) : ingest_csv(o.input);
  const fs::path dir(o.out);
  fs::create_directories(dir / "reports");
  ctx.out << "records=" << ds.size() << " subjects=" << ds.roster().size() << '\n';
  const SplitResult parts = split(ds, SplitSpec{o.train_frac, ctx.seed, true});

  struct Run {
    std::string name;
    Family family;
    FeatureGroup group;
    json config;
    long long augment_ratio;
  };
  const json fast_gbt = {{"n_estimators", 30}};
  std::vector<Run> runs = {
      {"knn", Family::Knn, FeatureGroup::All, json::object(), 0},
      {"rf", Family::Forest, FeatureGroup::All, o.fast ? json{{"n_estimators", 20}} : json::object(), 0},
      {"gbt", Family::Gbt, FeatureGroup::H, o.fast ? fast_gbt : json::object(), 0},
      {"gbt", Family::Gbt, FeatureGroup::DD, o.fast ? fast_gbt : json::object(), 0},
      {"gbt", Family::Gbt, FeatureGroup::UD, o.fast ? fast_gbt : json::object(), 0},
      {"gbt", Family::Gbt, FeatureGroup::All, o.fast ? fast_gbt : json::object(), 0},
      {"gbt+aug2", Family::Gbt, FeatureGroup::All, o.fast ? fast_gbt : json::object(), 2},
      {"mlp", Family::Mlp, FeatureGroup::All, o.fast ? json{{"epochs", 3}} : json::object(), 0},
  };
  std::vector<EvalReport> reports;
  for (const auto& run : runs) {
    const Dataset train = run.augment_ratio > 0 ? augment(parts.train, AugmentConfig{run.augment_ratio, 0.02, ctx.seed})
                                                : parts.train;
    FitOptions options;
    options.family = run.family;
    options.config = run.config;
    options.seed = ctx.seed;
    options.threads = ctx.threads;
    options.record_timing = ctx.timing;
    ClassifierModel model = fit_classifier(train.select(run.group), run.group, options);
    model.name = run.name;
    EvalReport report = accuracy_report(model, parts.test, ctx.threads);
    json doc = report_to_json(report);
    doc["command"] = ctx.command_line;
    write_json(dir / "reports" / (run.name + "_" + std::string(to_string(run.group)) + ".json"), doc);
    ctx.out << "model=" << report.model << " features=" << report.features << " accuracy=" << report.accuracy
            << " train_rows=" << train.size() << " train_seconds=" << report.train_seconds << '\n';
    reports.push_back(std::move(report));
  }

  const auto templates = fit_templates(parts.train.select(FeatureGroup::All));
  const LabeledMatrix test_view = parts.test.select(FeatureGroup::All);
  json eer_doc = {{"command", ctx.command_line}, {"metrics", json::object()}};
  for (Metric m : {Metric::Euclidean, Metric::Manhattan, Metric::ScaledManhattan, Metric::Mahalanobis}) {
    const double eer = roc_and_eer(score_all(templates, test_view, m, ctx.threads)).mean_eer;
    eer_doc["metrics"][std::string(to_string(m))] = eer;
    ctx.out << "metric=" << to_string(m) << " eer_mean=" << eer << '\n';
  }
  write_json(dir / "eer.json", eer_doc);

  TsneConfig tsne_cfg;
  tsne_cfg.seed = ctx.seed;
  tsne_cfg.threads = ctx.threads;
  if (o.fast) tsne_cfg.iterations = 300;
  std::vector<std::string> first7(ds.roster().begin(), ds.roster().begin() + std::min<std::ptrdiff_t>(7, ds.roster().size()));
  const LabeledMatrix tsne_view = subset(ds, first7, o.fast ? 60 : 0).select(FeatureGroup::All);
  const EmbeddingResult embedding = tsne_run(tsne_view, tsne_cfg);
  {
    auto file = open_output(dir / "tsne.csv");
    write_embedding_csv(file, embedding);
  }
  ctx.out << "tsne kl=" << embedding.kl << " purity10=" << neighbor_purity(embedding.coords, tsne_view.y, 10) << '\n';

  const auto rows = summary(std::move(reports));
  {
    auto file = open_output(dir / "summary.csv");
    write_summary_csv(file, rows);
  }
  write_sidecar(ctx, dir / "summary.csv", config);
  write_summary_text(ctx.out, rows);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"keyforge: keystroke-dynamics classification and verification benchmark", "keyforge"};
  app.require_subcommand(1);
  app.fallthrough();

  Context ctx{out, err, join_command(args)};
  Options o;
  std::optional<std::uint64_t> seed_flag;
  unsigned threads = 0;
  bool no_timing = false;
  app.add_option("--seed", seed_flag, "Master seed (default: $KEYFORGE_SEED, then 42)");
  app.add_option("--threads", threads, "Worker bound; 0 = available cores");
  app.add_flag("--no-timing", no_timing, "Record 0 for wall-clock fields (byte-reproducible artifacts)");
  app.add_flag("--quiet", ctx.quiet, "Suppress progress output");

  const auto group_check = CLI::IsMember({"H", "DD", "UD", "all", "h", "dd", "ud", "All"});
  const auto model_check = CLI::IsMember({"knn", "rf", "gbt", "mlp"});

  auto* ingest = app.add_subcommand("ingest", "Validate a CMU-format CSV and optionally re-emit it canonically");
  ingest->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", o.out);

  auto* synth = app.add_subcommand("synth", "Write a synthetic CMU-format dataset");
  synth->add_option("--subjects", o.synth_subjects);
  synth->add_option("--reps", o.synth_reps);
  synth->add_option("--noise", o.synth_noise, "Noise scale (1 = easily separable)");
  synth->add_option("--out", o.out)->required();

  auto* explore = app.add_subcommand("explore", "Per-subject mean/std traces of one feature group");
  explore->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  explore->add_option("--features", o.features)->check(group_check);
  explore->add_option("--subjects", o.subjects, "Comma-separated subjects (default: 6 chosen by seed)");
  explore->add_option("--count", o.random_subjects, "Number of randomly chosen subjects");
  explore->add_option("--out", o.out);

  auto* split_cmd = app.add_subcommand("split", "Stratified train/test split");
  split_cmd->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--train-frac", o.train_frac);
  split_cmd->add_flag("--no-stratify", o.no_stratify);
  split_cmd->add_option("--out", o.out, "Output directory (train.csv, test.csv)")->required();

  auto* augment_cmd = app.add_subcommand("augment", "Append uniformly perturbed copies of every row");
  augment_cmd->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  augment_cmd->add_option("--augment-ratio,--ratio", o.augment_ratio);
  augment_cmd->add_option("--augment-range,--range", o.augment_range);
  augment_cmd->add_option("--out", o.out)->required();
  o.augment_ratio = 0;

  auto* train = app.add_subcommand("train", "Fit a classifier and write a model file");
  train->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  train->add_option("--model", o.model)->check(model_check);
  train->add_option("--features", o.features)->check(group_check);
  train->add_option("--augment-ratio", o.augment_ratio);
  train->add_option("--augment-range", o.augment_range);
  train->add_option("--config", o.config_path, "JSON object of model hyperparameters")->check(CLI::ExistingFile);
  train->add_option("--param", o.params, "Hyperparameter override key=value (repeatable)");
  train->add_option("--name", o.name, "Display name for reports");
  train->add_option("--out", o.out, "Model file (.json = text, otherwise CBOR)")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a model file on a held-out dataset");
  eval->add_option("--model-file", o.model_file)->required()->check(CLI::ExistingFile);
  eval->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  eval->add_option("--out", o.out, "Report JSON");

  auto* tune_cmd = app.add_subcommand("tune", "Budgeted hyperparameter search");
  tune_cmd->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  tune_cmd->add_option("--model", o.model)->check(model_check);
  tune_cmd->add_option("--features", o.features)->check(group_check);
  tune_cmd->add_option("--budget", o.budget);
  tune_cmd->add_option("--method", o.method)->check(CLI::IsMember({"random", "smbo"}));
  tune_cmd->add_option("--space", o.space_path, "Search-space file")->check(CLI::ExistingFile);
  tune_cmd->add_option("--config", o.config_path, "Fixed hyperparameters merged under each trial")
      ->check(CLI::ExistingFile);
  tune_cmd->add_option("--param", o.params);
  tune_cmd->add_option("--best-out", o.best_out, "Write the best configuration as JSON");
  tune_cmd->add_option("--out", o.out, "Ledger CSV")->required();

  auto* eer = app.add_subcommand("eer", "Template-detector verification: scores, ROC and EER");
  eer->add_option("--input", o.input, "Dataset to split")->check(CLI::ExistingFile);
  eer->add_option("--train", o.train_path)->check(CLI::ExistingFile);
  eer->add_option("--test", o.test_path)->check(CLI::ExistingFile);
  eer->add_option("--train-frac", o.train_frac);
  eer->add_option("--features", o.features)->check(group_check);
  eer->add_option("--metric", o.metrics, "euclidean|manhattan|scaled-manhattan|mahalanobis|all (repeatable)");
  eer->add_option("--out", o.out, "Score dump CSV");
  eer->add_option("--roc-out", o.roc_out, "ROC points CSV");
  eer->add_option("--report", o.report_out, "EER summary JSON");

  auto* tsne = app.add_subcommand("tsne", "Exact t-SNE embedding of selected subjects");
  tsne->add_option("--input", o.input)->required()->check(CLI::ExistingFile);
  tsne->add_option("--features", o.features)->check(group_check);
  tsne->add_option("--subjects", o.subjects, "Comma-separated subjects");
  tsne->add_option("--first", o.first, "Use the first N roster subjects (default 7)");
  tsne->add_option("--per-subject", o.per_subject, "Cap records per subject (0 = all)");
  tsne->add_option("--perplexity", o.perplexity);
  tsne->add_option("--iterations", o.iterations);
  tsne->add_option("--out", o.out)->required();

  auto* report = app.add_subcommand("report", "Summarize report files into one comparison table");
  report->add_option("--inputs", o.inputs)->required()->check(CLI::ExistingFile);
  report->add_option("--out", o.out, "Summary CSV");

  auto* repro = app.add_subcommand("repro", "Run the full experiment matrix");
  repro->add_option("--input", o.input)->check(CLI::ExistingFile);
  repro->add_flag("--synthetic", o.synthetic, "Use a synthetic 51 x 400 dataset instead of --input");
  repro->add_flag("--fast", o.fast, "Reduced model sizes for smoke runs");
  repro->add_option("--train-frac", o.train_frac);
  repro->add_option("--out", o.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    ctx.seed = resolve_seed(seed_flag);
    ctx.threads = threads;
    ctx.timing = !no_timing;
    if (*ingest) return cmd_ingest(ctx, o);
    if (*synth) return cmd_synth(ctx, o);
    if (*explore) return cmd_explore(ctx, o);
    if (*split_cmd) return cmd_split(ctx, o);
    if (*augment_cmd) return cmd_augment(ctx, o);
    if (*train) return cmd_train(ctx, o);
    if (*eval) return cmd_eval(ctx, o);
    if (*tune_cmd) return cmd_tune(ctx, o);
    if (*eer) {
      if (o.input.empty() && o.train_path.empty()) throw ConfigError("eer needs --input or --train/--test");
      return cmd_eer(ctx, o);
    }
    if (*tsne) return cmd_tsne(ctx, o);
    if (*report) return cmd_report(ctx, o);
    if (*repro) {
      if (o.input.empty() && !o.synthetic) throw ConfigError("repro needs --input or --synthetic");
      return cmd_repro(ctx, o);
    }
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return 1;
  }
  err << "error: usage: no subcommand\n";
  return 2;
}

}  // namespace keyforge::cli
