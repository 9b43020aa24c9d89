#include "keyforge/hyperopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "keyforge/csv.hpp"
#include "keyforge/error.hpp"
#include "keyforge/eval.hpp"
#include "keyforge/parallel.hpp"

namespace keyforge {

using nlohmann::json;

void SearchSpace::validate() const {
  std::set<std::string> names;
  for (const auto& d : dims) {
    if (!names.insert(d.name).second) throw ConfigError("duplicate dimension '" + d.name + "'");
    if (const auto* r = std::get_if<IntegerRange>(&d.domain)) {
      if (r->lo > r->hi) throw ConfigError("dimension '" + d.name + "' has an empty integer range");
    } else if (const auto* r = std::get_if<RealRange>(&d.domain)) {
      if (!(r->lo <= r->hi)) throw ConfigError("dimension '" + d.name + "' has an empty real range");
      if (r->log_uniform && !(r->lo > 0.0)) {
        throw ConfigError("dimension '" + d.name + "' is log-uniform with a non-positive bound");
      }
    } else if (std::get<Categorical>(d.domain).choices.empty()) {
      throw ConfigError("dimension '" + d.name + "' has no choices");
    }
  }
}

// ---------------------------------------------------------------------------
// Unit-interval encoding shared by sampling and the Parzen estimators.

namespace {

double to_unit(const Dimension& d, const json& value) {
  if (const auto* r = std::get_if<IntegerRange>(&d.domain)) {
    const double span = static_cast<double>(r->hi - r->lo + 1);
    return (value.get<double>() - static_cast<double>(r->lo) + 0.5) / span;
  }
  const auto& r = std::get<RealRange>(d.domain);
  if (r.hi == r.lo) return 0.5;
  const double v = value.get<double>();
  if (r.log_uniform) return (std::log(v) - std::log(r.lo)) / (std::log(r.hi) - std::log(r.lo));
  return (v - r.lo) / (r.hi - r.lo);
}

json from_unit(const Dimension& d, double u) {
  u = std::clamp(u, 0.0, 1.0);
  if (const auto* r = std::get_if<IntegerRange>(&d.domain)) {
    const double span = static_cast<double>(r->hi - r->lo + 1);
    const auto offset = static_cast<long long>(std::floor(u * span));
    return std::clamp(r->lo + offset, r->lo, r->hi);
  }
  const auto& r = std::get<RealRange>(d.domain);
  const double v = r.log_uniform ? std::exp(std::log(r.lo) + u * (std::log(r.hi) - std::log(r.lo)))
                                 : r.lo + u * (r.hi - r.lo);
  return std::clamp(v, r.lo, r.hi);
}

std::size_t choice_index(const Categorical& c, const json& value) {
  const auto it = std::find(c.choices.begin(), c.choices.end(), value);
  return it == c.choices.end() ? 0 : static_cast<std::size_t>(it - c.choices.begin());
}

}  // namespace

Configuration sample(const SearchSpace& space, Rng& rng) {
  Configuration config = json::object();
  for (const auto& d : space.dims) {
    if (const auto* r = std::get_if<IntegerRange>(&d.domain)) {
      config[d.name] = rng.integer(r->lo, r->hi);
    } else if (const auto* c = std::get_if<Categorical>(&d.domain)) {
      config[d.name] = c->choices[rng.below(c->choices.size())];
    } else {
      config[d.name] = from_unit(d, rng.uniform());
    }
  }
  return config;
}

Configuration sample(const SearchSpace& space, std::uint64_t seed) {
  Rng rng(seed);
  return sample(space, rng);
}

// ---------------------------------------------------------------------------
// Space notation

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_commas(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

json parse_value(const std::string& token) {
  if (token == "None" || token == "none" || token == "null") return nullptr;
  if (token == "true") return true;
  if (token == "false") return false;
  long long integer = 0;
  if (csv::parse_int(token, integer)) return integer;
  double real = 0.0;
  if (csv::parse_double(token, real)) return real;
  return token;
}

bool is_integer_token(const std::string& token) {
  long long v = 0;
  return csv::parse_int(token, v);
}

// "Head(a, b)" -> {"Head", "a, b"}
bool call_form(const std::string& spec, std::string& head, std::string& args) {
  const auto open = spec.find('(');
  if (open == std::string::npos || spec.back() != ')') return false;
  head = trim(std::string_view(spec).substr(0, open));
  args = spec.substr(open + 1, spec.size() - open - 2);
  return true;
}

Dimension parse_dimension(const std::string& name, const std::string& spec, int line) {
  const auto fail = [&](const std::string& why) {
    return ConfigError("space line " + std::to_string(line) + " ('" + name + "'): " + why);
  };
  Dimension d;
  d.name = name;
  std::string head;
  std::string args;
  if (call_form(spec, head, args)) {
    const auto parts = split_commas(args);
    if (head == "Integer") {
      long long lo = 0;
      long long hi = 0;
      if (parts.size() != 2 || !csv::parse_int(parts[0], lo) || !csv::parse_int(parts[1], hi)) {
        throw fail("Integer(lo, hi) expects two integers");
      }
      d.domain = IntegerRange{lo, hi};
    } else if (head == "Real") {
      double lo = 0.0;
      double hi = 0.0;
      if (parts.size() < 2 || parts.size() > 3 || !csv::parse_double(parts[0], lo) || !csv::parse_double(parts[1], hi)) {
        throw fail("Real(lo, hi[, prior]) expects two numbers");
      }
      bool log_uniform = false;
      if (parts.size() == 3) {
        if (parts[2] == "log-uniform") {
          log_uniform = true;
        } else if (parts[2] != "uniform") {
          throw fail("unknown prior '" + parts[2] + "'");
        }
      }
      d.domain = RealRange{lo, hi, log_uniform};
    } else if (head == "Categorical") {
      Categorical c;
      for (const auto& p : parts) c.choices.push_back(parse_value(p));
      d.domain = std::move(c);
    } else {
      throw fail("unknown distribution '" + head + "'");
    }
    return d;
  }
  std::string body = spec;
  const bool bracketed = body.size() >= 2 && body.front() == '[' && body.back() == ']';
  if (bracketed) body = body.substr(1, body.size() - 2);
  const auto parts = split_commas(body);
  if (bracketed && parts.size() == 2 && is_integer_token(parts[0]) && is_integer_token(parts[1])) {
    d.domain = IntegerRange{parse_value(parts[0]).get<long long>(), parse_value(parts[1]).get<long long>()};
    return d;
  }
  Categorical c;
  for (const auto& p : parts) {
    if (p.empty()) throw fail("empty choice");
    c.choices.push_back(parse_value(p));
  }
  d.domain = std::move(c);
  return d;
}

}  // namespace

SearchSpace parse_space(std::string_view text) {
  SearchSpace space;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto sep = line.find_first_of(":=");
    if (sep == std::string::npos) {
      throw ConfigError("space line " + std::to_string(line_no) + ": expected 'name: spec'");
    }
    const std::string name = trim(std::string_view(line).substr(0, sep));
    const std::string spec = trim(std::string_view(line).substr(sep + 1));
    if (name.empty() || spec.empty()) {
      throw ConfigError("space line " + std::to_string(line_no) + ": missing name or spec");
    }
    space.dims.push_back(parse_dimension(name, spec, line_no));
  }
  space.validate();
  return space;
}

SearchSpace load_space(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_space(buffer.str());
}

SearchSpace default_space(Family family) {
  switch (family) {
    case Family::Knn:
      return parse_space(
          "n_neighbors: [5, 50]\n"
          "weight: uniform, distance\n"
          "p: [1, 2, 3]\n");
    case Family::Forest:
      return parse_space(
          "n_estimators: [100, 1000]\n"
          "max_depth: None, 5, 10, 15, 20, 30, 35, 40\n"
          "min_samples_leaf: [1, 10]\n"
          "min_samples_split: [2, 5]\n");
    case Family::Gbt:
      return parse_space(
          "learning_rate: Real(0.01, 1.0, log-uniform)\n"
          "n_estimators: [50, 1000]\n"
          "max_depth: [1, 6]\n"
          "min_child_weight: Real(0.1, 10.0, log-uniform)\n");
    case Family::Mlp:
      return parse_space(
          "learning_rate: Real(1e-4, 1e-2, log-uniform)\n"
          "dropout: Real(0.0, 0.5)\n"
          "batch_size: 64, 128, 256\n");
  }
  return {};
}

SearchMethod parse_search_method(std::string_view text) {
  if (text == "random") return SearchMethod::Random;
  if (text == "smbo" || text == "bayes" || text == "tpe") return SearchMethod::Smbo;
  throw ConfigError("unknown search method '" + std::string(text) + "' (expected random or smbo)");
}

std::string_view to_string(SearchMethod method) { return method == SearchMethod::Random ? "random" : "smbo"; }

// ---------------------------------------------------------------------------
// Parzen estimators

namespace {

constexpr double kMinBandwidth = 0.01;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

struct NumericParzen {
  std::vector<double> centers;
  double bandwidth = 1.0;

  explicit NumericParzen(std::vector<double> points) : centers(std::move(points)) {
    const auto m = static_cast<double>(centers.size());
    if (centers.size() >= 2) {
      double mean = 0.0;
      for (double c : centers) mean += c;
      mean /= m;
      double var = 0.0;
      for (double c : centers) var += (c - mean) * (c - mean);
      const double sigma = std::sqrt(var / (m - 1.0));
      // Silverman's rule of thumb.
      bandwidth = 1.06 * sigma * std::pow(m, -0.2);
    }
    // Without a count-dependent floor the good density collapses onto its
    // first cluster and the search creeps instead of exploring.
    const double floor = std::max(kMinBandwidth, 1.0 / std::min(100.0, m + 1.0));
    bandwidth = std::clamp(bandwidth, floor, 1.0);
  }

  // Mixture of a uniform prior on [0, 1] and truncated Gaussian kernels,
  // each component weighted 1 / (m + 1).
  double density(double u) const {
    double total = 1.0;
    for (double c : centers) {
      const double mass = normal_cdf((1.0 - c) / bandwidth) - normal_cdf(-c / bandwidth);
      const double z = (u - c) / bandwidth;
      total += std::exp(-0.5 * z * z) / (bandwidth * std::sqrt(2.0 * std::numbers::pi) * std::max(mass, 1e-12));
    }
    return total / static_cast<double>(centers.size() + 1);
  }

  double draw(Rng& rng) const {
    const std::size_t pick = rng.below(centers.size() + 1);
    if (pick == centers.size()) return rng.uniform();
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double u = rng.normal(centers[pick], bandwidth);
      if (u >= 0.0 && u <= 1.0) return u;
    }
    return std::clamp(centers[pick], 0.0, 1.0);
  }
};

struct CategoricalParzen {
  std::vector<double> weight;

  CategoricalParzen(std::size_t k, const std::vector<std::size_t>& observed) : weight(k, 1.0) {
    for (std::size_t o : observed) weight[o] += 1.0;
    const double total = static_cast<double>(k + observed.size());
    for (double& w : weight) w /= total;
  }

  double density(std::size_t choice) const { return weight[choice]; }

  std::size_t draw(Rng& rng) const {
    double u = rng.uniform();
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (u < weight[i]) return i;
      u -= weight[i];
    }
    return weight.size() - 1;
  }
};

struct DimensionModel {
  std::optional<NumericParzen> numeric;
  std::optional<CategoricalParzen> categorical;
};

DimensionModel fit_dimension(const Dimension& d, const std::vector<const TrialRecord*>& trials) {
  DimensionModel model;
  if (const auto* c = std::get_if<Categorical>(&d.domain)) {
    std::vector<std::size_t> observed;
    for (const auto* t : trials) observed.push_back(choice_index(*c, t->params.at(d.name)));
    model.categorical.emplace(c->choices.size(), observed);
  } else {
    std::vector<double> points;
    for (const auto* t : trials) points.push_back(to_unit(d, t->params.at(d.name)));
    model.numeric.emplace(std::move(points));
  }
  return model;
}

}  // namespace

Configuration propose_smbo(const SearchSpace& space, std::span<const TrialRecord> ledger, double gamma,
                           int candidates, Rng& rng) {
  if (ledger.size() < 2) return sample(space, rng);
  const auto [lo, hi] = std::minmax_element(ledger.begin(), ledger.end(),
                                            [](const TrialRecord& a, const TrialRecord& b) { return a.score < b.score; });
  if (lo->score == hi->score) return sample(space, rng);

  std::vector<const TrialRecord*> ranked;
  for (const auto& t : ledger) ranked.push_back(&t);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const TrialRecord* a, const TrialRecord* b) { return a->score > b->score; });
  const auto n_good = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(ranked.size()))), 1, ranked.size() - 1);
  const std::vector<const TrialRecord*> good(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n_good));
  const std::vector<const TrialRecord*> bad(ranked.begin() + static_cast<std::ptrdiff_t>(n_good), ranked.end());

  std::vector<DimensionModel> good_model;
  std::vector<DimensionModel> bad_model;
  for (const auto& d : space.dims) {
    good_model.push_back(fit_dimension(d, good));
    bad_model.push_back(fit_dimension(d, bad));
  }

  Configuration best;
  double best_ratio = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < std::max(candidates, 1); ++c) {
    Configuration candidate = json::object();
    double log_ratio = 0.0;
    for (std::size_t i = 0; i < space.dims.size(); ++i) {
      const auto& d = space.dims[i];
      if (good_model[i].categorical) {
        const std::size_t choice = good_model[i].categorical->draw(rng);
        candidate[d.name] = std::get<Categorical>(d.domain).choices[choice];
        log_ratio += std::log(good_model[i].categorical->density(choice)) -
                     std::log(bad_model[i].categorical->density(choice));
      } else {
        const double u = good_model[i].numeric->draw(rng);
        const json value = from_unit(d, u);
        candidate[d.name] = value;
        const double snapped = to_unit(d, value);
        log_ratio += std::log(good_model[i].numeric->density(snapped)) -
                     std::log(bad_model[i].numeric->density(snapped));
      }
    }
    if (log_ratio > best_ratio) {
      best_ratio = log_ratio;
      best = std::move(candidate);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

namespace {

TrialRecord run_trial(const Objective& objective, int index, Configuration params, std::uint64_t seed,
                      bool record_timing) {
  TrialRecord record;
  record.trial = index;
  record.params = std::move(params);
  record.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  try {
    const double score = objective(record.params, seed);
    if (!(score >= 0.0 && score <= 1.0)) throw NumericError("objective returned a score outside [0, 1]");
    record.score = score;
  } catch (const std::exception& e) {
    record.failed = true;
    record.score = 0.0;
    record.error = e.what();
  }
  if (record_timing) record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

}  // namespace

TuneResult tune(const SearchSpace& space, const Objective& objective, const TuneOptions& options) {
  if (options.budget < 1) throw ConfigError("search budget must be >= 1");
  space.validate();
  const auto budget = static_cast<std::size_t>(options.budget);
  const std::size_t warm = options.method == SearchMethod::Random
                               ? budget
                               : std::min(budget, (budget + 4) / 5);

  TuneResult result;
  result.ledger.resize(warm);
  parallel_for(warm, options.workers, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(options.seed, i);
    Rng rng(seed);
    result.ledger[i] = run_trial(objective, static_cast<int>(i), sample(space, rng), seed, options.record_timing);
  });
  if (options.on_trial) {
    for (const auto& t : result.ledger) options.on_trial(t);
  }

  for (std::size_t i = warm; i < budget; ++i) {
    const std::uint64_t seed = derive_seed(options.seed, i);
    Rng rng(derive_seed(seed, 1));
    Configuration params = propose_smbo(space, result.ledger, options.gamma, options.candidates, rng);
    result.ledger.push_back(run_trial(objective, static_cast<int>(i), std::move(params), seed, options.record_timing));
    if (options.on_trial) options.on_trial(result.ledger.back());
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < result.ledger.size(); ++i) {
    if (result.ledger[i].score > result.ledger[best].score) best = i;
  }
  result.best = result.ledger[best].params;
  result.best_score = result.ledger[best].score;
  result.best_trial = result.ledger[best].trial;
  return result;
}

void write_ledger_csv(std::ostream& out, std::span<const TrialRecord> ledger) {
  out << "trial,params_json,score,seconds\n";
  for (const auto& t : ledger) {
    out << t.trial << ',' << csv::quote(t.params.dump()) << ',' << csv::format_double(t.score) << ','
        << csv::format_double(t.seconds) << '\n';
  }
}

Objective classifier_objective(const Dataset& train, Family family, FeatureGroup features, json base_config,
                               std::uint64_t split_seed, unsigned threads) {
  auto parts = std::make_shared<SplitResult>(split(train, SplitSpec{0.8, split_seed, true}));
  auto fit_view = std::make_shared<LabeledMatrix>(parts->train.select(features));
  return [parts, fit_view, family, features, base_config = std::move(base_config), threads](
             const Configuration& params, std::uint64_t seed) {
    json config = base_config.is_object() ? base_config : json::object();
    config.update(params);
    FitOptions options;
    options.family = family;
    options.config = std::move(config);
    options.seed = seed;
    options.threads = threads;
    options.record_timing = false;
    const ClassifierModel model = fit_classifier(*fit_view, features, options);
    return accuracy_report(model, parts->test, threads).accuracy;
  };
}

}  // namespace keyforge
