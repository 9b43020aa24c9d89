#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "keyforge/classifier.hpp"
#include "keyforge/dataset.hpp"
#include "keyforge/random.hpp"

namespace keyforge {

struct IntegerRange {
  long long lo = 0;
  long long hi = 0;
};

struct RealRange {
  double lo = 0.0;
  double hi = 1.0;
  bool log_uniform = false;
};

struct Categorical {
  std::vector<nlohmann::json> choices;
};

struct Dimension {
  std::string name;
  std::variant<IntegerRange, RealRange, Categorical> domain;
};

struct SearchSpace {
  std::vector<Dimension> dims;

  /// Throws ConfigError on empty ranges, non-positive log bounds or
  /// duplicate names.
  void validate() const;
};

/// A sampled point: JSON object keyed by dimension name.
using Configuration = nlohmann::json;

Configuration sample(const SearchSpace& space, Rng& rng);
Configuration sample(const SearchSpace& space, std::uint64_t seed);

/// Parses the table-style space notation, one dimension per line:
///
///   n_neighbors: [5, 50]                      integer range (two integers)
///   p: [1, 2, 3]                              choices (three or more)
///   weight: uniform, distance                 choices
///   max_depth: None, 5, 10                    None becomes null
///   C: Real(1e-6, 1e+6, log-uniform)
///   n: Integer(1, 8)    kernel: Categorical(linear, poly, rbf)
///
/// `=` may be used instead of `:`; `#` starts a comment.
SearchSpace parse_space(std::string_view text);
SearchSpace load_space(const std::filesystem::path& path);
/// Built-in search space per model family.
SearchSpace default_space(Family family);

enum class SearchMethod { Random, Smbo };
SearchMethod parse_search_method(std::string_view text);
std::string_view to_string(SearchMethod method);

struct TrialRecord {
  int trial = 0;
  Configuration params;
  double score = 0.0;  // validation accuracy in [0, 1]
  double seconds = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
};

/// Returns a score in [0, 1]; may throw, which marks the trial failed.
using Objective = std::function<double(const Configuration&, std::uint64_t seed)>;

struct TuneOptions {
  int budget = 50;
  SearchMethod method = SearchMethod::Smbo;
  std::uint64_t seed = kDefaultSeed;
  unsigned workers = 1;
  double gamma = 0.25;
  int candidates = 24;
  bool record_timing = true;
  std::function<void(const TrialRecord&)> on_trial;
};

struct TuneResult {
  Configuration best;
  double best_score = 0.0;
  int best_trial = 0;
  std::vector<TrialRecord> ledger;
};

TuneResult tune(const SearchSpace& space, const Objective& objective, const TuneOptions& options);

/// Proposes the next point from a ledger by maximizing the good/bad Parzen
/// density ratio over `candidates` draws from the good density. Falls back
/// to a prior sample when the ledger cannot be split (all scores equal).
Configuration propose_smbo(const SearchSpace& space, std::span<const TrialRecord> ledger, double gamma,
                           int candidates, Rng& rng);

/// CSV trial,params_json,score,seconds
void write_ledger_csv(std::ostream& out, std::span<const TrialRecord> ledger);

/// Validation accuracy of `family` on a seeded 80/20 split of `train`; the
/// sampled configuration is merged over `base_config`.
Objective classifier_objective(const Dataset& train, Family family, FeatureGroup features,
                               nlohmann::json base_config = nlohmann::json::object(), std::uint64_t split_seed = kDefaultSeed,
                               unsigned threads = 1);

}  // namespace keyforge
