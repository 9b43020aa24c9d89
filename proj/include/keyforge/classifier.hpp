#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "keyforge/dataset.hpp"
#include "keyforge/forest.hpp"
#include "keyforge/gbt.hpp"
#include "keyforge/knn.hpp"
#include "keyforge/mlp.hpp"
#include "keyforge/standardize.hpp"

namespace keyforge {

enum class Family { Knn, Forest, Gbt, Mlp };

std::string_view to_string(Family family);
/// knn | rf | gbt | mlp
Family parse_family(std::string_view text);

// JSON <-> config. Missing keys keep their defaults; unknown keys are a
// ConfigError so typos in config files do not pass silently.
KnnConfig knn_config_from_json(const nlohmann::json& j);
ForestConfig forest_config_from_json(const nlohmann::json& j);
GbtConfig gbt_config_from_json(const nlohmann::json& j);
MlpConfig mlp_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const KnnConfig& c);
nlohmann::json to_json(const ForestConfig& c);
nlohmann::json to_json(const GbtConfig& c);
nlohmann::json to_json(const MlpConfig& c);

using ModelParams = std::variant<KnnModel, ForestModel, GbtModel, MlpModel>;

/// A fitted classifier of any family together with everything needed to
/// apply it to raw feature rows.
struct ClassifierModel {
  ModelParams params;
  std::string name;  // display label, e.g. "gbt+aug2"; defaults to the family
  std::vector<std::string> roster;
  std::vector<std::string> columns;
  FeatureGroup features = FeatureGroup::All;
  Standardizer standardizer;  // empty for families that use raw timings
  double train_seconds = 0.0;
  std::uint64_t seed = kDefaultSeed;

  Family family() const { return static_cast<Family>(params.index()); }
  nlohmann::json config() const;

  /// Rows are non-negative and sum to 1. `x` holds raw (unstandardized)
  /// features of the model's feature group.
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x, unsigned threads = 0) const;
  std::vector<int> predict(const Eigen::MatrixXd& x, unsigned threads = 0) const;
};

/// Row-wise argmax; ties go to the lowest class index.
std::vector<int> argmax_rows(const Eigen::MatrixXd& proba);

struct FitOptions {
  Family family = Family::Gbt;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = kDefaultSeed;  // used when config carries no "seed"
  unsigned threads = 0;
  bool record_timing = true;
  /// Progress lines (one per boosting round / epoch); may be empty.
  std::function<void(const std::string&)> progress;
};

ClassifierModel fit_classifier(const LabeledMatrix& train, FeatureGroup features, const FitOptions& options);

// Model files. A path ending in .json is written as indented text JSON,
// anything else as CBOR. Loading sniffs the encoding and rejects a
// mismatched format version with FormatError.
inline constexpr int kModelFormatVersion = 1;

nlohmann::json model_to_json(const ClassifierModel& model);
ClassifierModel model_from_json(const nlohmann::json& doc);
void save_model(const std::filesystem::path& path, const ClassifierModel& model,
                const nlohmann::json& provenance = nlohmann::json::object());
ClassifierModel load_model(const std::filesystem::path& path);

}  // namespace keyforge
