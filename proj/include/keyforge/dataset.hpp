#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace keyforge {

inline constexpr std::size_t kFeatureCount = 31;
inline constexpr std::size_t kKeyCount = 11;
inline constexpr std::uint64_t kDefaultSeed = 42;

using FeatureVector = std::array<double, kFeatureCount>;

/// One repetition of the password by one subject. Timings are in seconds
/// and ordered as in the CMU header.
struct KeystrokeRecord {
  std::string subject;
  int session = 1;
  int rep = 1;
  FeatureVector features{};

  bool operator==(const KeystrokeRecord&) const = default;
};

enum class FeatureGroup { H, DD, UD, All };

std::string_view to_string(FeatureGroup group);
/// Accepts H, DD, UD, all (case-insensitive). Throws ConfigError otherwise.
FeatureGroup parse_feature_group(std::string_view text);

/// Column indices (into the 31 timing columns) a group denotes, ascending.
std::span<const std::size_t> group_columns(FeatureGroup group);

/// The 31 timing column names in canonical CMU order.
std::span<const std::string_view> timing_columns();

/// Dense numeric view of a dataset: one row per record, labels as roster
/// indices. This is what the learners and detectors consume.
struct LabeledMatrix {
  Eigen::MatrixXd x;
  std::vector<int> y;
  std::vector<std::string> roster;
  std::vector<std::string> columns;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t n_classes() const { return roster.size(); }
};

/// Immutable record table plus the subject roster.
class Dataset {
 public:
  Dataset() = default;
  /// Roster is built in first-appearance order.
  explicit Dataset(std::vector<KeystrokeRecord> records);
  /// Explicit roster; every record's subject must be listed.
  Dataset(std::vector<KeystrokeRecord> records, std::vector<std::string> roster);

  const std::vector<KeystrokeRecord>& records() const { return records_; }
  const std::vector<std::string>& roster() const { return roster_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// Roster index of record i.
  int label(std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }
  /// Throws LookupError for an unknown subject.
  int subject_index(std::string_view subject) const;

  LabeledMatrix select(FeatureGroup group) const;

 private:
  std::vector<KeystrokeRecord> records_;
  std::vector<std::string> roster_;
  std::vector<int> labels_;
};

/// Convenience alias for select(); the returned view shares nothing with
/// the dataset and has the same record count.
LabeledMatrix select_features(const Dataset& ds, FeatureGroup group);

// ---------------------------------------------------------------------------
// CSV input/output

Dataset read_dataset_csv(std::istream& in);
Dataset ingest_csv(const std::filesystem::path& path);
void write_dataset_csv(std::ostream& out, const Dataset& ds);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds);

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = kDefaultSeed;
  bool stratified = true;
};

struct SplitResult {
  Dataset train;
  Dataset test;
};

/// Both halves keep the parent roster and the parent's record order.
SplitResult split(const Dataset& ds, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Fixed keystroke dynamics sequence

/// 11x3 matrix: row k holds (H, DD, UD) of key k and its successor. The last
/// key (Return) has no successor, so its DD/UD cells hold kPad.
struct FixedKds {
  static constexpr double kPad = 0.0;
  static constexpr std::size_t kRows = kKeyCount;
  static constexpr std::size_t kCols = 3;

  std::array<std::array<double, kCols>, kRows> cells{};

  double operator()(std::size_t row, std::size_t col) const { return cells[row][col]; }
};

FixedKds to_fixed_kds(const FeatureVector& features);
inline FixedKds to_fixed_kds(const KeystrokeRecord& rec) { return to_fixed_kds(rec.features); }
/// Inverse of to_fixed_kds on the 31 non-pad cells.
FeatureVector from_fixed_kds(const FixedKds& kds);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  long long ratio = 2;
  double range = 0.02;
  std::uint64_t seed = kDefaultSeed;
};

/// Returns the originals followed by `ratio` perturbed copies of every row.
/// Each synthetic timing is original + delta, delta ~ U(-range, range).
Dataset augment(const Dataset& train, const AugmentConfig& cfg);

// ---------------------------------------------------------------------------
// Labels, exploration, fixtures

Eigen::MatrixXd one_hot_labels(std::span<const int> labels, std::size_t n_classes);
Eigen::MatrixXd one_hot_labels(const Dataset& ds);

struct SubjectTrace {
  std::string subject;
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> stddev;  // sample standard deviation; 0 for a single record
};

std::vector<SubjectTrace> explore_stats(const Dataset& ds, FeatureGroup group,
                                        std::span<const std::string> subjects);
/// CSV with columns subject,column_name,mean,std.
void write_traces_csv(std::ostream& out, std::span<const SubjectTrace> traces);

/// Well-separated synthetic keystroke data: every subject gets its own
/// Gaussian timing profile. Subjects are named s001, s002, ...
Dataset synth_fixture(std::size_t subjects, std::size_t reps, std::uint64_t seed,
                      double noise_scale = 1.0);

}  // namespace keyforge
