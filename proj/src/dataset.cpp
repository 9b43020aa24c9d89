#include "keyforge/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "keyforge/csv.hpp"
#include "keyforge/error.hpp"
#include "keyforge/random.hpp"

namespace keyforge {

namespace {

constexpr std::array<std::string_view, kFeatureCount> kTimingColumns = {
    "H.period",        "DD.period.t",     "UD.period.t",     "H.t",
    "DD.t.i",          "UD.t.i",          "H.i",             "DD.i.e",
    "UD.i.e",          "H.e",             "DD.e.five",       "UD.e.five",
    "H.five",          "DD.five.Shift.r", "UD.five.Shift.r", "H.Shift.r",
    "DD.Shift.r.o",    "UD.Shift.r.o",    "H.o",             "DD.o.a",
    "UD.o.a",          "H.a",             "DD.a.n",          "UD.a.n",
    "H.n",             "DD.n.l",          "UD.n.l",          "H.l",
    "DD.l.Return",     "UD.l.Return",     "H.Return"};

constexpr std::array<std::string_view, 3> kMetaColumns = {"subject", "sessionIndex", "rep"};

// Key k owns columns 3k (H), 3k+1 (DD to key k+1) and 3k+2 (UD to key k+1);
// the last key only has H at column 30.
constexpr auto make_group(std::size_t offset, std::size_t count) {
  std::array<std::size_t, 11> out{};
  for (std::size_t i = 0; i < count; ++i) out[i] = 3 * i + offset;
  return out;
}

constexpr auto kHColumns = make_group(0, 11);
constexpr auto kDDColumns = make_group(1, 10);
constexpr auto kUDColumns = make_group(2, 10);

constexpr auto make_all() {
  std::array<std::size_t, kFeatureCount> out{};
  for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = i;
  return out;
}
constexpr auto kAllColumns = make_all();

bool is_hold_or_down_down(std::size_t column) { return column % 3 != 2; }

}  // namespace

std::string_view to_string(FeatureGroup group) {
  switch (group) {
    case FeatureGroup::H: return "H";
    case FeatureGroup::DD: return "DD";
    case FeatureGroup::UD: return "UD";
    case FeatureGroup::All: return "all";
  }
  return "all";
}

FeatureGroup parse_feature_group(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "h") return FeatureGroup::H;
  if (lower == "dd") return FeatureGroup::DD;
  if (lower == "ud") return FeatureGroup::UD;
  if (lower == "all") return FeatureGroup::All;
  throw ConfigError("unknown feature group '" + std::string(text) + "' (expected H, DD, UD or all)");
}

std::span<const std::size_t> group_columns(FeatureGroup group) {
  switch (group) {
    case FeatureGroup::H: return {kHColumns.data(), 11};
    case FeatureGroup::DD: return {kDDColumns.data(), 10};
    case FeatureGroup::UD: return {kUDColumns.data(), 10};
    case FeatureGroup::All: break;
  }
  return {kAllColumns.data(), kAllColumns.size()};
}

std::span<const std::string_view> timing_columns() { return kTimingColumns; }

// ---------------------------------------------------------------------------

Dataset::Dataset(std::vector<KeystrokeRecord> records) : records_(std::move(records)) {
  std::unordered_map<std::string, int> index;
  labels_.reserve(records_.size());
  for (const auto& rec : records_) {
    auto [it, inserted] = index.try_emplace(rec.subject, static_cast<int>(roster_.size()));
    if (inserted) roster_.push_back(rec.subject);
    labels_.push_back(it->second);
  }
}

Dataset::Dataset(std::vector<KeystrokeRecord> records, std::vector<std::string> roster)
    : records_(std::move(records)), roster_(std::move(roster)) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < roster_.size(); ++i) {
    if (!index.try_emplace(roster_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate subject '" + roster_[i] + "' in roster");
    }
  }
  labels_.reserve(records_.size());
  for (const auto& rec : records_) {
    const auto it = index.find(rec.subject);
    if (it == index.end()) throw LookupError("subject '" + rec.subject + "' is not in the roster");
    labels_.push_back(it->second);
  }
}

int Dataset::subject_index(std::string_view subject) const {
  const auto it = std::find(roster_.begin(), roster_.end(), subject);
  if (it == roster_.end()) throw LookupError("unknown subject '" + std::string(subject) + "'");
  return static_cast<int>(it - roster_.begin());
}

LabeledMatrix Dataset::select(FeatureGroup group) const {
  const auto columns = group_columns(group);
  LabeledMatrix view;
  view.x.resize(static_cast<Eigen::Index>(records_.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < records_.size(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      view.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = records_[i].features[columns[j]];
    }
  }
  view.y = labels_;
  view.roster = roster_;
  for (std::size_t c : columns) view.columns.emplace_back(kTimingColumns[c]);
  return view;
}

LabeledMatrix select_features(const Dataset& ds, FeatureGroup group) { return ds.select(group); }

// ---------------------------------------------------------------------------

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw EmptyDatasetError("input has no header row");
  const auto header = csv::split_line(line);
  const std::size_t expected = kMetaColumns.size() + kFeatureCount;
  for (std::size_t i = 0; i < std::min(header.size(), expected); ++i) {
    const std::string_view want = i < 3 ? kMetaColumns[i] : kTimingColumns[i - 3];
    if (header[i] != want) {
      throw SchemaError("column " + std::to_string(i + 1) + " is '" + header[i] + "', expected '" +
                        std::string(want) + "'");
    }
  }
  if (header.size() != expected) {
    throw SchemaError("header has " + std::to_string(header.size()) + " columns, expected " +
                      std::to_string(expected));
  }

  std::vector<KeystrokeRecord> records;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv::split_line(line);
    const auto where = [&] { return "row " + std::to_string(row); };
    if (fields.size() != expected) {
      throw ParseError(where() + ": " + std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(expected));
    }
    KeystrokeRecord rec;
    rec.subject = fields[0];
    if (rec.subject.empty()) throw ParseError(where() + ": empty subject label");
    long long session = 0;
    long long rep = 0;
    if (!csv::parse_int(fields[1], session) || session < 1 || session > 8) {
      throw ParseError(where() + ": sessionIndex '" + fields[1] + "' is not an integer in 1..8");
    }
    if (!csv::parse_int(fields[2], rep) || rep < 1 || rep > 50) {
      throw ParseError(where() + ": rep '" + fields[2] + "' is not an integer in 1..50");
    }
    rec.session = static_cast<int>(session);
    rec.rep = static_cast<int>(rep);
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      double value = 0.0;
      if (!csv::parse_double(fields[j + 3], value)) {
        throw ParseError(where() + ": column '" + std::string(kTimingColumns[j]) +
                         "' value '" + fields[j + 3] + "' is not numeric");
      }
      if (value < 0.0 && is_hold_or_down_down(j)) {
        throw ParseError(where() + ": column '" + std::string(kTimingColumns[j]) +
                         "' is negative");
      }
      rec.features[j] = value;
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw EmptyDatasetError("input has a header but no data rows");
  return Dataset(std::move(records));
}

Dataset ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const Dataset& ds) {
  out << "subject,sessionIndex,rep";
  for (auto name : kTimingColumns) out << ',' << name;
  out << '\n';
  for (const auto& rec : ds.records()) {
    out << csv::quote(rec.subject) << ',' << rec.session << ',' << rec.rep;
    for (double v : rec.features) out << ',' << csv::format_double(v);
    out << '\n';
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  write_dataset_csv(out, ds);
}

// ---------------------------------------------------------------------------

SplitResult split(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1], got " + csv::format_double(spec.train_fraction));
  }
  Rng rng(spec.seed);
  std::vector<char> in_train(ds.size(), 0);

  const auto take = [&](std::vector<std::size_t>& pool) {
    rng.shuffle(std::span<std::size_t>(pool));
    const auto n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(pool.size()) * spec.train_fraction));
    for (std::size_t i = 0; i < n_train; ++i) in_train[pool[i]] = 1;
  };

  if (spec.stratified) {
    std::vector<std::vector<std::size_t>> by_subject(ds.roster().size());
    for (std::size_t i = 0; i < ds.size(); ++i) by_subject[ds.label(i)].push_back(i);
    for (std::size_t s = 0; s < by_subject.size(); ++s) {
      if (by_subject[s].size() == 1) {
        throw ConfigError("stratified split needs at least 2 records for subject '" +
                          ds.roster()[s] + "'");
      }
      take(by_subject[s]);
    }
  } else {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    take(all);
  }

  std::vector<KeystrokeRecord> train;
  std::vector<KeystrokeRecord> test;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (in_train[i] ? train : test).push_back(ds.records()[i]);
  }
  return {Dataset(std::move(train), ds.roster()), Dataset(std::move(test), ds.roster())};
}

// ---------------------------------------------------------------------------

FixedKds to_fixed_kds(const FeatureVector& features) {
  FixedKds kds;
  for (std::size_t k = 0; k < kKeyCount; ++k) {
    for (std::size_t c = 0; c < FixedKds::kCols; ++c) {
      const std::size_t column = 3 * k + c;
      kds.cells[k][c] = column < kFeatureCount ? features[column] : FixedKds::kPad;
    }
  }
  return kds;
}

FeatureVector from_fixed_kds(const FixedKds& kds) {
  FeatureVector features{};
  for (std::size_t column = 0; column < kFeatureCount; ++column) {
    features[column] = kds.cells[column / 3][column % 3];
  }
  return features;
}

// ---------------------------------------------------------------------------

Dataset augment(const Dataset& train, const AugmentConfig& cfg) {
  if (cfg.ratio < 0) throw ConfigError("augmentation ratio must be >= 0");
  if (!(cfg.range > 0.0)) throw ConfigError("augmentation range must be > 0");
  std::vector<KeystrokeRecord> out;
  out.reserve(train.size() * static_cast<std::size_t>(cfg.ratio + 1));
  out.insert(out.end(), train.records().begin(), train.records().end());
  Rng rng(cfg.seed);
  for (long long pass = 0; pass < cfg.ratio; ++pass) {
    for (const auto& rec : train.records()) {
      KeystrokeRecord copy = rec;
      for (double& v : copy.features) v += cfg.range * (2.0 * rng.uniform_open() - 1.0);
      out.push_back(std::move(copy));
    }
  }
  return Dataset(std::move(out), train.roster());
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd one_hot_labels(std::span<const int> labels, std::size_t n_classes) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()),
                                              static_cast<Eigen::Index>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return out;
}

Eigen::MatrixXd one_hot_labels(const Dataset& ds) {
  return one_hot_labels(ds.labels(), ds.roster().size());
}

std::vector<SubjectTrace> explore_stats(const Dataset& ds, FeatureGroup group,
                                        std::span<const std::string> subjects) {
  const auto columns = group_columns(group);
  std::vector<SubjectTrace> traces;
  for (const auto& subject : subjects) {
    const int label = ds.subject_index(subject);
    SubjectTrace trace;
    trace.subject = subject;
    trace.mean.assign(columns.size(), 0.0);
    trace.stddev.assign(columns.size(), 0.0);
    for (std::size_t c : columns) trace.columns.emplace_back(kTimingColumns[c]);

    std::size_t n = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.label(i) != label) continue;
      ++n;
      for (std::size_t j = 0; j < columns.size(); ++j) trace.mean[j] += ds.records()[i].features[columns[j]];
    }
    for (double& m : trace.mean) m /= static_cast<double>(std::max<std::size_t>(n, 1));
    if (n > 1) {
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.label(i) != label) continue;
        for (std::size_t j = 0; j < columns.size(); ++j) {
          const double d = ds.records()[i].features[columns[j]] - trace.mean[j];
          trace.stddev[j] += d * d;
        }
      }
      for (double& s : trace.stddev) s = std::sqrt(s / static_cast<double>(n - 1));
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

void write_traces_csv(std::ostream& out, std::span<const SubjectTrace> traces) {
  out << "subject,column_name,mean,std\n";
  for (const auto& t : traces) {
    for (std::size_t j = 0; j < t.columns.size(); ++j) {
      out << csv::quote(t.subject) << ',' << t.columns[j] << ',' << csv::format_double(t.mean[j])
          << ',' << csv::format_double(t.stddev[j]) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

Dataset synth_fixture(std::size_t subjects, std::size_t reps, std::uint64_t seed, double noise_scale) {
  if (subjects < 1 || reps < 1) throw ConfigError("synthetic fixture needs at least 1 subject and 1 rep");
  if (reps > 400) throw ConfigError("synthetic fixture supports at most 400 reps (8 sessions x 50)");
  Rng rng(seed);
  std::vector<KeystrokeRecord> records;
  records.reserve(subjects * reps);
  for (std::size_t s = 0; s < subjects; ++s) {
    std::array<double, kKeyCount> hold_mean{};
    std::array<double, kKeyCount - 1> gap_mean{};
    for (double& h : hold_mean) h = rng.uniform(0.05, 0.15);
    for (double& g : gap_mean) g = rng.uniform(-0.05, 0.35);

    char name[32];
    std::snprintf(name, sizeof(name), "s%03zu", s + 1);
    for (std::size_t r = 0; r < reps; ++r) {
      KeystrokeRecord rec;
      rec.subject = name;
      rec.session = static_cast<int>(r / 50) + 1;
      rec.rep = static_cast<int>(r % 50) + 1;
      for (std::size_t k = 0; k < kKeyCount; ++k) {
        const double hold = std::max(0.005, rng.normal(hold_mean[k], 0.012 * noise_scale));
        rec.features[3 * k] = hold;
        if (k + 1 < kKeyCount) {
          const double up_down = rng.normal(gap_mean[k], 0.03 * noise_scale);
          rec.features[3 * k + 1] = std::max(0.001, hold + up_down);
          rec.features[3 * k + 2] = up_down;
        }
      }
      records.push_back(std::move(rec));
    }
  }
  return Dataset(std::move(records));
}

}  // namespace keyforge
