#include "keyforge/classifier.hpp"

#include <chrono>
#include <fstream>
#include <iterator>
#include <set>

#include "keyforge/error.hpp"

namespace keyforge {

using nlohmann::json;

std::string_view to_string(Family family) {
  switch (family) {
    case Family::Knn: return "knn";
    case Family::Forest: return "rf";
    case Family::Gbt: return "gbt";
    case Family::Mlp: return "mlp";
  }
  return "gbt";
}

Family parse_family(std::string_view text) {
  if (text == "knn") return Family::Knn;
  if (text == "rf" || text == "forest") return Family::Forest;
  if (text == "gbt" || text == "xgboost") return Family::Gbt;
  if (text == "mlp") return Family::Mlp;
  throw ConfigError("unknown model family '" + std::string(text) + "' (expected knn, rf, gbt or mlp)");
}

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view family) {
  if (!j.is_object()) throw ConfigError(std::string(family) + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown " + std::string(family) + " parameter '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("parameter '") + key + "': " + e.what());
  }
}

}  // namespace

KnnConfig knn_config_from_json(const json& j) {
  reject_unknown(j, {"n_neighbors", "weight", "p"}, "knn");
  KnnConfig c;
  read(j, "n_neighbors", c.n_neighbors);
  read(j, "p", c.p);
  if (j.contains("weight")) c.weight = parse_knn_weight(j.at("weight").get<std::string>());
  return c;
}

ForestConfig forest_config_from_json(const json& j) {
  reject_unknown(j,
                 {"n_estimators", "max_depth", "min_samples_leaf", "min_samples_split", "bootstrap",
                  "max_features", "seed"},
                 "rf");
  ForestConfig c;
  read(j, "n_estimators", c.n_estimators);
  if (j.contains("max_depth")) {
    const auto& d = j.at("max_depth");
    if (d.is_null() || (d.is_string() && (d == "None" || d == "none"))) {
      c.max_depth.reset();
    } else {
      c.max_depth = d.get<int>();
    }
  }
  read(j, "min_samples_leaf", c.min_samples_leaf);
  read(j, "min_samples_split", c.min_samples_split);
  read(j, "bootstrap", c.bootstrap);
  read(j, "max_features", c.max_features);
  read(j, "seed", c.seed);
  return c;
}

GbtConfig gbt_config_from_json(const json& j) {
  reject_unknown(j, {"learning_rate", "n_estimators", "max_depth", "min_child_weight", "lambda", "seed"}, "gbt");
  GbtConfig c;
  read(j, "learning_rate", c.learning_rate);
  read(j, "n_estimators", c.n_estimators);
  read(j, "max_depth", c.max_depth);
  read(j, "min_child_weight", c.min_child_weight);
  read(j, "lambda", c.lambda);
  read(j, "seed", c.seed);
  return c;
}

MlpConfig mlp_config_from_json(const json& j) {
  reject_unknown(j,
                 {"hidden", "batch_norm", "dropout", "learning_rate", "batch_size", "epochs", "beta1", "beta2",
                  "epsilon", "bn_momentum", "bn_epsilon", "seed", "activation"},
                 "mlp");
  MlpConfig c;
  read(j, "hidden", c.hidden);
  read(j, "batch_norm", c.batch_norm);
  read(j, "dropout", c.dropout);
  read(j, "learning_rate", c.learning_rate);
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "beta1", c.beta1);
  read(j, "beta2", c.beta2);
  read(j, "epsilon", c.epsilon);
  read(j, "bn_momentum", c.bn_momentum);
  read(j, "bn_epsilon", c.bn_epsilon);
  read(j, "seed", c.seed);
  if (j.contains("activation") && j.at("activation") != "relu") {
    throw ConfigError("only the relu activation is supported");
  }
  return c;
}

json to_json(const KnnConfig& c) {
  return {{"n_neighbors", c.n_neighbors}, {"weight", to_string(c.weight)}, {"p", c.p}};
}

json to_json(const ForestConfig& c) {
  return {{"n_estimators", c.n_estimators},
          {"max_depth", c.max_depth ? json(*c.max_depth) : json(nullptr)},
          {"min_samples_leaf", c.min_samples_leaf},
          {"min_samples_split", c.min_samples_split},
          {"bootstrap", c.bootstrap},
          {"max_features", c.max_features},
          {"seed", c.seed}};
}

json to_json(const GbtConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"n_estimators", c.n_estimators},
          {"max_depth", c.max_depth},         {"min_child_weight", c.min_child_weight},
          {"lambda", c.lambda},               {"seed", c.seed}};
}

json to_json(const MlpConfig& c) {
  return {{"hidden", c.hidden},   {"batch_norm", c.batch_norm},     {"activation", "relu"},
          {"dropout", c.dropout}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},   {"beta1", c.beta1},               {"beta2", c.beta2},
          {"epsilon", c.epsilon}, {"bn_momentum", c.bn_momentum},   {"bn_epsilon", c.bn_epsilon},
          {"seed", c.seed}};
}

json ClassifierModel::config() const {
  return std::visit([](const auto& m) { return to_json(m.config); }, params);
}

Eigen::MatrixXd ClassifierModel::predict_proba(const Eigen::MatrixXd& x, unsigned threads) const {
  const Eigen::MatrixXd input = standardizer.apply(x);
  switch (family()) {
    case Family::Knn: return knn_predict(std::get<KnnModel>(params), input, threads);
    case Family::Forest: return forest_predict(std::get<ForestModel>(params), input, threads);
    case Family::Gbt: return gbt_predict(std::get<GbtModel>(params), input);
    case Family::Mlp: return mlp_predict(std::get<MlpModel>(params), input);
  }
  return {};
}

std::vector<int> ClassifierModel::predict(const Eigen::MatrixXd& x, unsigned threads) const {
  return argmax_rows(predict_proba(x, threads));
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& proba) {
  std::vector<int> out(static_cast<std::size_t>(proba.rows()));
  for (Eigen::Index r = 0; r < proba.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < proba.cols(); ++c) {
      if (proba(r, c) > proba(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

ClassifierModel fit_classifier(const LabeledMatrix& train, FeatureGroup features, const FitOptions& options) {
  json config = options.config.is_null() ? json::object() : options.config;
  if (options.family != Family::Knn && !config.contains("seed")) config["seed"] = options.seed;

  ClassifierModel model;
  model.name = std::string(to_string(options.family));
  model.roster = train.roster;
  model.columns = train.columns;
  model.features = features;
  model.seed = config.value("seed", options.seed);

  const auto start = std::chrono::steady_clock::now();
  switch (options.family) {
    case Family::Knn:
      model.params = knn_fit(train, knn_config_from_json(config));
      break;
    case Family::Forest:
      model.params = forest_fit(train, forest_config_from_json(config), options.threads);
      break;
    case Family::Gbt: {
      RoundCallback on_round;
      if (options.progress) {
        on_round = [&](int round, double loss) {
          options.progress("round " + std::to_string(round + 1) + " train_loss " + std::to_string(loss));
        };
      }
      model.params = gbt_fit(train, gbt_config_from_json(config), options.threads, on_round);
      break;
    }
    case Family::Mlp: {
      model.standardizer = Standardizer::fit(train.x);
      LabeledMatrix scaled = train;
      scaled.x = model.standardizer.apply(train.x);
      EpochCallback on_epoch;
      if (options.progress) {
        on_epoch = [&](int epoch, double loss) {
          options.progress("epoch " + std::to_string(epoch + 1) + " train_loss " + std::to_string(loss));
        };
      }
      model.params = mlp_fit(scaled, mlp_config_from_json(config), on_epoch);
      break;
    }
  }
  if (options.record_timing) {
    model.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

template <typename Matrix>
json matrix_to_json(const Matrix& m) {
  // Row-major flattening regardless of storage order.
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

template <typename Matrix>
Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto flat = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(flat.size()) != rows * cols) throw FormatError("matrix payload size mismatch");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

json vector_to_json(const Eigen::RowVectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::RowVectorXd vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::RowVectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json params_to_json(const KnnModel& m) {
  return {{"n_classes", m.n_classes}, {"x", matrix_to_json(m.x)}, {"y", m.y}};
}

json params_to_json(const ForestModel& m) {
  json trees = json::array();
  for (const auto& t : m.trees) {
    json tree;
    std::vector<int> feature, left, right, begin, end, label;
    std::vector<double> threshold, probability;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      begin.push_back(n.leaf_begin);
      end.push_back(n.leaf_end);
    }
    for (const auto& e : t.entries) {
      label.push_back(e.label);
      probability.push_back(e.probability);
    }
    tree["feature"] = feature;
    tree["threshold"] = threshold;
    tree["left"] = left;
    tree["right"] = right;
    tree["leaf_begin"] = begin;
    tree["leaf_end"] = end;
    tree["label"] = label;
    tree["probability"] = probability;
    trees.push_back(std::move(tree));
  }
  return {{"n_classes", m.n_classes}, {"n_features", m.n_features}, {"trees", std::move(trees)}};
}

json params_to_json(const GbtModel& m) {
  json trees = json::array();
  for (const auto& t : m.trees) {
    std::vector<int> feature, left, right;
    std::vector<double> threshold, weight;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      weight.push_back(n.weight);
    }
    trees.push_back(
        {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"weight", weight}});
  }
  return {{"n_classes", m.n_classes},
          {"n_features", m.n_features},
          {"train_loss", m.train_loss},
          {"trees", std::move(trees)}};
}

json params_to_json(const MlpModel& m) {
  json layers = json::array();
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    json layer = {{"weight", matrix_to_json(m.layers[l].weight)}, {"bias", vector_to_json(m.layers[l].bias)}};
    if (const auto& bn = m.norms[l]) {
      layer["batch_norm"] = {{"gamma", vector_to_json(bn->gamma)},
                             {"beta", vector_to_json(bn->beta)},
                             {"running_mean", vector_to_json(bn->running_mean)},
                             {"running_var", vector_to_json(bn->running_var)}};
    } else {
      layer["batch_norm"] = nullptr;
    }
    layers.push_back(std::move(layer));
  }
  return {{"n_inputs", m.n_inputs},
          {"n_classes", m.n_classes},
          {"loss_history", m.loss_history},
          {"layers", std::move(layers)}};
}

ModelParams params_from_json(Family family, const json& config, const json& p) {
  switch (family) {
    case Family::Knn: {
      KnnModel m;
      m.config = knn_config_from_json(config);
      m.n_classes = p.at("n_classes").get<std::size_t>();
      m.x = matrix_from_json<Eigen::MatrixXd>(p.at("x"));
      m.y = p.at("y").get<std::vector<int>>();
      return m;
    }
    case Family::Forest: {
      ForestModel m;
      m.config = forest_config_from_json(config);
      m.n_classes = p.at("n_classes").get<std::size_t>();
      m.n_features = p.at("n_features").get<std::size_t>();
      for (const auto& t : p.at("trees")) {
        ClassificationTree tree;
        const auto feature = t.at("feature").get<std::vector<int>>();
        const auto threshold = t.at("threshold").get<std::vector<double>>();
        const auto left = t.at("left").get<std::vector<int>>();
        const auto right = t.at("right").get<std::vector<int>>();
        const auto begin = t.at("leaf_begin").get<std::vector<int>>();
        const auto end = t.at("leaf_end").get<std::vector<int>>();
        const auto label = t.at("label").get<std::vector<int>>();
        const auto probability = t.at("probability").get<std::vector<double>>();
        for (std::size_t i = 0; i < feature.size(); ++i) {
          tree.nodes.push_back({feature[i], threshold.at(i), left.at(i), right.at(i), begin.at(i), end.at(i)});
        }
        for (std::size_t i = 0; i < label.size(); ++i) tree.entries.push_back({label[i], probability.at(i)});
        m.trees.push_back(std::move(tree));
      }
      return m;
    }
    case Family::Gbt: {
      GbtModel m;
      m.config = gbt_config_from_json(config);
      m.n_classes = p.at("n_classes").get<std::size_t>();
      m.n_features = p.at("n_features").get<std::size_t>();
      m.train_loss = p.at("train_loss").get<std::vector<double>>();
      for (const auto& t : p.at("trees")) {
        RegressionTree tree;
        const auto feature = t.at("feature").get<std::vector<int>>();
        const auto threshold = t.at("threshold").get<std::vector<double>>();
        const auto left = t.at("left").get<std::vector<int>>();
        const auto right = t.at("right").get<std::vector<int>>();
        const auto weight = t.at("weight").get<std::vector<double>>();
        for (std::size_t i = 0; i < feature.size(); ++i) {
          tree.nodes.push_back({feature[i], threshold.at(i), left.at(i), right.at(i), weight.at(i)});
        }
        m.trees.push_back(std::move(tree));
      }
      return m;
    }
    case Family::Mlp: {
      MlpModel m;
      m.config = mlp_config_from_json(config);
      m.n_inputs = p.at("n_inputs").get<std::size_t>();
      m.n_classes = p.at("n_classes").get<std::size_t>();
      m.loss_history = p.at("loss_history").get<std::vector<double>>();
      for (const auto& layer : p.at("layers")) {
        m.layers.push_back({matrix_from_json<RowMatrix>(layer.at("weight")), vector_from_json(layer.at("bias"))});
        const auto& bn = layer.at("batch_norm");
        if (bn.is_null()) {
          m.norms.emplace_back(std::nullopt);
        } else {
          m.norms.emplace_back(BatchNorm{vector_from_json(bn.at("gamma")), vector_from_json(bn.at("beta")),
                                         vector_from_json(bn.at("running_mean")),
                                         vector_from_json(bn.at("running_var"))});
        }
      }
      return m;
    }
  }
  throw FormatError("unknown family");
}

}  // namespace

json model_to_json(const ClassifierModel& model) {
  json doc;
  doc["format"] = "keyforge-model";
  doc["format_version"] = kModelFormatVersion;
  doc["family"] = to_string(model.family());
  doc["name"] = model.name;
  doc["features"] = to_string(model.features);
  doc["roster"] = model.roster;
  doc["columns"] = model.columns;
  doc["config"] = model.config();
  doc["seed"] = model.seed;
  doc["train_seconds"] = model.train_seconds;
  if (model.standardizer.empty()) {
    doc["standardizer"] = nullptr;
  } else {
    doc["standardizer"] = {{"mean", vector_to_json(model.standardizer.mean)},
                           {"scale", vector_to_json(model.standardizer.scale)}};
  }
  doc["params"] = std::visit([](const auto& m) { return params_to_json(m); }, model.params);
  return doc;
}

ClassifierModel model_from_json(const json& doc) {
  if (!doc.is_object() || doc.value("format", "") != "keyforge-model") {
    throw FormatError("not a keyforge model document");
  }
  const int version = doc.value("format_version", -1);
  if (version != kModelFormatVersion) {
    throw FormatError("model format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kModelFormatVersion) + ")");
  }
  try {
    ClassifierModel model;
    const Family family = parse_family(doc.at("family").get<std::string>());
    model.name = doc.value("name", std::string(to_string(family)));
    model.features = parse_feature_group(doc.at("features").get<std::string>());
    model.roster = doc.at("roster").get<std::vector<std::string>>();
    model.columns = doc.at("columns").get<std::vector<std::string>>();
    model.seed = doc.at("seed").get<std::uint64_t>();
    model.train_seconds = doc.at("train_seconds").get<double>();
    if (!doc.at("standardizer").is_null()) {
      model.standardizer.mean = vector_from_json(doc.at("standardizer").at("mean"));
      model.standardizer.scale = vector_from_json(doc.at("standardizer").at("scale"));
    }
    model.params = params_from_json(family, doc.at("config"), doc.at("params"));
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ClassifierModel& model, const json& provenance) {
  json doc = model_to_json(model);
  if (!provenance.empty()) doc["provenance"] = provenance;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  if (path.extension() == ".json") {
    out << doc.dump(1) << '\n';
  } else {
    const auto bytes = json::to_cbor(doc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty()) throw FormatError("model file '" + path.string() + "' is empty");
  json doc;
  try {
    doc = bytes.front() == '{' ? json::parse(bytes.begin(), bytes.end()) : json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw FormatError("cannot decode model file '" + path.string() + "': " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace keyforge
