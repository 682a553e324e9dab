#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "kronfisher/nn/layer.hpp"

namespace kronfisher {

using json = nlohmann::json;

struct DatasetSpec {
  std::string kind;  // "mnist" or "csv"
  std::string train_images, train_labels, test_images, test_labels;
  std::optional<std::size_t> limit, test_limit;
  std::string path;
  std::string label_column = "species";
  std::size_t pca_components = 0;  // 0 keeps the raw features, 2 projects onto the top PCs
};

struct OptimizerSpec {
  std::string name = "adafisher";  // adafisher | adafisherw | adam | adamw | sgd
  double lr = 0.001;
  double beta = 0.9;
  double gamma = 0.8;
  double lambda = 0.001;
  double kappa = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double momentum = 0.9;
};

struct ScheduleSpec {
  std::string kind = "constant";  // constant | step | cosine
  std::uint64_t period = 10;
  double factor = 0.1;
  std::optional<std::uint64_t> t_max;  // defaults to the epoch count
  double alpha_min = 0.0;
};

struct FisherProbeSpec {
  std::size_t inputs = 0;  // 0 disables the probe
  std::size_t samples = 10000;
};

struct LoggingSpec {
  std::size_t snapshot_every = 0;    // epochs; 0 disables snapshots
  std::size_t histogram_bins = 0;    // 0 disables fim_hist.csv
  std::size_t full_factor_max = 256; // largest factor exported in full
  FisherProbeSpec fisher_probe;
};

struct TrackedWeight {
  std::size_t layer = 0;
  std::size_t param = 0;
  std::size_t index = 0;
};

struct RunConfig {
  DatasetSpec dataset;
  std::vector<nn::LayerKind> layers;
  OptimizerSpec optimizer;
  std::vector<OptimizerSpec> optimizers;  // compare / landscape
  ScheduleSpec schedule;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  LoggingSpec logging;
  std::string output_dir = "runs";
  std::vector<TrackedWeight> tracker;
  std::filesystem::path base_dir;  // relative data paths resolve against this

  std::string resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return (path.is_absolute() || base_dir.empty() ? path : base_dir / path).string();
  }
};

namespace detail {

// Strict reader for one JSON object: unknown keys and wrong types raise
// SchemaError with a JSON-pointer-like location.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where, std::set<std::string> allowed)
      : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail(where_, "expected an object");
    for (const auto& [key, _] : j.items())
      if (!allowed.count(key)) fail(where_ + "/" + key, "unknown key");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& at(const std::string& key) const {
    if (!has(key)) fail(where_ + "/" + key, "required key missing");
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return where_ + "/" + key; }

  std::string str(const std::string& key, std::set<std::string> choices = {}) const {
    const json& v = at(key);
    if (!v.is_string()) fail(path(key), "expected a string");
    const auto s = v.get<std::string>();
    if (!choices.empty() && !choices.count(s)) fail(path(key), "unsupported value '" + s + "'");
    return s;
  }

  double number(const std::string& key, double lo, double hi, bool lo_open = false) const {
    const json& v = at(key);
    if (!v.is_number()) fail(path(key), "expected a number");
    const double d = v.get<double>();
    if (!(lo_open ? d > lo : d >= lo) || !(d <= hi))
      fail(path(key), "value " + std::to_string(d) + " out of range");
    return d;
  }

  std::uint64_t integer(const std::string& key, std::uint64_t lo) const {
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      fail(path(key), "expected a non-negative integer");
    const auto n = v.get<std::uint64_t>();
    if (n < lo) fail(path(key), "must be >= " + std::to_string(lo));
    return n;
  }

  template <class T>
  void opt_number(const std::string& key, T& out, double lo, double hi, bool lo_open = false) const {
    if (has(key)) out = number(key, lo, hi, lo_open);
  }
  template <class T>
  void opt_integer(const std::string& key, T& out, std::uint64_t lo = 0) const {
    if (has(key)) out = static_cast<T>(integer(key, lo));
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw SchemaError("config " + (where.empty() ? std::string("/") : where) + ": " + what);
  }

 private:
  const json& j_;
  std::string where_;
};

inline nn::LayerKind parse_layer(const json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    ObjectReader::fail(where, "layer needs a string 'type'");
  const auto type = j["type"].get<std::string>();
  if (type == "dense") {
    ObjectReader r(j, where, {"type", "in", "out"});
    return nn::DenseSpec{r.integer("in", 1), r.integer("out", 1)};
  }
  if (type == "conv2d") {
    ObjectReader r(j, where, {"type", "c_in", "c_out", "k_h", "k_w", "stride", "padding"});
    nn::Conv2DSpec s{r.integer("c_in", 1), r.integer("c_out", 1), r.integer("k_h", 1),
                     r.integer("k_w", 1)};
    r.opt_integer("stride", s.stride, 1);
    r.opt_integer("padding", s.padding);
    return s;
  }
  if (type == "batchnorm") {
    ObjectReader r(j, where, {"type", "channels"});
    return nn::BatchNormSpec{r.integer("channels", 1)};
  }
  if (type == "layernorm") {
    ObjectReader r(j, where, {"type", "features"});
    return nn::LayerNormSpec{r.integer("features", 1)};
  }
  if (type == "relu" || type == "tanh") {
    ObjectReader r(j, where, {"type"});
    return nn::ActivationSpec{type == "relu" ? nn::ActivationFn::ReLU : nn::ActivationFn::Tanh};
  }
  ObjectReader::fail(where + "/type", "unknown layer type '" + type + "'");
}

inline const std::set<std::string> kOptimizerNames = {"adafisher", "adafisherw", "adam", "adamw",
                                                      "sgd"};

inline OptimizerSpec parse_optimizer(const json& j, const std::string& where) {
  OptimizerSpec o;
  if (j.is_string()) {
    o.name = j.get<std::string>();
    if (!kOptimizerNames.count(o.name)) ObjectReader::fail(where, "unknown optimizer '" + o.name + "'");
    return o;
  }
  ObjectReader r(j, where,
                 {"name", "lr", "beta", "gamma", "lambda", "kappa", "beta1", "beta2", "eps",
                  "weight_decay", "momentum"});
  o.name = r.str("name", kOptimizerNames);
  r.opt_number("lr", o.lr, 0.0, 10.0, true);
  r.opt_number("beta", o.beta, 0.0, 0.999999);
  r.opt_number("gamma", o.gamma, 0.0, 1.0, true);
  r.opt_number("lambda", o.lambda, 0.0, 1e6, true);
  r.opt_number("kappa", o.kappa, 0.0, 1.0);
  r.opt_number("beta1", o.beta1, 0.0, 0.999999);
  r.opt_number("beta2", o.beta2, 0.0, 0.999999);
  r.opt_number("eps", o.eps, 0.0, 1.0, true);
  r.opt_number("weight_decay", o.weight_decay, 0.0, 1.0);
  r.opt_number("momentum", o.momentum, 0.0, 0.999999);
  return o;
}

}  // namespace detail

inline RunConfig parse_run_config(const json& j) {
  using detail::ObjectReader;
  RunConfig cfg;
  ObjectReader top(j, "",
                   {"dataset", "model", "optimizer", "optimizers", "schedule", "epochs",
                    "batch_size", "seed", "workers", "logging", "output_dir", "tracker"});

  ObjectReader ds(top.at("dataset"), "/dataset",
                  {"kind", "train_images", "train_labels", "test_images", "test_labels", "limit",
                   "test_limit", "path", "label_column", "pca_components"});
  cfg.dataset.kind = ds.str("kind", {"mnist", "csv"});
  if (cfg.dataset.kind == "mnist") {
    cfg.dataset.train_images = ds.str("train_images");
    cfg.dataset.train_labels = ds.str("train_labels");
    if (ds.has("test_images") != ds.has("test_labels"))
      ObjectReader::fail("/dataset", "test_images and test_labels go together");
    if (ds.has("test_images")) {
      cfg.dataset.test_images = ds.str("test_images");
      cfg.dataset.test_labels = ds.str("test_labels");
    }
    if (ds.has("limit")) cfg.dataset.limit = ds.integer("limit", 1);
    if (ds.has("test_limit")) cfg.dataset.test_limit = ds.integer("test_limit", 1);
  } else {
    cfg.dataset.path = ds.str("path");
    if (ds.has("label_column")) cfg.dataset.label_column = ds.str("label_column");
    if (ds.has("limit") || ds.has("test_limit") || ds.has("train_images") ||
        ds.has("test_images"))
      ObjectReader::fail("/dataset", "IDX keys are not valid for a csv dataset");
  }
  ds.opt_integer("pca_components", cfg.dataset.pca_components);
  if (cfg.dataset.pca_components != 0 && cfg.dataset.pca_components != 2)
    ObjectReader::fail("/dataset/pca_components", "must be 0 or 2");

  ObjectReader model(top.at("model"), "/model", {"layers"});
  const json& layers = model.at("layers");
  if (!layers.is_array() || layers.empty())
    ObjectReader::fail("/model/layers", "expected a non-empty array");
  for (std::size_t i = 0; i < layers.size(); ++i)
    cfg.layers.push_back(detail::parse_layer(layers[i], "/model/layers/" + std::to_string(i)));

  if (top.has("optimizer")) cfg.optimizer = detail::parse_optimizer(top.at("optimizer"), "/optimizer");
  if (top.has("optimizers")) {
    const json& list = top.at("optimizers");
    if (!list.is_array() || list.empty())
      ObjectReader::fail("/optimizers", "expected a non-empty array");
    for (std::size_t i = 0; i < list.size(); ++i)
      cfg.optimizers.push_back(
          detail::parse_optimizer(list[i], "/optimizers/" + std::to_string(i)));
  }

  if (top.has("schedule")) {
    ObjectReader s(top.at("schedule"), "/schedule", {"kind", "period", "factor", "t_max", "alpha_min"});
    cfg.schedule.kind = s.str("kind", {"constant", "step", "cosine"});
    s.opt_integer("period", cfg.schedule.period, 1);
    s.opt_number("factor", cfg.schedule.factor, 0.0, 1.0, true);
    if (s.has("t_max")) cfg.schedule.t_max = s.integer("t_max", 1);
    s.opt_number("alpha_min", cfg.schedule.alpha_min, 0.0, 10.0);
  }

  top.opt_integer("epochs", cfg.epochs);
  top.opt_integer("batch_size", cfg.batch_size, 1);
  top.opt_integer("seed", cfg.seed);
  top.opt_integer("workers", cfg.workers, 1);
  if (top.has("output_dir")) cfg.output_dir = top.str("output_dir");

  if (top.has("logging")) {
    ObjectReader l(top.at("logging"), "/logging",
                   {"snapshot_every", "histogram_bins", "full_factor_max", "fisher_probe"});
    l.opt_integer("snapshot_every", cfg.logging.snapshot_every);
    l.opt_integer("histogram_bins", cfg.logging.histogram_bins);
    if (cfg.logging.histogram_bins == 1)
      ObjectReader::fail("/logging/histogram_bins", "must be 0 or >= 2");
    l.opt_integer("full_factor_max", cfg.logging.full_factor_max);
    if (l.has("fisher_probe")) {
      ObjectReader p(l.at("fisher_probe"), "/logging/fisher_probe", {"inputs", "samples"});
      cfg.logging.fisher_probe.inputs = p.integer("inputs", 1);
      p.opt_integer("samples", cfg.logging.fisher_probe.samples, 1);
    }
  }

  if (top.has("tracker")) {
    const json& t = top.at("tracker");
    if (!t.is_array()) ObjectReader::fail("/tracker", "expected an array");
    for (std::size_t i = 0; i < t.size(); ++i) {
      ObjectReader w(t[i], "/tracker/" + std::to_string(i), {"layer", "param", "index"});
      TrackedWeight tw;
      tw.layer = w.integer("layer", 0);
      w.opt_integer("param", tw.param);
      tw.index = w.integer("index", 0);
      cfg.tracker.push_back(tw);
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("config " + path + " is not valid JSON: " + e.what());
  }
  RunConfig cfg = parse_run_config(j);
  cfg.base_dir = std::filesystem::absolute(path).parent_path();
  return cfg;
}

}  // namespace kronfisher
