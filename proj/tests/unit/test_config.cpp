#include "test_util.hpp"

using kf::json;

namespace {

json minimal() {
  return json::parse(R"({
    "dataset": {"kind": "csv", "path": "iris.csv"},
    "model": {"layers": [{"type": "dense", "in": 4, "out": 3}]}
  })");
}

void expect_schema_error(const json& j, const std::string& fragment) {
  try {
    kf::parse_run_config(j);
    ADD_FAILURE() << "accepted: " << j.dump();
  } catch (const kf::SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(Config, MinimalConfigGetsDefaults) {
  const auto cfg = kf::parse_run_config(minimal());
  EXPECT_EQ(cfg.optimizer.name, "adafisher");
  EXPECT_EQ(cfg.optimizer.lr, 0.001);
  EXPECT_EQ(cfg.optimizer.lambda, 0.001);
  EXPECT_EQ(cfg.optimizer.gamma, 0.8);
  EXPECT_EQ(cfg.optimizer.beta, 0.9);
  EXPECT_EQ(cfg.workers, 1u);
  EXPECT_EQ(cfg.layers.size(), 1u);
  EXPECT_EQ(cfg.dataset.label_column, "species");
}

TEST(Config, UnknownKeysAreRejectedWithAPath) {
  auto j = minimal();
  j["learning_rate"] = 0.1;
  expect_schema_error(j, "/learning_rate");
  j = minimal();
  j["model"]["layers"][0]["bias"] = true;
  expect_schema_error(j, "/model/layers/0/bias");
}

TEST(Config, TypeAndRangeViolations) {
  auto j = minimal();
  j["epochs"] = -1;
  expect_schema_error(j, "/epochs");
  j = minimal();
  j["optimizer"] = {{"name", "adafisher"}, {"lambda", 0.0}};
  expect_schema_error(j, "/optimizer/lambda");
  j = minimal();
  j["optimizer"] = "adagrad";
  expect_schema_error(j, "/optimizer");
  j = minimal();
  j["model"]["layers"][0]["type"] = "lstm";
  expect_schema_error(j, "lstm");
  j = minimal();
  j["dataset"]["limit"] = 5;
  expect_schema_error(j, "/dataset");
}

TEST(Config, OptimizerListAndTracker) {
  auto j = minimal();
  j["optimizers"] = json::array({"adam", {{"name", "sgd"}, {"lr", 0.1}, {"momentum", 0.5}}});
  j["tracker"] = json::array({{{"layer", 0}, {"index", 1}}, {{"layer", 0}, {"param", 0}, {"index", 2}}});
  j["schedule"] = {{"kind", "cosine"}, {"alpha_min", 1e-5}};
  const auto cfg = kf::parse_run_config(j);
  ASSERT_EQ(cfg.optimizers.size(), 2u);
  EXPECT_EQ(cfg.optimizers[1].lr, 0.1);
  EXPECT_EQ(cfg.optimizers[1].momentum, 0.5);
  EXPECT_EQ(cfg.tracker[1].index, 2u);
  EXPECT_FALSE(cfg.schedule.t_max.has_value());
}

TEST(Config, RelativePathsResolveAgainstTheConfigFile) {
  const auto dir = testutil::temp_dir("cfg_resolve");
  std::ofstream(dir / "run.json") << minimal().dump();
  const auto cfg = kf::load_run_config((dir / "run.json").string());
  EXPECT_EQ(cfg.resolve("iris.csv"), (dir / "iris.csv").string());
  EXPECT_EQ(cfg.resolve("/abs/x.csv"), "/abs/x.csv");
}

TEST(Config, UnreadableOrInvalidJsonIsSchemaError) {
  const auto dir = testutil::temp_dir("cfg_bad");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(kf::load_run_config((dir / "bad.json").string()), kf::SchemaError);
  EXPECT_THROW(kf::load_run_config((dir / "absent.json").string()), kf::SchemaError);
}

TEST(Config, BundledConfigsParse) {
  const std::filesystem::path dir = std::string(KRONFISHER_SOURCE_DIR) + "/configs";
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(kf::load_run_config(e.path().string())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 1u);
}

TEST(Factories, OptimizerAndScheduleFromSpecs) {
  kf::OptimizerSpec s;
  for (const char* name : {"adafisher", "adafisherw", "adam", "adamw", "sgd"}) {
    s.name = name;
    EXPECT_EQ(kf::make_optimizer(s)->name(), name);
  }
  kf::ScheduleSpec sch;
  sch.kind = "cosine";
  EXPECT_DOUBLE_EQ(kf::schedule_lr(kf::make_schedule(sch, 20), 20, 0.5), 0.0);
  sch.kind = "step";
  sch.period = 3;
  sch.factor = 0.5;
  EXPECT_DOUBLE_EQ(kf::schedule_lr(kf::make_schedule(sch, 20), 7, 0.5), 0.125);
}
