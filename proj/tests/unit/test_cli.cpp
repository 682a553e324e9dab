#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "test_util.hpp"

using kf::json;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(KRONFISHER_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json mnist_config(const fs::path& out) {
  return {{"dataset",
           {{"kind", "mnist"},
            {"train_images", testutil::data_path("mnist/train-images-idx3-ubyte")},
            {"train_labels", testutil::data_path("mnist/train-labels-idx1-ubyte")},
            {"test_images", testutil::data_path("mnist/t10k-images-idx3-ubyte")},
            {"test_labels", testutil::data_path("mnist/t10k-labels-idx1-ubyte")},
            {"limit", 200},
            {"test_limit", 100}}},
          {"model",
           {{"layers", json::array({{{"type", "dense"}, {"in", 784}, {"out", 16}},
                                    {{"type", "relu"}},
                                    {{"type", "dense"}, {"in", 16}, {"out", 10}}})}}},
          {"optimizer", "adafisher"},
          {"epochs", 2},
          {"batch_size", 50},
          {"seed", 3},
          {"output_dir", out.string()}};
}

json iris_config(const fs::path& out) {
  return {{"dataset", {{"kind", "csv"}, {"path", testutil::data_path("iris.csv")}, {"pca_components", 2}}},
          {"model",
           {{"layers", json::array({{{"type", "dense"}, {"in", 2}, {"out", 8}},
                                    {{"type", "tanh"}},
                                    {{"type", "dense"}, {"in", 8}, {"out", 3}}})}}},
          {"optimizers", json::array({"adafisher", "adam"})},
          {"tracker", json::array({{{"layer", 0}, {"index", 0}}, {{"layer", 2}, {"index", 5}}})},
          {"epochs", 2},
          {"batch_size", 30},
          {"seed", 5},
          {"output_dir", out.string()}};
}

std::string write_config(const fs::path& dir, const json& j, const std::string& name = "run.json") {
  std::ofstream(dir / name) << j.dump(2);
  return (dir / name).string();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST(Cli, ZeroEpochsWritesHeaderOnly) {
  const auto dir = testutil::temp_dir("cli_zero");
  auto j = mnist_config(dir / "out");
  j["epochs"] = 0;
  ASSERT_EQ(run_cli("train --config " + write_config(dir, j)), 0);
  EXPECT_EQ(lines(dir / "out/metrics.csv"), std::vector<std::string>{kf::kMetricsHeader});
  EXPECT_TRUE(fs::exists(dir / "out/final_model.json"));
}

TEST(Cli, TrainIsByteDeterministic) {
  const auto dir = testutil::temp_dir("cli_det");
  const auto cfg = write_config(dir, mnist_config(dir / "unused"));
  ASSERT_EQ(run_cli("train --config " + cfg + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli("train --config " + cfg + " --out " + (dir / "b").string()), 0);
  const auto a = testutil::read_text(dir / "a/metrics.csv");
  EXPECT_EQ(a, testutil::read_text(dir / "b/metrics.csv"));
  EXPECT_EQ(testutil::read_text(dir / "a/final_model.json"),
            testutil::read_text(dir / "b/final_model.json"));
  const auto rows = lines(dir / "a/metrics.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_NE(rows[1].find(",train,"), std::string::npos);
  EXPECT_NE(rows[2].find(",adafisher,3"), std::string::npos);
  EXPECT_EQ(lines(dir / "a/timing.csv").size(), 1u + 2 * 4);
}

TEST(Cli, FlagsOverrideTheConfig) {
  const auto dir = testutil::temp_dir("cli_flags");
  const auto cfg = write_config(dir, mnist_config(dir / "unused"));
  ASSERT_EQ(run_cli("train --config " + cfg + " --epochs 1 --seed 9 --optimizer adam --out " +
                    (dir / "o").string()),
            0);
  const auto rows = lines(dir / "o/metrics.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NE(rows[1].find(",adam,9"), std::string::npos);
}

TEST(Cli, WorkersFlagRunsDistributedTraining) {
  const auto dir = testutil::temp_dir("cli_workers");
  const auto cfg = write_config(dir, mnist_config(dir / "unused"));
  ASSERT_EQ(run_cli("train --config " + cfg + " --workers 2 --out " + (dir / "w2").string()), 0);
  EXPECT_EQ(lines(dir / "w2/metrics.csv").size(), 3u);
  EXPECT_EQ(run_cli("train --config " + cfg + " --workers 3 --out " + (dir / "w3").string()), 2);
}

TEST(Cli, SchemaViolationsExitTwo) {
  const auto dir = testutil::temp_dir("cli_schema");
  auto j = mnist_config(dir / "out");
  j["unexpected"] = 1;
  EXPECT_EQ(run_cli("train --config " + write_config(dir, j, "a.json")), 2);
  j = mnist_config(dir / "out");
  j["model"]["layers"][0]["in"] = 100;
  EXPECT_EQ(run_cli("train --config " + write_config(dir, j, "b.json")), 2);
  EXPECT_EQ(run_cli("train --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("train"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
}

TEST(Cli, DatasetErrorsExitThree) {
  const auto dir = testutil::temp_dir("cli_data");
  auto j = mnist_config(dir / "out");
  j["dataset"]["train_images"] = (dir / "nope").string();
  EXPECT_EQ(run_cli("train --config " + write_config(dir, j)), 3);
  std::ofstream(dir / "snap.json") << R"({"layers": [{"layer_id": 0}]})";
  EXPECT_EQ(run_cli("diagnose --snapshot " + (dir / "snap.json").string() + " --out " +
                    (dir / "d").string()),
            3);
  EXPECT_EQ(run_cli("diagnose --snapshot " + (dir / "absent.json").string()), 3);
}

TEST(Cli, DivergenceExitsFour) {
  const auto dir = testutil::temp_dir("cli_nan");
  {
    std::ofstream csv(dir / "huge.csv");
    csv << "a,b,label\n";
    for (int i = 0; i < 8; ++i) csv << (i % 2 ? "1e300" : "-1e300") << ",3e299," << (i % 3) << '\n';
  }
  json j = {{"dataset", {{"kind", "csv"}, {"path", (dir / "huge.csv").string()}, {"label_column", "label"}}},
            {"model",
             {{"layers", json::array({{{"type", "dense"}, {"in", 2}, {"out", 8}},
                                      {{"type", "relu"}},
                                      {{"type", "dense"}, {"in", 8}, {"out", 3}}})}}},
            {"optimizer", {{"name", "sgd"}, {"lr", 1.0}}},
            {"epochs", 5},
            {"batch_size", 4},
            {"output_dir", (dir / "out").string()}};
  EXPECT_EQ(run_cli("train --config " + write_config(dir, j)), 4);
}

TEST(Cli, CompareWritesOneRowPerOptimizer) {
  const auto dir = testutil::temp_dir("cli_compare");
  auto j = mnist_config(dir / "out");
  j.erase("optimizer");
  j["optimizers"] = json::array({"adafisher", "adam", "adafisher"});
  ASSERT_EQ(run_cli("compare --config " + write_config(dir, j)), 0);
  const auto rows = lines(dir / "out/comparison.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "optimizer,best_test_accuracy,final_test_accuracy,final_loss,status");
  EXPECT_EQ(rows[1], rows[3]);
  EXPECT_EQ(rows[2].rfind("adam,", 0), 0u);
  EXPECT_EQ(lines(dir / "out/comparison_timing.csv").size(), 4u);
  EXPECT_TRUE(fs::exists(dir / "out/1_adam/metrics.csv"));
  j["optimizers"] = json::array({"adam"});
  EXPECT_EQ(run_cli("compare --config " + write_config(dir, j, "one.json")), 2);
}

TEST(Cli, DiagnoseIdentitySnapshot) {
  const auto dir = testutil::temp_dir("cli_diag_id");
  kf::KfSnapshot snap;
  kf::LayerFactorSnapshot l;
  l.layer_id = 0;
  l.kind = "dense";
  l.H_diag = {1, 1, 1};
  l.S_diag = {1, 1};
  snap.layers.push_back(l);
  kf::write_json(dir / "snap.json", kf::snapshot_to_json(snap));
  const std::string base = "diagnose --snapshot " + (dir / "snap.json").string() + " --sigma 0 --dft --out ";
  ASSERT_EQ(run_cli(base + (dir / "a").string()), 0);
  const auto g = read_json(dir / "a/gershgorin.json");
  for (const auto& layer : g["layers"]) {
    for (double r : layer["radii"]) EXPECT_EQ(r, 0.0);
    EXPECT_EQ(layer["diag_energy_ratio"], 1.0);
  }
  for (const auto& layer : read_json(dir / "a/snr.json")["layers"]) EXPECT_TRUE(layer["snr_db"].is_null());
  const auto dft = lines(dir / "a/dft_layer0_H.csv");
  ASSERT_EQ(dft.size(), 3u);
  // |DFT| of the n x n identity is n where k + l = 0 mod n, else 0.
  EXPECT_EQ(dft[0].substr(0, 2), "3,");
  EXPECT_EQ(dft[1].substr(dft[1].rfind(',') + 1), "3");
}

TEST(Cli, DiagnoseTrainedSnapshotIsFiniteAndDeterministic) {
  const auto dir = testutil::temp_dir("cli_diag");
  auto j = mnist_config(dir / "out");
  j["logging"] = {{"snapshot_every", 2}, {"full_factor_max", 32}, {"histogram_bins", 8},
                  {"fisher_probe", {{"inputs", 4}, {"samples", 50}}}};
  ASSERT_EQ(run_cli("train --config " + write_config(dir, j)), 0);
  const auto snap_path = dir / "out/kf_snapshot_epoch2.json";
  ASSERT_TRUE(fs::exists(snap_path));
  const auto snap = read_json(snap_path);
  EXPECT_FALSE(snap["layers"][0].contains("H_full"));  // 785 > 32
  EXPECT_TRUE(snap["layers"][1].contains("H_full"));   // 17 x 17
  EXPECT_EQ(lines(dir / "out/fisher_mae.csv").size(), 3u);
  EXPECT_GT(lines(dir / "out/fim_hist.csv").size(), 1u);

  const std::string base = "diagnose --snapshot " + snap_path.string() + " --out ";
  ASSERT_EQ(run_cli(base + (dir / "d1").string()), 0);
  ASSERT_EQ(run_cli(base + (dir / "d2").string()), 0);
  EXPECT_EQ(testutil::read_text(dir / "d1/snr.json"), testutil::read_text(dir / "d2/snr.json"));
  EXPECT_EQ(testutil::read_text(dir / "d1/gershgorin.json"),
            testutil::read_text(dir / "d2/gershgorin.json"));
  const auto snr = read_json(dir / "d1/snr.json");
  EXPECT_EQ(snr["sigma"], 1e-3);
  for (const auto& layer : snr["layers"]) EXPECT_TRUE(layer["snr_db"].is_number());
  for (const auto& layer : read_json(dir / "d1/gershgorin.json")["layers"])
    EXPECT_TRUE(layer["eigenvalues_in_discs"].get<bool>());
}

TEST(Cli, LandscapeTwoEpochsSharedStart) {
  const auto dir = testutil::temp_dir("cli_land");
  ASSERT_EQ(run_cli("landscape --config " + write_config(dir, iris_config(dir / "out"))), 0);
  const auto a = read_json(dir / "out/landscape_adafisher.json");
  const auto b = read_json(dir / "out/landscape_adam.json");
  ASSERT_EQ(a["w"].size(), 2u);
  EXPECT_EQ(a["loss"].size(), 2u);
  EXPECT_EQ(a["w"][0], b["w"][0]);
  EXPECT_EQ(a["grid"]["n"], 200);
  EXPECT_EQ(read_json(dir / "out/landscape.json"), a);
  const double x0 = a["w"][0][0], x1 = a["w"][1][0];
  EXPECT_EQ(a["grid"]["xmin"].get<double>(), std::min(x0, x1));
  EXPECT_EQ(a["grid"]["xmax"].get<double>(), std::max(x0, x1));
}

TEST(Cli, LandscapeNeedsTwoTrackedWeights) {
  const auto dir = testutil::temp_dir("cli_land_bad");
  auto j = iris_config(dir / "out");
  j["tracker"].erase(1);
  EXPECT_EQ(run_cli("landscape --config " + write_config(dir, j)), 2);
}
