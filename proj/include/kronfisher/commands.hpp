#pragma once

#include <filesystem>
#include <fstream>

#include "kronfisher/trainer.hpp"

namespace kronfisher {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kSchema = 2;
inline constexpr int kData = 3;
inline constexpr int kDiverged = 4;
}  // namespace exit_code

// Any loader failure is a dataset error, whatever its category.
inline DataBundle load_data_or_throw(const RunConfig& cfg) {
  try {
    return load_data(cfg);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("dataset: ") + e.what());
  }
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace detail

// metrics.csv, timing.csv, final_model.json, and optional fim_hist.csv,
// fisher_mae.csv and kf_snapshot_epoch<N>.json files.
inline TrainResult cmd_train(const RunConfig& cfg) {
  const DataBundle data = load_data_or_throw(cfg);
  const auto dir = detail::prepare_dir(cfg.output_dir);
  auto metrics = detail::open_out(dir / "metrics.csv");
  auto timing = detail::open_out(dir / "timing.csv");
  std::ofstream hist, mae;
  TrainSinks sinks{&metrics, &timing, nullptr, nullptr, {}};
  if (cfg.logging.histogram_bins >= 2) {
    hist = detail::open_out(dir / "fim_hist.csv");
    sinks.fim_hist = &hist;
  }
  if (cfg.logging.fisher_probe.inputs > 0) {
    mae = detail::open_out(dir / "fisher_mae.csv");
    sinks.fisher_mae = &mae;
  }
  if (cfg.logging.snapshot_every > 0) sinks.snapshot_dir = dir;
  auto res = train(cfg, cfg.optimizer, data, sinks);
  write_json(dir / "final_model.json", model_to_json(res.net));
  return res;
}

struct CompareRow {
  std::string optimizer;
  double best_test_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  double final_loss = 0.0;
  double mean_step_ms = 0.0;
};

// comparison.csv (deterministic) and comparison_timing.csv. Each sub-run also
// writes its own metrics.csv under <out>/<index>_<name>/. A failing sub-run is
// recorded and the remaining ones still run; the first failure is rethrown.
inline std::vector<CompareRow> cmd_compare(const RunConfig& cfg) {
  if (cfg.optimizers.size() < 2) throw SchemaError("compare needs at least 2 optimizers");
  const DataBundle data = load_data_or_throw(cfg);
  const auto dir = detail::prepare_dir(cfg.output_dir);
  auto table = detail::open_out(dir / "comparison.csv");
  auto timing = detail::open_out(dir / "comparison_timing.csv");
  table << "optimizer,best_test_accuracy,final_test_accuracy,final_loss,status\n";
  timing << "optimizer,mean_step_time_ms\n";
  std::vector<CompareRow> rows;
  std::exception_ptr first_error;
  for (std::size_t i = 0; i < cfg.optimizers.size(); ++i) {
    const auto& spec = cfg.optimizers[i];
    const auto sub = detail::prepare_dir((dir / (std::to_string(i) + "_" + spec.name)).string());
    auto metrics = detail::open_out(sub / "metrics.csv");
    CompareRow row{spec.name};
    try {
      TrainSinks sinks;
      sinks.metrics = &metrics;
      const auto res = train(cfg, spec, data, sinks);
      row.best_test_accuracy = res.best_test_accuracy();
      if (!res.epochs.empty()) {
        const auto& last = res.epochs.back();
        row.final_test_accuracy = last.test_accuracy.value_or(last.accuracy);
        row.final_loss = last.loss;
      }
      row.mean_step_ms = res.mean_step_ms();
      table << row.optimizer << ',' << fmt_double(row.best_test_accuracy) << ','
            << fmt_double(row.final_test_accuracy) << ',' << fmt_double(row.final_loss)
            << ",ok\n";
      timing << row.optimizer << ',' << fmt_double(row.mean_step_ms) << '\n';
    } catch (const Error& e) {
      log::warn("compare: " + spec.name + " failed: " + e.what());
      table << row.optimizer << ",,,,failed\n";
      if (!first_error) first_error = std::current_exception();
    }
    rows.push_back(row);
  }
  table.flush();
  timing.flush();
  if (first_error) std::rethrow_exception(first_error);
  return rows;
}

struct DiagnoseOptions {
  double sigma = 1e-3;
  std::uint64_t seed = 0;
  bool dft = false;
  std::size_t eig_max = 256;  // larger factors skip the perturbed eigendecomposition
};

// gershgorin.json and snr.json for every factor in the snapshot (full matrix
// when present, otherwise the diagonal), plus dft_layer<id>_<H|S>.csv with
// `dft`. Eigenvalue shifts under the perturbation are reported only for
// factors of size <= eig_max; larger ones get null.
inline json cmd_diagnose(const std::string& snapshot_path, const std::string& out_dir,
                         const DiagnoseOptions& opt) {
  const KfSnapshot snap = load_snapshot(snapshot_path);
  const auto dir = detail::prepare_dir(out_dir);
  json g_layers = json::array(), s_layers = json::array();
  for (const auto& layer : snap.layers) {
    for (int f = 0; f < 2; ++f) {
      const char* name = f == 0 ? "H" : "S";
      const auto& full = f == 0 ? layer.H_full : layer.S_full;
      const auto& diag = f == 0 ? layer.H_diag : layer.S_diag;
      const Tensor m = full ? *full : Tensor::diagonal(diag);
      if (m.rows() != m.cols()) throw FormatError("snapshot: factor is not square");
      GershgorinReport rep;
      try {
        rep = gershgorin_report(m);
      } catch (const ValidationError& e) {
        throw FormatError(std::string("snapshot: ") + e.what());
      }
      SeededRng rng = SeededRng(opt.seed).fork(layer.layer_id * 2 + f);
      const Tensor perturbed = perturb_offdiag(m, opt.sigma, rng);
      const double snr = snr_offdiag(m, perturbed);
      rep.snr_db = snr;
      double mean = 0.0;
      for (double v : rep.eigenvalues) mean += v;
      mean /= static_cast<double>(rep.eigenvalues.size());
      double shift_hi = 0.0, shift_lo = 0.0;
      std::size_t n_hi = 0, n_lo = 0;
      if (m.rows() <= opt.eig_max) {
        const auto shifted = sym_eig(perturbed).values;
        for (std::size_t i = 0; i < shifted.size(); ++i) {
          const double d = std::abs(shifted[i] - rep.eigenvalues[i]);
          if (rep.eigenvalues[i] > mean) shift_hi += d, ++n_hi;
          else shift_lo += d, ++n_lo;
        }
      }
      const double slack = 1e-9 * std::max(1.0, frobenius_norm(m));
      g_layers.push_back({{"layer_id", layer.layer_id},
                          {"kind", layer.kind},
                          {"factor", name},
                          {"full", full.has_value()},
                          {"centers", rep.centers},
                          {"radii", rep.radii},
                          {"eigenvalues", rep.eigenvalues},
                          {"kaiser_count", rep.kaiser_count},
                          {"diag_energy_ratio", rep.diag_energy_ratio},
                          {"eigenvalues_in_discs", eigenvalues_in_discs(rep, slack)}});
      s_layers.push_back(
          {{"layer_id", layer.layer_id},
           {"factor", name},
           {"snr_db", finite_or_null(snr)},
           {"mean_shift_kaiser", n_hi ? finite_or_null(shift_hi / n_hi) : json(nullptr)},
           {"mean_shift_rest", n_lo ? finite_or_null(shift_lo / n_lo) : json(nullptr)}});
      if (opt.dft) {
        const Tensor spec = dft2_magnitude(m);
        auto out = detail::open_out(dir / ("dft_layer" + std::to_string(layer.layer_id) + "_" +
                                           name + ".csv"));
        for (std::size_t r = 0; r < spec.rows(); ++r)
          for (std::size_t c = 0; c < spec.cols(); ++c)
            out << fmt_double(spec(r, c)) << (c + 1 < spec.cols() ? ',' : '\n');
      }
    }
  }
  const json gershgorin = {{"snapshot_step", snap.step}, {"layers", g_layers}};
  const json snr = {{"sigma", opt.sigma}, {"seed", opt.seed}, {"layers", s_layers}};
  write_json(dir / "gershgorin.json", gershgorin);
  write_json(dir / "snr.json", snr);
  return {{"gershgorin", gershgorin}, {"snr", snr}};
}

// landscape_<optimizer>.json per optimizer and landscape.json (the first).
inline std::vector<LandscapeExport> cmd_landscape(const RunConfig& cfg) {
  if (cfg.tracker.size() != 2)
    throw SchemaError("landscape needs a tracker with exactly 2 weights, got " +
                      std::to_string(cfg.tracker.size()));
  const DataBundle data = load_data_or_throw(cfg);
  const auto dir = detail::prepare_dir(cfg.output_dir);
  const auto specs = cfg.optimizers.empty() ? std::vector<OptimizerSpec>{cfg.optimizer} : cfg.optimizers;
  std::vector<LandscapeExport> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto res = train(cfg, specs[i], data);
    auto ex = landscape_export(std::move(res.trajectory), std::move(res.trajectory_loss));
    const json j = landscape_to_json(ex, specs[i].name);
    write_json(dir / ("landscape_" + specs[i].name + ".json"), j);
    if (i == 0) write_json(dir / "landscape.json", j);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace kronfisher
