#include <iostream>

#include "CLI11.hpp"
#include "kronfisher/kronfisher.hpp"

namespace kf = kronfisher;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, epochs;
  std::optional<std::string> out, optimizer;
};

kf::RunConfig load(const Overrides& o) {
  kf::RunConfig cfg = kf::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.workers) {
    if (*o.workers == 0) throw kf::SchemaError("--workers must be >= 1");
    cfg.workers = *o.workers;
  }
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.out) cfg.output_dir = *o.out;
  if (o.optimizer) {
    cfg.optimizer = kf::detail::parse_optimizer(kf::json(*o.optimizer), "--optimizer");
    cfg.optimizers.clear();
  }
  return cfg;
}

void add_run_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override the seed");
  cmd->add_option("--workers", o.workers, "Simulated data-parallel workers");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--optimizer", o.optimizer, "Override the optimizer name");
  cmd->add_option("--epochs", o.epochs, "Override the epoch count");
}

template <class F>
int guarded(F&& body) {
  try {
    body();
    return kf::exit_code::kOk;
  } catch (const kf::SchemaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kf::exit_code::kSchema;
  } catch (const kf::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kf::exit_code::kData;
  } catch (const kf::NumericError& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return kf::exit_code::kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kf::exit_code::kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kronecker-factored Fisher preconditioning toolkit"};
  app.require_subcommand(1);

  Overrides train_o, compare_o, land_o;
  auto* train = app.add_subcommand("train", "Train one model, write metrics.csv and final_model.json");
  add_run_flags(train, train_o);
  auto* compare = app.add_subcommand("compare", "Train with each listed optimizer, write comparison.csv");
  add_run_flags(compare, compare_o);
  auto* landscape = app.add_subcommand("landscape", "Export a 2-weight trajectory and loss grid");
  add_run_flags(landscape, land_o);

  std::string snapshot, diag_out = "diagnose";
  kf::DiagnoseOptions diag;
  auto* diagnose = app.add_subcommand("diagnose", "Gershgorin and SNR reports for a factor snapshot");
  diagnose->add_option("--snapshot", snapshot, "Factor snapshot JSON")->required();
  diagnose->add_option("--out", diag_out, "Output directory");
  diagnose->add_option("--sigma", diag.sigma, "Off-diagonal noise standard deviation")
      ->check(CLI::NonNegativeNumber);
  diagnose->add_option("--seed", diag.seed, "Noise seed");
  diagnose->add_option("--eig-max", diag.eig_max,
                       "Largest factor whose perturbed spectrum is computed");
  diagnose->add_flag("--dft", diag.dft, "Also write 2-D DFT magnitudes per factor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kf::exit_code::kSchema;
  }

  if (*train) return guarded([&] { kf::cmd_train(load(train_o)); });
  if (*compare) return guarded([&] {
      const auto rows = kf::cmd_compare(load(compare_o));
      for (const auto& r : rows)
        std::cout << r.optimizer << " best_test_accuracy=" << r.best_test_accuracy << '\n';
    });
  if (*landscape) return guarded([&] { kf::cmd_landscape(load(land_o)); });
  if (*diagnose) return guarded([&] { kf::cmd_diagnose(snapshot, diag_out, diag); });
  return kf::exit_code::kFailure;
}
