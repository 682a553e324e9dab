#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <ostream>
#include <sstream>

#include "kronfisher/config.hpp"
#include "kronfisher/data.hpp"
#include "kronfisher/diagnostics.hpp"
#include "kronfisher/dist.hpp"
#include "kronfisher/io.hpp"
#include "kronfisher/log.hpp"

namespace kronfisher {

struct DataBundle {
  Dataset train;
  std::optional<Dataset> test;
};

namespace detail {

inline void project_pca(Dataset& ds, const Pca2Result& pca) {
  const std::size_t n = ds.features.rows(), d = ds.features.cols();
  Tensor out({n, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += (ds.features(i, j) - pca.mean[j]) * pca.components(c, j);
      out(i, c) = acc;
    }
  ds.features = std::move(out);
}

}  // namespace detail

inline DataBundle load_data(const RunConfig& cfg) {
  const auto& spec = cfg.dataset;
  DataBundle b;
  if (spec.kind == "mnist") {
    b.train = load_mnist_idx(cfg.resolve(spec.train_images), cfg.resolve(spec.train_labels),
                             spec.limit);
    if (!spec.test_images.empty())
      b.test = load_mnist_idx(cfg.resolve(spec.test_images), cfg.resolve(spec.test_labels),
                              spec.test_limit);
  } else {
    b.train = load_csv(cfg.resolve(spec.path), spec.label_column);
  }
  if (spec.pca_components == 2) {
    if (b.train.features.rank() != 2) throw ValidationError("pca needs tabular features");
    const auto pca = pca2(b.train.features);
    detail::project_pca(b.train, pca);
    if (b.test) detail::project_pca(*b.test, pca);
  }
  return b;
}

inline std::unique_ptr<Optimizer> make_optimizer(const OptimizerSpec& s) {
  if (s.name == "adafisher" || s.name == "adafisherw") {
    AdaFisherHyper h{s.lr, s.beta, s.gamma, s.lambda, s.kappa};
    return std::make_unique<AdaFisher>(
        h, s.name == "adafisherw" ? AdaFisherVariant::W : AdaFisherVariant::Plain);
  }
  if (s.name == "adam" || s.name == "adamw") {
    AdamState st;
    st.beta1 = s.beta1;
    st.beta2 = s.beta2;
    st.eps = s.eps;
    st.weight_decay = s.weight_decay;
    return std::make_unique<Adam>(st, s.name == "adamw");
  }
  if (s.name == "sgd") return std::make_unique<SgdMomentum>(s.momentum);
  throw SchemaError("unknown optimizer '" + s.name + "'");
}

inline Schedule make_schedule(const ScheduleSpec& s, std::size_t epochs) {
  if (s.kind == "step") return StepSchedule{s.period, s.factor};
  if (s.kind == "cosine")
    return CosineSchedule{s.t_max.value_or(std::max<std::size_t>(epochs, 1)), s.alpha_min};
  return ConstantSchedule{};
}

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Eval-mode loss and accuracy over a whole dataset, in fixed-size chunks.
inline EvalStats evaluate(nn::Network& net, const Dataset& ds, std::size_t chunk = 500) {
  EvalStats out;
  std::size_t correct = 0;
  for (const auto& idx : batch_iter(ds.size(), std::min(chunk, ds.size()), 0, false)) {
    std::vector<int> y;
    for (std::size_t i : idx) y.push_back(ds.labels[i]);
    const auto r = nn::nll_softmax_loss(net.forward(gather_rows(ds.features, idx), false), y);
    out.loss += r.loss * static_cast<double>(idx.size());
    correct += r.correct;
  }
  out.loss /= static_cast<double>(ds.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;  // global steps completed at the end of the epoch
  double loss = 0.0;       // mean training loss over the epoch's batches
  double accuracy = 0.0;
  std::optional<double> test_loss, test_accuracy;
  double lr = 0.0;
};

// Where a training run writes its artifacts; null streams are skipped.
struct TrainSinks {
  std::ostream* metrics = nullptr;
  std::ostream* timing = nullptr;
  std::ostream* fim_hist = nullptr;
  std::ostream* fisher_mae = nullptr;
  std::filesystem::path snapshot_dir;  // empty disables snapshot files
};

struct TrainResult {
  nn::Network net;
  std::unique_ptr<Optimizer> optimizer;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_ms;
  std::vector<std::array<double, 2>> trajectory;  // tracked weights at each epoch start
  std::vector<double> trajectory_loss;
  std::vector<double> fisher_mae;
  std::vector<KfSnapshot> snapshots;

  double best_test_accuracy() const {
    double best = 0.0;
    for (const auto& e : epochs) best = std::max(best, e.test_accuracy.value_or(e.accuracy));
    return best;
  }
  double mean_step_ms() const {
    if (step_ms.empty()) return 0.0;
    double s = 0.0;
    for (double v : step_ms) s += v;
    return s / static_cast<double>(step_ms.size());
  }
};

inline constexpr const char* kMetricsHeader =
    "step,epoch,split,loss,accuracy,test_loss,test_accuracy,lr,optimizer,seed";

inline std::string metrics_row(const EpochRecord& e, const std::string& optimizer,
                               std::uint64_t seed) {
  std::ostringstream os;
  os << e.step << ',' << e.epoch << ",train," << fmt_double(e.loss) << ','
     << fmt_double(e.accuracy) << ',' << (e.test_loss ? fmt_double(*e.test_loss) : "") << ','
     << (e.test_accuracy ? fmt_double(*e.test_accuracy) : "") << ',' << fmt_double(e.lr) << ','
     << optimizer << ',' << seed;
  return os.str();
}

// Diagonal factors of every parametric layer plus, when small enough, the
// full factors measured on one diagnostic batch (the first `batch` samples in
// storage order). AdaFisher runs report their EMA'd diagonals; other
// optimizers report the diagnostic batch's raw diagonals.
inline KfSnapshot take_snapshot(nn::Network& net, const Optimizer* opt, const Dataset& ds,
                                std::size_t batch, std::size_t full_max, std::size_t epoch,
                                std::uint64_t step) {
  std::vector<std::size_t> idx(std::min(batch, ds.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<int> y;
  for (std::size_t i : idx) y.push_back(ds.labels[i]);
  net.backward(nn::nll_softmax_loss(net.forward(gather_rows(ds.features, idx), false), y).dlogits);
  const auto raw = KroneckerCurvature::raw_factors(net);
  const auto* af = dynamic_cast<const AdaFisher*>(opt);

  KfSnapshot snap{epoch, step, {}};
  for (std::size_t l = 0; l < net.size(); ++l) {
    if (!raw[l]) continue;
    LayerFactorSnapshot ls;
    ls.layer_id = l;
    ls.kind = nn::kind_name(net.layer(l).kind());
    ls.step = step;
    const auto& states = af ? af->curvature().states() : std::vector<std::optional<KFState>>{};
    if (l < states.size() && states[l]) {
      ls.H_diag = states[l]->H;
      ls.S_diag = states[l]->S;
      ls.step = states[l]->step;
    } else {
      ls.H_diag = raw[l]->H;
      ls.S_diag = raw[l]->S;
    }
    if (!is_norm(net.layer(l).kind())) {
      const auto& cap = net.layer(l).capture();
      if (cap.h_bar.rows() <= full_max && cap.s.rows() <= full_max) {
        auto full = full_kf_factors(cap);
        ls.H_full = std::move(full.H);
        ls.S_full = std::move(full.S);
      }
    }
    snap.layers.push_back(std::move(ls));
  }
  return snap;
}

namespace detail {

inline double& tracked_value(nn::Network& net, const TrackedWeight& w) {
  if (w.layer >= net.size()) throw SchemaError("tracker: layer " + std::to_string(w.layer) + " out of range");
  auto& params = net.layer(w.layer).parameters();
  if (w.param >= params.size())
    throw SchemaError("tracker: layer " + std::to_string(w.layer) + " has no parameter " +
                      std::to_string(w.param));
  if (w.index >= params[w.param].value.size())
    throw SchemaError("tracker: index " + std::to_string(w.index) + " out of range");
  return params[w.param].value[w.index];
}

inline void write_histograms(std::ostream& os, std::uint64_t step, nn::Network& net,
                             const Optimizer& opt, std::size_t bins) {
  std::vector<std::optional<Histogram>> hists;
  if (const auto* af = dynamic_cast<const AdaFisher*>(&opt)) {
    hists = fim_histogram(af->last_efims(), bins);
  } else if (const auto* adam = dynamic_cast<const Adam*>(&opt)) {
    // Adam's bias-corrected second moment, binned over [0, max].
    const auto v = adam->v_hat();
    if (v.empty()) return;
    const auto refs = net.parameters();
    std::vector<std::vector<double>> per_layer(net.size());
    for (std::size_t i = 0; i < refs.size(); ++i)
      per_layer[refs[i].layer].insert(per_layer[refs[i].layer].end(), v[i].data().begin(),
                                      v[i].data().end());
    hists.resize(net.size());
    for (std::size_t l = 0; l < net.size(); ++l)
      if (!per_layer[l].empty())
        hists[l] = histogram(per_layer[l], 0.0,
                             *std::max_element(per_layer[l].begin(), per_layer[l].end()), bins);
  }
  for (std::size_t l = 0; l < hists.size(); ++l) {
    if (!hists[l]) continue;
    for (std::size_t b = 0; b < hists[l]->counts.size(); ++b)
      os << step << ',' << l << ',' << fmt_double(hists[l]->bin_lo(b)) << ','
         << fmt_double(hists[l]->bin_hi(b)) << ',' << hists[l]->counts[b] << '\n';
  }
}

}  // namespace detail

// Seed used for data order; kept separate from the initialization stream.
inline std::uint64_t data_order_seed(std::uint64_t seed) {
  return SeededRng(seed).fork(0xda7a).next_u64();
}

// Trains a freshly initialized network. Initialization depends only on
// (layers, seed), so runs with different optimizers start identically.
inline TrainResult train(const RunConfig& cfg, const OptimizerSpec& spec, const DataBundle& data,
                         const TrainSinks& sinks = {}) {
  if (!cfg.tracker.empty() && cfg.tracker.size() != 2)
    throw SchemaError("tracker must name exactly 2 weights, got " + std::to_string(cfg.tracker.size()));
  const Dataset& ds = data.train;
  if (cfg.batch_size > ds.size())
    throw SchemaError("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                      std::to_string(ds.size()));

  TrainResult res;
  SeededRng init_rng(cfg.seed);
  res.net = nn::Network::build(cfg.layers, init_rng);
  {
    // Shape check of the whole stack on one sample.
    const std::size_t first[] = {0};
    try {
      res.net.forward(gather_rows(ds.features, first), false);
    } catch (const DimensionError& e) {
      throw SchemaError(std::string("model does not fit the data: ") + e.what());
    }
  }
  res.optimizer = make_optimizer(spec);
  auto* adafisher = dynamic_cast<AdaFisher*>(res.optimizer.get());

  std::optional<DistributedTrainer> dist;
  if (cfg.workers > 1) {
    if (!adafisher) throw SchemaError("workers > 1 requires an adafisher optimizer");
    const std::size_t tail = ds.size() % cfg.batch_size;
    if (cfg.batch_size % cfg.workers != 0 || tail % cfg.workers != 0)
      throw SchemaError("every batch must split evenly across " + std::to_string(cfg.workers) +
                        " workers");
    dist.emplace(res.net, DistOptions{cfg.workers, true, false});
  }

  const Schedule schedule = make_schedule(cfg.schedule, cfg.epochs);
  const std::uint64_t order_seed = data_order_seed(cfg.seed);
  if (sinks.metrics) *sinks.metrics << kMetricsHeader << '\n';
  if (sinks.timing) *sinks.timing << "step,epoch,step_time_ms\n";
  if (sinks.fim_hist) *sinks.fim_hist << "step,layer,bin_lo,bin_hi,count\n";
  if (sinks.fisher_mae) *sinks.fisher_mae << "epoch,mae\n";

  const Dataset& probe_src = data.test ? *data.test : ds;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule_lr(schedule, epoch, spec.lr);
    if (!cfg.tracker.empty()) {
      res.trajectory.push_back({detail::tracked_value(res.net, cfg.tracker[0]),
                                detail::tracked_value(res.net, cfg.tracker[1])});
      res.trajectory_loss.push_back(evaluate(res.net, ds).loss);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    std::size_t correct = 0;
    for (const auto& idx : batch_iter(ds.size(), cfg.batch_size, order_seed, true, epoch)) {
      const auto t0 = std::chrono::steady_clock::now();
      double loss = 0.0;
      if (dist) {
        const auto st = dist->step(*adafisher, ds.features, ds.labels, idx, lr);
        loss = st.loss;
        correct += st.correct;
      } else {
        std::vector<int> y;
        for (std::size_t i : idx) y.push_back(ds.labels[i]);
        const auto r = nn::nll_softmax_loss(res.net.forward(gather_rows(ds.features, idx), true), y);
        res.net.backward(r.dlogits);
        res.optimizer->step(res.net, lr);
        loss = r.loss;
        correct += r.correct;
      }
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                           ", step " + std::to_string(step + 1));
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      res.step_ms.push_back(ms);
      rec.loss += loss * static_cast<double>(idx.size());
      ++step;
      if (sinks.timing) *sinks.timing << step << ',' << epoch << ',' << fmt_double(ms) << '\n';
    }
    rec.step = step;
    rec.loss /= static_cast<double>(ds.size());
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    if (data.test) {
      const auto ev = evaluate(res.net, *data.test);
      rec.test_loss = ev.loss;
      rec.test_accuracy = ev.accuracy;
    }

    if (sinks.fim_hist && cfg.logging.histogram_bins >= 2)
      detail::write_histograms(*sinks.fim_hist, step, res.net, *res.optimizer,
                               cfg.logging.histogram_bins);
    if (adafisher && cfg.logging.fisher_probe.inputs > 0) {
      std::vector<std::size_t> idx(std::min(cfg.logging.fisher_probe.inputs, probe_src.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      SeededRng rng = SeededRng(cfg.seed).fork(0xf15e0000 + epoch);
      const auto truth = true_fisher_diag_mc(res.net, gather_rows(probe_src.features, idx),
                                             cfg.logging.fisher_probe.samples, rng);
      const double mae = fisher_mae(truth, adafisher->curvature().fisher_diagonal(res.net));
      res.fisher_mae.push_back(mae);
      if (sinks.fisher_mae) *sinks.fisher_mae << epoch << ',' << fmt_double(mae) << '\n';
    }
    if (cfg.logging.snapshot_every > 0 && (epoch + 1) % cfg.logging.snapshot_every == 0) {
      auto snap = take_snapshot(res.net, res.optimizer.get(), ds, cfg.batch_size,
                                cfg.logging.full_factor_max, epoch, step);
      if (!sinks.snapshot_dir.empty())
        write_json(sinks.snapshot_dir / ("kf_snapshot_epoch" + std::to_string(epoch + 1) + ".json"),
                   snapshot_to_json(snap));
      res.snapshots.push_back(std::move(snap));
    }

    if (sinks.metrics) *sinks.metrics << metrics_row(rec, spec.name, cfg.seed) << '\n';
    log::info(spec.name + " epoch " + std::to_string(epoch + 1) + "/" +
              std::to_string(cfg.epochs) + " loss " + fmt_double(rec.loss) +
              (rec.test_accuracy ? " test_acc " + fmt_double(*rec.test_accuracy) : ""));
    res.epochs.push_back(rec);
  }
  return res;
}

}  // namespace kronfisher
