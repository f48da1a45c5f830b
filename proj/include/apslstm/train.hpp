#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "apslstm/data.hpp"
#include "apslstm/model.hpp"
#include "apslstm/tensor.hpp"

namespace apslstm {

// Mean of squared differences.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Adam with bias correction over a fixed parameter list.
class AdamOptimizer {
 public:
  struct Options {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit AdamOptimizer(std::vector<Tensor> params) : AdamOptimizer(std::move(params), Options{}) {}
  AdamOptimizer(std::vector<Tensor> params, Options options);

  // Applies one update from the parameters' accumulated grads.
  void step();
  void zero_grad();
  std::uint64_t steps() const { return step_; }
  const Options& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  Options options_;
  std::uint64_t step_ = 0;
};

struct TrainOptions {
  std::size_t epochs = 60;
  std::size_t batch_size = 200;
  double lr = 0.01;
  std::uint64_t seed = 2;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;  // mean batch loss over the epoch
  double val_mse = 0.0;
};

struct TrainResult {
  ModelState best;  // lowest validation MSE; the initial model when epochs == 0
  ModelState last;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const ModelState& initial, const std::vector<WindowSample>& train_set,
                  const std::vector<WindowSample>& val_set, const TrainOptions& options,
                  const EpochCallback& on_epoch = {});

// Normalized forecasts, one H-vector per sample. Runs without recording a graph.
std::vector<std::vector<double>> predict(const ModelState& model, const std::vector<WindowSample>& samples);
// Mean per-sample MSE in normalized units.
double dataset_mse(const ModelState& model, const std::vector<WindowSample>& samples);

struct HorizonMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> mape;  // ratio; empty when every target was masked
  std::size_t masked_count = 0;
};

struct MetricsReport {
  std::vector<HorizonMetrics> horizons;
  HorizonMetrics average;  // unweighted mean over horizons
};

inline constexpr double kMapeMaskBelow = 1.0;

// Inputs in original flow units, one H-vector per sample.
MetricsReport compute_metrics(const std::vector<std::vector<double>>& predicted,
                              const std::vector<std::vector<double>>& truth);

struct Evaluation {
  MetricsReport metrics;
  std::vector<std::vector<double>> predicted;  // original units
  std::vector<std::vector<double>> truth;
};

Evaluation evaluate(const ModelState& model, const std::vector<WindowSample>& samples, const MinMaxScaler& scaler);

nlohmann::ordered_json metrics_to_json(const MetricsReport& report);

}  // namespace apslstm
