#include "apslstm/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "apslstm/errors.hpp"

namespace apslstm {

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.numel() != target.numel())
    throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  Tensor diff = sub(reshape(pred, {pred.numel()}), reshape(target, {target.numel()}));
  return mean_all(mul(diff, diff));
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    p.impl()->ensure_grad();  // untouched parameters step with a zero gradient
    if (m_[k].size() != p.numel())
      throw ContractError("Adam: moment buffers do not match parameter " + shape_str(p.shape()));
    auto data = p.mutable_data();
    const auto& g = p.impl()->grad;
    for (std::size_t i = 0; i < data.size(); ++i) {
      m_[k][i] = b1 * m_[k][i] + (1.0 - b1) * g[i];
      v_[k][i] = b2 * v_[k][i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m_[k][i] / c1;
      const double vhat = v_[k][i] / c2;
      data[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

namespace {

Tensor target_tensor(const WindowSample& s) { return Tensor({s.target.size()}, s.target); }

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + " became non-finite");
}

}  // namespace

std::vector<std::vector<double>> predict(const ModelState& model, const std::vector<WindowSample>& samples) {
  NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const Tensor y = model_forward(s.input, model);
    out.emplace_back(y.data().begin(), y.data().end());
  }
  return out;
}

double dataset_mse(const ModelState& model, const std::vector<WindowSample>& samples) {
  if (samples.empty()) throw ContractError("dataset_mse over zero samples");
  const auto preds = predict(model, samples);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double se = 0.0;
    for (std::size_t h = 0; h < preds[i].size(); ++h) {
      const double d = preds[i][h] - samples[i].target[h];
      se += d * d;
    }
    total += se / static_cast<double>(preds[i].size());
  }
  return total / static_cast<double>(samples.size());
}

TrainResult train(const ModelState& initial, const std::vector<WindowSample>& train_set,
                  const std::vector<WindowSample>& val_set, const TrainOptions& options,
                  const EpochCallback& on_epoch) {
  if (train_set.empty() || val_set.empty()) throw ConfigError("training needs nonempty train and validation sets");
  if (options.batch_size == 0) throw ConfigError("batch_size must be positive");

  TrainResult result;
  result.best = initial.clone();
  ModelState model = initial.clone();
  model.zero_grads();
  AdamOptimizer opt(model.parameters(), AdamOptimizer::Options{.lr = options.lr});
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    // Fisher-Yates with a plain modulo draw so the order is library-independent.
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng() % (i + 1)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      double batch_loss = 0.0;
      // Per-sample graphs: each window picks its own periods, so shapes differ.
      for (std::size_t b = begin; b < end; ++b) {
        const auto& sample = train_set[order[b]];
        Tensor loss = scale(mse_loss(model_forward(sample.input, model), target_tensor(sample)), inv_batch);
        backward(loss);
        current_graph().clear();
        batch_loss += loss.item();
      }
      check_finite(batch_loss, "training loss");
      opt.step();
      opt.zero_grad();
      loss_sum += batch_loss;
      ++batches;
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), dataset_mse(model, val_set)};
    check_finite(rec.val_mse, "validation loss");
    result.history.push_back(rec);
    if (rec.val_mse < best_val) {
      best_val = rec.val_mse;
      result.best = model.clone();
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  result.last = model.clone();
  return result;
}

MetricsReport compute_metrics(const std::vector<std::vector<double>>& predicted,
                              const std::vector<std::vector<double>>& truth) {
  if (predicted.empty() || predicted.size() != truth.size())
    throw ContractError("compute_metrics needs matching nonempty prediction and truth sets");
  const std::size_t H = predicted.front().size();
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i].size() != H || truth[i].size() != H)
      throw ShapeError("compute_metrics: sample " + std::to_string(i) + " horizon length mismatch");

  MetricsReport report;
  const double n = static_cast<double>(predicted.size());
  double mape_sum = 0.0;
  std::size_t mape_defined = 0;
  for (std::size_t h = 0; h < H; ++h) {
    HorizonMetrics m;
    double se = 0.0, ae = 0.0, ape = 0.0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const double err = predicted[i][h] - truth[i][h];
      se += err * err;
      ae += std::abs(err);
      if (truth[i][h] < kMapeMaskBelow) {
        ++m.masked_count;
      } else {
        ape += std::abs(err / truth[i][h]);
        ++kept;
      }
    }
    m.rmse = std::sqrt(se / n);
    m.mae = ae / n;
    if (kept > 0) m.mape = ape / static_cast<double>(kept);
    report.average.rmse += m.rmse / static_cast<double>(H);
    report.average.mae += m.mae / static_cast<double>(H);
    report.average.masked_count += m.masked_count;
    if (m.mape) {
      mape_sum += *m.mape;
      ++mape_defined;
    }
    report.horizons.push_back(m);
  }
  if (mape_defined > 0) report.average.mape = mape_sum / static_cast<double>(mape_defined);
  return report;
}

Evaluation evaluate(const ModelState& model, const std::vector<WindowSample>& samples, const MinMaxScaler& scaler) {
  if (samples.empty()) throw ContractError("evaluate over zero samples");
  const std::size_t flow = model.config.flow_station;
  Evaluation ev;
  for (auto& row : predict(model, samples)) {
    for (auto& v : row) v = scaler.invert(flow, v);
    ev.predicted.push_back(std::move(row));
  }
  for (const auto& s : samples) {
    std::vector<double> t;
    for (double v : s.target) t.push_back(scaler.invert(flow, v));
    ev.truth.push_back(std::move(t));
  }
  ev.metrics = compute_metrics(ev.predicted, ev.truth);
  return ev;
}

nlohmann::ordered_json metrics_to_json(const MetricsReport& report) {
  auto cell = [](const HorizonMetrics& m) {
    nlohmann::ordered_json j;
    j["rmse"] = m.rmse;
    j["mae"] = m.mae;
    j["mape"] = m.mape ? nlohmann::ordered_json(*m.mape) : nlohmann::ordered_json(nullptr);
    j["masked_count"] = m.masked_count;
    return j;
  };
  nlohmann::ordered_json j;
  for (std::size_t h = 0; h < report.horizons.size(); ++h) j["horizon_" + std::to_string(h + 1)] = cell(report.horizons[h]);
  j["average"] = cell(report.average);
  return j;
}

}  // namespace apslstm
