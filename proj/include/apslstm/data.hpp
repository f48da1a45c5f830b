#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "apslstm/graph_embed.hpp"
#include "apslstm/tensor.hpp"

namespace apslstm {

/// Hourly multi-station record. Columns follow the graph's station order.
struct HydroSeries {
  std::vector<std::int64_t> hours;  // hours since 1970-01-01T00:00
  std::vector<std::string> station_names;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major rows x cols
  std::vector<std::uint8_t> missing;
  std::size_t flow_col = 0;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  bool is_missing(std::size_t r, std::size_t c) const { return missing[r * cols + c] != 0; }
  bool any_missing() const;
};

// "YYYY-MM-DDTHH[:MM[:SS]]" (a space also separates date and time). Minutes
// and seconds must be zero. Returns false on malformed input.
bool parse_hour_timestamp(const std::string& text, std::int64_t& hours);
std::string format_hour_timestamp(std::int64_t hours);

// Rows `timestamp,<stations...>`; empty cells and `NA` are missing.
HydroSeries load_station_csv(const std::filesystem::path& path, const StationGraph& graph);
void write_station_csv(const std::filesystem::path& path, const HydroSeries& series);

// Interior gaps are filled linearly; leading/trailing gaps repeat the
// nearest observation.
HydroSeries interpolate_missing(HydroSeries series);

/// Per-column affine map to [-1, 1] from training extrema.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(std::vector<double> mins, std::vector<double> maxs);

  // Extrema over rows [row_begin, row_end).
  void fit(const HydroSeries& series, std::size_t row_begin, std::size_t row_end);
  bool fitted() const { return !mins_.empty(); }
  std::size_t columns() const { return mins_.size(); }

  // Constant columns map to 0 and invert to their value.
  double apply(std::size_t col, double value) const;
  double invert(std::size_t col, double value) const;
  HydroSeries apply(const HydroSeries& series) const;

  const std::vector<double>& mins() const { return mins_; }
  const std::vector<double>& maxs() const { return maxs_; }

 private:
  void require_fitted(std::size_t col) const;
  std::vector<double> mins_, maxs_;
};

struct WindowSample {
  Tensor input;                // [T,N]
  std::vector<double> target;  // H flow values following the input
  std::size_t origin_index = 0;  // row of the last input hour
};

std::vector<WindowSample> window_samples(const HydroSeries& series, std::size_t input_len,
                                         std::size_t horizon, std::size_t flow_col);

struct SplitRatios {
  double train = 0.80;
  double val = 0.05;
  double test = 0.15;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

// floor for train and val, remainder to test. DataError if any part is empty.
SplitCounts split_counts(std::size_t n_samples, const SplitRatios& ratios);

struct DataSplit {
  std::vector<WindowSample> train, val, test;
};

DataSplit chronological_split(std::vector<WindowSample> samples, const SplitRatios& ratios);

// Raw rows touched by the training samples (inputs and targets); the scaler
// is fitted on exactly these.
std::size_t training_row_end(std::size_t rows, std::size_t input_len, std::size_t horizon,
                             const SplitRatios& ratios);

struct SyntheticSpec {
  std::size_t n_stations = 8;  // N-1 rain stations plus one flow station (last)
  std::size_t rows = 2000;
  std::vector<std::size_t> periods{4, 6};
  double noise = 0.05;
  std::size_t lag = 2;
  std::uint64_t seed = 2;
  double flow_periodic_amp = 1.0;  // flow's own periodic component
  double baseflow = 5.0;
};

// Rain = nonnegative sums of phase-shifted sinusoids plus Gaussian noise; flow
// = baseflow + lagged weighted rain + its own periodic term. The adjacency is a
// star linking each rain station to the flow station with its mixing weight.
std::pair<HydroSeries, StationGraph> generate_synthetic(const SyntheticSpec& spec);

}  // namespace apslstm
