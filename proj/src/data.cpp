#include "apslstm/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "apslstm/csv.hpp"
#include "apslstm/errors.hpp"

namespace apslstm {

bool HydroSeries::any_missing() const {
  return std::any_of(missing.begin(), missing.end(), [](std::uint8_t m) { return m != 0; });
}

bool parse_hour_timestamp(const std::string& text, std::int64_t& hours) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int n = std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d%n", &y, &mo, &d, &sep, &h, &consumed);
  if (n != 5 || (sep != 'T' && sep != ' ')) return false;
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!rest.empty()) {
    int more = 0;
    if (std::sscanf(rest.c_str(), ":%2d%n", &mi, &more) != 1) return false;
    rest = rest.substr(static_cast<std::size_t>(more));
    if (!rest.empty()) {
      if (std::sscanf(rest.c_str(), ":%2d%n", &s, &more) != 1) return false;
      rest = rest.substr(static_cast<std::size_t>(more));
    }
    if (!rest.empty() && rest != "Z") return false;
  }
  if (mi != 0 || s != 0 || h < 0 || h > 23) return false;
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return false;
  hours = static_cast<std::int64_t>(sys_days{ymd}.time_since_epoch().count()) * 24 + h;
  return true;
}

std::string format_hour_timestamp(std::int64_t hours) {
  using namespace std::chrono;
  const auto day_count = static_cast<int>(hours >= 0 ? hours / 24 : (hours - 23) / 24);
  const int hour = static_cast<int>(hours - static_cast<std::int64_t>(day_count) * 24);
  const year_month_day ymd{sys_days{days{day_count}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hour);
  return buf;
}

HydroSeries load_station_csv(const std::filesystem::path& path, const StationGraph& graph) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset " + path.string() + " is empty");
  const auto header = csv::split_line(line);
  if (header.empty() || header[0] != "timestamp")
    throw DataError("dataset header must start with 'timestamp'");
  const std::size_t N = graph.n_stations;
  if (header.size() - 1 != N)
    throw DataError("dataset has " + std::to_string(header.size() - 1) + " station columns, graph has " +
                    std::to_string(N));
  // file column -> graph column
  std::vector<std::size_t> target(header.size() - 1);
  std::vector<bool> seen(N, false);
  for (std::size_t i = 1; i < header.size(); ++i) {
    auto it = std::find(graph.station_names.begin(), graph.station_names.end(), header[i]);
    if (it == graph.station_names.end())
      throw DataError("dataset column '" + header[i] + "' is not a station of the graph");
    const auto g = static_cast<std::size_t>(it - graph.station_names.begin());
    if (seen[g]) throw DataError("dataset column '" + header[i] + "' appears twice");
    seen[g] = true;
    target[i - 1] = g;
  }

  HydroSeries s;
  s.station_names = graph.station_names;
  s.cols = N;
  s.flow_col = graph.flow_station;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    std::int64_t hour;
    if (!parse_hour_timestamp(fields[0], hour))
      throw DataError("row " + std::to_string(line_no) + ": bad hourly timestamp '" + fields[0] + "'");
    if (!s.hours.empty()) {
      if (hour <= s.hours.back())
        throw DataError("row " + std::to_string(line_no) + ": timestamps are not increasing");
      if (hour != s.hours.back() + 1)
        throw DataError("row " + std::to_string(line_no) + ": gap of " + std::to_string(hour - s.hours.back()) +
                        " hours (series must be hourly)");
    }
    s.hours.push_back(hour);
    const std::size_t base = s.values.size();
    s.values.resize(base + N, 0.0);
    s.missing.resize(base + N, 0);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const std::size_t c = target[i - 1];
      if (fields[i].empty() || fields[i] == "NA") {
        s.missing[base + c] = 1;
        continue;
      }
      double v;
      if (!csv::parse_double(fields[i], v) || !std::isfinite(v))
        throw DataError("row " + std::to_string(line_no) + ": bad value '" + fields[i] + "' for station " + header[i]);
      s.values[base + c] = v;
    }
    ++s.rows;
  }
  return s;
}

void write_station_csv(const std::filesystem::path& path, const HydroSeries& series) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset " + path.string());
  out << "timestamp";
  for (const auto& n : series.station_names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < series.rows; ++r) {
    out << format_hour_timestamp(series.hours[r]);
    for (std::size_t c = 0; c < series.cols; ++c) {
      out << ',';
      if (series.is_missing(r, c))
        out << "NA";
      else
        out << csv::format_double(series.at(r, c));
    }
    out << '\n';
  }
}

HydroSeries interpolate_missing(HydroSeries s) {
  for (std::size_t c = 0; c < s.cols; ++c) {
    std::vector<std::size_t> observed;
    for (std::size_t r = 0; r < s.rows; ++r)
      if (!s.is_missing(r, c)) observed.push_back(r);
    if (observed.empty()) throw DataError("station " + s.station_names[c] + " has no observed values");
    for (std::size_t r = 0; r < observed.front(); ++r) s.at(r, c) = s.at(observed.front(), c);
    for (std::size_t r = observed.back() + 1; r < s.rows; ++r) s.at(r, c) = s.at(observed.back(), c);
    for (std::size_t k = 0; k + 1 < observed.size(); ++k) {
      const std::size_t a = observed[k], b = observed[k + 1];
      const double va = s.at(a, c), vb = s.at(b, c);
      for (std::size_t r = a + 1; r < b; ++r)
        s.at(r, c) = va + (vb - va) * static_cast<double>(r - a) / static_cast<double>(b - a);
    }
  }
  std::fill(s.missing.begin(), s.missing.end(), 0);
  return s;
}

MinMaxScaler::MinMaxScaler(std::vector<double> mins, std::vector<double> maxs)
    : mins_(std::move(mins)), maxs_(std::move(maxs)) {
  if (mins_.size() != maxs_.size()) throw ContractError("scaler min/max length mismatch");
  for (std::size_t c = 0; c < mins_.size(); ++c)
    if (maxs_[c] < mins_[c]) throw ContractError("scaler max below min in column " + std::to_string(c));
}

void MinMaxScaler::fit(const HydroSeries& s, std::size_t row_begin, std::size_t row_end) {
  if (row_begin >= row_end || row_end > s.rows)
    throw ContractError("scaler fit range [" + std::to_string(row_begin) + ", " + std::to_string(row_end) +
                        ") invalid for " + std::to_string(s.rows) + " rows");
  mins_.assign(s.cols, 0.0);
  maxs_.assign(s.cols, 0.0);
  for (std::size_t c = 0; c < s.cols; ++c) {
    double lo = s.at(row_begin, c), hi = lo;
    for (std::size_t r = row_begin; r < row_end; ++r) {
      lo = std::min(lo, s.at(r, c));
      hi = std::max(hi, s.at(r, c));
    }
    mins_[c] = lo;
    maxs_[c] = hi;
  }
}

void MinMaxScaler::require_fitted(std::size_t col) const {
  if (!fitted()) throw ContractError("scaler used before fit");
  if (col >= mins_.size()) throw ContractError("scaler column " + std::to_string(col) + " out of range");
}

double MinMaxScaler::apply(std::size_t col, double value) const {
  require_fitted(col);
  const double span = maxs_[col] - mins_[col];
  if (span == 0.0) return 0.0;
  return 2.0 * (value - mins_[col]) / span - 1.0;
}

double MinMaxScaler::invert(std::size_t col, double value) const {
  require_fitted(col);
  const double span = maxs_[col] - mins_[col];
  if (span == 0.0) return mins_[col];
  return (value + 1.0) * 0.5 * span + mins_[col];
}

HydroSeries MinMaxScaler::apply(const HydroSeries& series) const {
  if (!fitted()) throw ContractError("scaler used before fit");
  if (series.cols != mins_.size())
    throw ContractError("scaler fitted on " + std::to_string(mins_.size()) + " columns, series has " +
                        std::to_string(series.cols));
  HydroSeries out = series;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) = apply(c, series.at(r, c));
  return out;
}

std::vector<WindowSample> window_samples(const HydroSeries& s, std::size_t input_len, std::size_t horizon,
                                         std::size_t flow_col) {
  if (input_len == 0 || horizon == 0) throw ConfigError("window lengths must be positive");
  if (flow_col >= s.cols) throw ContractError("flow column out of range");
  if (s.rows < input_len + horizon)
    throw DataError("series has " + std::to_string(s.rows) + " rows, need at least T+H = " +
                    std::to_string(input_len + horizon));
  std::vector<WindowSample> out;
  const std::size_t count = s.rows - input_len - horizon + 1;
  out.reserve(count);
  for (std::size_t start = 0; start < count; ++start) {
    WindowSample w;
    w.input = Tensor({input_len, s.cols},
                     std::vector<double>(s.values.begin() + static_cast<std::ptrdiff_t>(start * s.cols),
                                         s.values.begin() + static_cast<std::ptrdiff_t>((start + input_len) * s.cols)));
    for (std::size_t h = 0; h < horizon; ++h) w.target.push_back(s.at(start + input_len + h, flow_col));
    w.origin_index = start + input_len - 1;
    out.push_back(std::move(w));
  }
  return out;
}

SplitCounts split_counts(std::size_t n, const SplitRatios& r) {
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be nonnegative and sum to 1");
  // The small epsilon keeps exact products such as 0.05*1000 from flooring low.
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::floor(r.train * static_cast<double>(n) + 1e-9));
  c.val = static_cast<std::size_t>(std::floor(r.val * static_cast<double>(n) + 1e-9));
  c.train = std::min(c.train, n);
  c.val = std::min(c.val, n - c.train);
  c.test = n - c.train - c.val;
  if (c.train == 0 || c.val == 0 || c.test == 0)
    throw DataError("split of " + std::to_string(n) + " samples leaves an empty part (" + std::to_string(c.train) +
                    "/" + std::to_string(c.val) + "/" + std::to_string(c.test) + ")");
  return c;
}

DataSplit chronological_split(std::vector<WindowSample> samples, const SplitRatios& ratios) {
  const auto c = split_counts(samples.size(), ratios);
  DataSplit out;
  auto first = std::make_move_iterator(samples.begin());
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(c.train));
  out.val.assign(first + static_cast<std::ptrdiff_t>(c.train), first + static_cast<std::ptrdiff_t>(c.train + c.val));
  out.test.assign(first + static_cast<std::ptrdiff_t>(c.train + c.val), std::make_move_iterator(samples.end()));
  return out;
}

std::size_t training_row_end(std::size_t rows, std::size_t input_len, std::size_t horizon, const SplitRatios& ratios) {
  if (rows < input_len + horizon)
    throw DataError("series has " + std::to_string(rows) + " rows, need at least T+H = " +
                    std::to_string(input_len + horizon));
  const auto c = split_counts(rows - input_len - horizon + 1, ratios);
  return c.train + input_len + horizon - 1;
}

namespace {

class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  // Box-Muller; portable where std::normal_distribution is not.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

std::pair<HydroSeries, StationGraph> generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_stations < 2) throw ConfigError("synthetic data needs at least 2 stations");
  if (spec.periods.empty()) throw ConfigError("synthetic data needs at least one period");
  const std::size_t max_period = *std::max_element(spec.periods.begin(), spec.periods.end());
  if (*std::min_element(spec.periods.begin(), spec.periods.end()) < 2)
    throw ConfigError("synthetic periods must be >= 2");
  if (spec.rows < 10 * max_period)
    throw ConfigError("synthetic rows must be >= 10x the longest period (" + std::to_string(10 * max_period) + ")");
  if (spec.noise < 0.0 || spec.lag >= spec.rows) throw ConfigError("invalid synthetic noise or lag");

  SynthRng rng(spec.seed);
  const std::size_t N = spec.n_stations, R = spec.rows, rain_count = N - 1;
  const double two_pi = 2.0 * std::numbers::pi;

  struct Wave {
    double amp, phase;
  };
  std::vector<std::vector<Wave>> rain_waves(rain_count);
  for (auto& waves : rain_waves)
    for (std::size_t p = 0; p < spec.periods.size(); ++p) waves.push_back({0.5 + rng.uniform(), two_pi * rng.uniform()});
  std::vector<double> mix(rain_count);
  for (auto& w : mix) w = 0.5 + rng.uniform();
  std::vector<double> flow_phase(spec.periods.size());
  for (auto& ph : flow_phase) ph = two_pi * rng.uniform();

  HydroSeries s;
  s.rows = R;
  s.cols = N;
  s.flow_col = N - 1;
  for (std::size_t j = 0; j < rain_count; ++j) s.station_names.push_back("R" + std::to_string(j + 1));
  s.station_names.push_back("Q");
  s.values.assign(R * N, 0.0);
  s.missing.assign(R * N, 0);
  const std::int64_t start = [] {
    std::int64_t h = 0;
    parse_hour_timestamp("2020-01-01T00:00:00", h);
    return h;
  }();
  for (std::size_t r = 0; r < R; ++r) s.hours.push_back(start + static_cast<std::int64_t>(r));

  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t j = 0; j < rain_count; ++j) {
      double v = 0.0;
      for (std::size_t p = 0; p < spec.periods.size(); ++p) {
        const auto& w = rain_waves[j][p];
        v += w.amp * (1.0 + std::sin(two_pi * static_cast<double>(r) / static_cast<double>(spec.periods[p]) + w.phase));
      }
      s.at(r, j) = std::max(0.0, v + spec.noise * rng.gaussian());
    }
  for (std::size_t r = 0; r < R; ++r) {
    const std::size_t src = r >= spec.lag ? r - spec.lag : 0;
    double v = spec.baseflow;
    for (std::size_t j = 0; j < rain_count; ++j) v += mix[j] * s.at(src, j);
    for (std::size_t p = 0; p < spec.periods.size(); ++p)
      v += spec.flow_periodic_amp *
           (1.0 + std::sin(two_pi * static_cast<double>(r) / static_cast<double>(spec.periods[p]) + flow_phase[p]));
    s.at(r, N - 1) = v + spec.noise * rng.gaussian();
  }

  StationGraph g;
  g.n_stations = N;
  g.station_names = s.station_names;
  g.flow_station = N - 1;
  g.adjacency.assign(N * N, 0.0);
  for (std::size_t j = 0; j < rain_count; ++j) {
    g.adjacency[j * N + (N - 1)] = mix[j];
    g.adjacency[(N - 1) * N + j] = mix[j];
  }
  return {std::move(s), std::move(g)};
}

}  // namespace apslstm
