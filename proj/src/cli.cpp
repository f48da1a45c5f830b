#include "apslstm/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "apslstm/checkpoint.hpp"
#include "apslstm/csv.hpp"
#include "apslstm/errors.hpp"
#include "apslstm/spectral.hpp"

namespace apslstm {

namespace fs = std::filesystem;

namespace {

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError("'" + key + "' expects a nonnegative integer, got '" + text + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError("'" + key + "' expects an unsigned integer, got '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  if (!csv::parse_double(text, v)) throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, std::string text) {
  std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& field : csv::split_line(text)) out.push_back(parse_size(key, field));
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

const char* yes_no(bool b) { return b ? "true" : "false"; }

}  // namespace

void set_config_value(RunConfig& c, const std::string& section, const std::string& key, const std::string& value) {
  const std::string name = section + "." + key;
  auto& m = c.model;
  if (section == "data") {
    if (key == "dataset") c.dataset = value;
    else if (key == "adjacency") c.adjacency = value;
    else if (key == "output") c.output_dir = value;
    else if (key == "checkpoint") c.checkpoint = value;
    else if (key == "flow_station") c.flow_station = value;
    else if (key == "train_ratio") c.split.train = parse_real(name, value);
    else if (key == "val_ratio") c.split.val = parse_real(name, value);
    else if (key == "test_ratio") c.split.test = parse_real(name, value);
    else throw ConfigError("unknown config key '" + name + "'");
  } else if (section == "model") {
    if (key == "input_len") m.input_len = parse_size(name, value);
    else if (key == "horizon") m.horizon = parse_size(name, value);
    else if (key == "blocks") m.blocks = parse_size(name, value);
    else if (key == "top_k") m.top_k = parse_size(name, value);
    else if (key == "hidden") m.hidden = parse_size(name, value);
    else if (key == "embed_dim") c.embed_dim = parse_size(name, value);
    else if (key == "psa_kernel_h") m.psa_kernel_h = parse_size(name, value);
    else if (key == "psa_kernel_w") m.psa_kernel_w = parse_size(name, value);
    else if (key == "ssa_kernel") m.ssa_kernel = parse_size(name, value);
    else if (key == "disable_psa") m.disable_psa = parse_bool(name, value);
    else if (key == "disable_ssa") m.disable_ssa = parse_bool(name, value);
    else if (key == "differentiable_agg_weights") m.differentiable_agg_weights = parse_bool(name, value);
    else throw ConfigError("unknown config key '" + name + "'");
  } else if (section == "train") {
    if (key == "epochs") c.train.epochs = parse_size(name, value);
    else if (key == "batch_size") c.train.batch_size = parse_size(name, value);
    else if (key == "lr") c.train.lr = parse_real(name, value);
    else if (key == "seed") c.train.seed = parse_u64(name, value);
    else throw ConfigError("unknown config key '" + name + "'");
  } else if (section == "synth") {
    auto& s = c.synth;
    if (key == "stations") s.n_stations = parse_size(name, value);
    else if (key == "rows") s.rows = parse_size(name, value);
    else if (key == "periods") s.periods = parse_size_list(name, value);
    else if (key == "noise") s.noise = parse_real(name, value);
    else if (key == "lag") s.lag = parse_size(name, value);
    else if (key == "seed") s.seed = parse_u64(name, value);
    else if (key == "flow_periodic_amp") s.flow_periodic_amp = parse_real(name, value);
    else if (key == "baseflow") s.baseflow = parse_real(name, value);
    else throw ConfigError("unknown config key '" + name + "'");
  } else {
    throw ConfigError("unknown config section '[" + section + "]'");
  }
}

void apply_ini(RunConfig& config, const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside any section");
    for (const auto& [key, value] : body) set_config_value(config, section, key, value.get_value<std::string>());
  }
}

RunConfig load_run_config(const fs::path& path) {
  RunConfig c;
  apply_ini(c, path);
  return c;
}

ModelConfig resolve_model_config(const RunConfig& config, const StationGraph& graph) {
  ModelConfig m = config.model;
  m.n_stations = graph.n_stations;
  m.flow_station = graph.flow_station;
  m.embed_dim = config.embed_dim ? *config.embed_dim : std::min<std::size_t>(4, graph.n_stations - 1);
  m.validate();
  return m;
}

std::string config_echo(const RunConfig& c, const ModelConfig& m) {
  std::ostringstream o;
  const auto real = [](double v) { return csv::format_double(v); };
  o << "[data]\n"
    << "dataset = " << c.dataset.string() << '\n'
    << "adjacency = " << c.adjacency.string() << '\n'
    << "output = " << c.output_dir.string() << '\n'
    << "checkpoint = " << c.checkpoint.string() << '\n'
    << "flow_station = " << c.flow_station << '\n'
    << "train_ratio = " << real(c.split.train) << '\n'
    << "val_ratio = " << real(c.split.val) << '\n'
    << "test_ratio = " << real(c.split.test) << "\n\n";
  o << "[model]\n"
    << "; n_stations = " << m.n_stations << " (inferred from the adjacency)\n"
    << "input_len = " << m.input_len << '\n'
    << "horizon = " << m.horizon << '\n'
    << "blocks = " << m.blocks << '\n'
    << "top_k = " << m.top_k << '\n'
    << "hidden = " << m.hidden << '\n'
    << "embed_dim = " << m.embed_dim << '\n'
    << "psa_kernel_h = " << m.psa_kernel_h << '\n'
    << "psa_kernel_w = " << m.psa_kernel_w << '\n'
    << "ssa_kernel = " << m.ssa_kernel << '\n'
    << "disable_psa = " << yes_no(m.disable_psa) << '\n'
    << "disable_ssa = " << yes_no(m.disable_ssa) << '\n'
    << "differentiable_agg_weights = " << yes_no(m.differentiable_agg_weights) << "\n\n";
  o << "[train]\n"
    << "epochs = " << c.train.epochs << '\n'
    << "batch_size = " << c.train.batch_size << '\n'
    << "lr = " << real(c.train.lr) << '\n'
    << "seed = " << c.train.seed << "\n\n";
  o << "[synth]\n"
    << "stations = " << c.synth.n_stations << '\n'
    << "rows = " << c.synth.rows << '\n'
    << "periods = " << join_sizes(c.synth.periods) << '\n'
    << "noise = " << real(c.synth.noise) << '\n'
    << "lag = " << c.synth.lag << '\n'
    << "seed = " << c.synth.seed << '\n'
    << "flow_periodic_amp = " << real(c.synth.flow_periodic_amp) << '\n'
    << "baseflow = " << real(c.synth.baseflow) << '\n';
  return o.str();
}

namespace {

/// Name of the pipeline step currently running; reported with any failure.
struct Stage {
  std::string name = "config";
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::ordered_json config_json(const RunConfig& c, const ModelConfig& m) {
  nlohmann::ordered_json j;
  j["flow_station"] = c.flow_station;
  j["n_stations"] = m.n_stations;
  j["input_len"] = m.input_len;
  j["horizon"] = m.horizon;
  j["blocks"] = m.blocks;
  j["top_k"] = m.top_k;
  j["hidden"] = m.hidden;
  j["embed_dim"] = m.embed_dim;
  j["psa_kernel_h"] = m.psa_kernel_h;
  j["psa_kernel_w"] = m.psa_kernel_w;
  j["ssa_kernel"] = m.ssa_kernel;
  j["disable_psa"] = m.disable_psa;
  j["disable_ssa"] = m.disable_ssa;
  j["differentiable_agg_weights"] = m.differentiable_agg_weights;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["lr"] = c.train.lr;
  j["seed"] = c.train.seed;
  j["train_ratio"] = c.split.train;
  j["val_ratio"] = c.split.val;
  j["test_ratio"] = c.split.test;
  return j;
}

void write_metrics(const fs::path& path, const MetricsReport& report, const RunConfig& c, const ModelConfig& m) {
  auto j = metrics_to_json(report);
  j["config"] = config_json(c, m);
  write_text(path, j.dump(2) + "\n");
}

void print_table(std::ostream& out, const std::string& title, const MetricsReport& r) {
  out << title << '\n' << fmt::format("{:>9} {:>10} {:>10} {:>9}\n", "horizon", "RMSE", "MAE", "MAPE(%)");
  auto row = [&](const std::string& label, const HorizonMetrics& m) {
    const std::string mape = m.mape ? fmt::format("{:.2f}", *m.mape * 100.0) : "n/a";
    out << fmt::format("{:>9} {:>10.2f} {:>10.2f} {:>9}\n", label, m.rmse, m.mae, mape);
  };
  for (std::size_t h = 0; h < r.horizons.size(); ++h) row("T+" + std::to_string(h + 1), r.horizons[h]);
  row("average", r.average);
}

struct Session {
  RunConfig config;
  Stage stage;
  std::ostream* out = nullptr;

  StationGraph graph;
  ModelConfig model;

  void load_graph() {
    stage.name = "ingestion";
    if (config.adjacency.empty()) throw ConfigError("no adjacency path configured");
    graph = load_adjacency_csv(config.adjacency, config.flow_station);
    config.flow_station = graph.station_names[graph.flow_station];
    stage.name = "config";
    model = resolve_model_config(config, graph);
  }

  HydroSeries load_series() {
    stage.name = "ingestion";
    if (config.dataset.empty()) throw ConfigError("no dataset path configured");
    return load_station_csv(config.dataset, graph);
  }

  Checkpoint load_model_checkpoint() {
    stage.name = "checkpoint";
    if (config.checkpoint.empty()) throw ConfigError("no checkpoint path configured");
    return load_checkpoint(config.checkpoint, &model);
  }

  void prepare_output() {
    stage.name = "output";
    fs::create_directories(config.output_dir);
  }

  void echo() { write_text(config.output_dir / "config.ini", config_echo(config, model)); }
};

struct Prepared {
  HydroSeries scaled;
  MinMaxScaler scaler;
  DataSplit split;
};

// Interpolates, scales (fitting on training rows unless a scaler is given),
// windows and splits.
Prepared preprocess(Session& s, const HydroSeries& raw, const std::optional<MinMaxScaler>& scaler) {
  s.stage.name = "preprocessing";
  const HydroSeries filled = interpolate_missing(raw);
  Prepared p;
  if (scaler) {
    if (scaler->columns() != filled.cols) throw DataError("checkpoint scaler width does not match the dataset");
    p.scaler = *scaler;
  } else {
    p.scaler.fit(filled, 0, training_row_end(filled.rows, s.model.input_len, s.model.horizon, s.config.split));
  }
  p.scaled = p.scaler.apply(filled);
  p.split = chronological_split(window_samples(p.scaled, s.model.input_len, s.model.horizon, s.model.flow_station),
                                s.config.split);
  return p;
}

Tensor window_at(const Session& s, const HydroSeries& scaled, std::size_t origin) {
  const std::size_t T = s.model.input_len;
  if (origin + 1 < T || origin >= scaled.rows)
    throw ConfigError("origin " + std::to_string(origin) + " out of range [" + std::to_string(T - 1) + ", " +
                      std::to_string(scaled.rows - 1) + "]");
  const std::size_t begin = origin + 1 - T;
  std::vector<double> v(scaled.values.begin() + static_cast<std::ptrdiff_t>(begin * scaled.cols),
                        scaled.values.begin() + static_cast<std::ptrdiff_t>((origin + 1) * scaled.cols));
  return Tensor({T, scaled.cols}, std::move(v));
}

void cmd_train(Session& s) {
  s.load_graph();
  const HydroSeries raw = s.load_series();
  Prepared p = preprocess(s, raw, std::nullopt);

  s.stage.name = "initialization";
  const ModelState initial = init_parameters(s.model, s.graph, s.config.train.seed);
  s.prepare_output();

  s.stage.name = "training";
  *s.out << fmt::format("training on {} samples, validating on {}, {} parameters\n", p.split.train.size(),
                        p.split.val.size(), initial.parameter_count());
  const auto result = train(initial, p.split.train, p.split.val, s.config.train, [&](const EpochRecord& r) {
    *s.out << fmt::format("epoch {:>3}  train_mse {:.6f}  val_mse {:.6f}\n", r.epoch, r.train_mse, r.val_mse);
  });

  s.stage.name = "evaluation";
  const auto val = evaluate(result.best, p.split.val, p.scaler);
  const auto test = evaluate(result.best, p.split.test, p.scaler);

  s.stage.name = "checkpoint";
  save_checkpoint(s.config.output_dir / "model.apsl", result.best, &p.scaler);

  s.stage.name = "output";
  {
    auto h = open_output(s.config.output_dir / "history.csv");
    h << "epoch,train_mse,val_mse\n";
    for (const auto& r : result.history)
      h << r.epoch << ',' << csv::format_double(r.train_mse) << ',' << csv::format_double(r.val_mse) << '\n';
  }
  write_metrics(s.config.output_dir / "metrics.json", val.metrics, s.config, s.model);
  write_metrics(s.config.output_dir / "test_metrics.json", test.metrics, s.config, s.model);
  s.echo();
  *s.out << "best epoch " << result.best_epoch << '\n';
  print_table(*s.out, "validation", val.metrics);
  print_table(*s.out, "test", test.metrics);
}

void cmd_evaluate(Session& s) {
  s.load_graph();
  const Checkpoint ck = s.load_model_checkpoint();
  const HydroSeries raw = s.load_series();
  Prepared p = preprocess(s, raw, ck.scaler);

  s.stage.name = "evaluation";
  const auto ev = evaluate(ck.model, p.split.test, p.scaler);

  s.prepare_output();
  write_metrics(s.config.output_dir / "metrics.json", ev.metrics, s.config, s.model);
  {
    auto o = open_output(s.config.output_dir / "predictions.csv");
    o << "origin_index,horizon,predicted_flow,true_flow\n";
    for (std::size_t i = 0; i < p.split.test.size(); ++i)
      for (std::size_t h = 0; h < s.model.horizon; ++h)
        o << p.split.test[i].origin_index << ',' << h + 1 << ',' << csv::format_double(ev.predicted[i][h]) << ','
          << csv::format_double(ev.truth[i][h]) << '\n';
  }
  s.echo();
  print_table(*s.out, "test", ev.metrics);
}

void cmd_predict(Session& s, const fs::path& input) {
  s.load_graph();
  const Checkpoint ck = s.load_model_checkpoint();
  if (!ck.scaler) throw DataError("checkpoint carries no scaler; retrain to predict in original units");

  s.stage.name = "ingestion";
  if (input.empty()) throw ConfigError("predict needs --input");
  const HydroSeries raw = load_station_csv(input, s.graph);
  if (raw.rows != s.model.input_len)
    throw DataError("expected " + std::to_string(s.model.input_len) + " rows, got " + std::to_string(raw.rows));

  s.stage.name = "preprocessing";
  const HydroSeries scaled = ck.scaler->apply(interpolate_missing(raw));

  s.stage.name = "prediction";
  Tensor y;
  {
    NoGradGuard no_grad;
    y = model_forward(Tensor({scaled.rows, scaled.cols}, scaled.values), ck.model);
  }

  s.prepare_output();
  auto o = open_output(s.config.output_dir / "forecast.csv");
  o << "horizon,predicted_flow\n";
  for (std::size_t h = 0; h < y.numel(); ++h)
    o << h + 1 << ',' << csv::format_double(ck.scaler->invert(s.model.flow_station, y[h])) << '\n';
  o.close();
  s.echo();
}

// Model for diagnostic commands: the checkpoint when configured, otherwise a
// freshly initialized one.
std::pair<ModelState, std::optional<MinMaxScaler>> diagnostic_model(Session& s, bool require_checkpoint) {
  if (!s.config.checkpoint.empty() || require_checkpoint) {
    Checkpoint ck = s.load_model_checkpoint();
    return {std::move(ck.model), std::move(ck.scaler)};
  }
  s.stage.name = "initialization";
  return {init_parameters(s.model, s.graph, s.config.train.seed), std::nullopt};
}

void cmd_analyze_periods(Session& s, std::size_t origin) {
  s.load_graph();
  auto [model, scaler] = diagnostic_model(s, false);
  const HydroSeries raw = s.load_series();
  Prepared p = preprocess(s, raw, scaler);

  s.stage.name = "analysis";
  const Tensor x = window_at(s, p.scaled, origin);
  std::vector<PeriodDivision> divisions;
  std::vector<double> weights;
  if (!model.blocks.empty()) {
    ForwardTrace trace;
    NoGradGuard no_grad;
    model_forward(x, model, &trace);
    for (const auto& slot : trace.blocks.front().slots) {
      divisions.push_back(slot.division);
      weights.push_back(slot.weight);
    }
  } else {
    NoGradGuard no_grad;
    divisions = select_top_k(dft_amplitudes(fuse_embedding(x, model.embedding)), s.model.top_k);
    weights = aggregation_weights(divisions);
  }

  s.prepare_output();
  auto o = open_output(s.config.output_dir / "periods.csv");
  o << "rank,frequency,period_len,num_periods,amplitude,weight\n";
  for (std::size_t i = 0; i < divisions.size(); ++i) {
    const auto& d = divisions[i];
    o << i + 1 << ',' << d.frequency << ',' << d.period_len << ',' << d.num_periods << ','
      << csv::format_double(d.amplitude) << ',' << csv::format_double(weights[i]) << '\n';
  }
  o.close();
  s.echo();
}

void write_matrix(const fs::path& path, const Tensor& m, std::size_t offset, const std::vector<std::string>& labels) {
  auto o = open_output(path);
  const std::size_t n = labels.size();
  o << "from";
  for (const auto& l : labels) o << ',' << l;
  o << '\n';
  for (std::size_t r = 0; r < n; ++r) {
    o << labels[r];
    for (std::size_t c = 0; c < n; ++c) o << ',' << csv::format_double(m[offset + r * n + c]);
    o << '\n';
  }
}

void cmd_dump_attention(Session& s, std::size_t origin) {
  s.load_graph();
  auto [model, scaler] = diagnostic_model(s, true);
  const HydroSeries raw = s.load_series();
  Prepared p = preprocess(s, raw, scaler);

  s.stage.name = "analysis";
  const Tensor x = window_at(s, p.scaled, origin);
  ForwardTrace trace;
  {
    NoGradGuard no_grad;
    model_forward(x, model, &trace);
  }

  s.prepare_output();
  const auto& names = s.graph.station_names;
  for (std::size_t l = 0; l < trace.blocks.size(); ++l)
    for (std::size_t i = 0; i < trace.blocks[l].slots.size(); ++i) {
      const auto& slot = trace.blocks[l].slots[i];
      const std::string tag = "block" + std::to_string(l) + "_slot" + std::to_string(i);
      if (slot.ssa_scores.defined()) write_matrix(s.config.output_dir / ("ssa_" + tag + ".csv"), slot.ssa_scores, 0, names);
      if (slot.psa_scores.defined()) {
        const std::size_t pn = slot.division.num_periods;
        std::vector<std::string> periods;
        for (std::size_t k = 0; k < pn; ++k) periods.push_back("p" + std::to_string(k));
        for (std::size_t n = 0; n < names.size(); ++n)
          write_matrix(s.config.output_dir / ("psa_" + tag + "_station" + std::to_string(n) + ".csv"), slot.psa_scores,
                       n * pn * pn, periods);
      }
    }
  s.echo();
}

void cmd_synth(Session& s) {
  s.stage.name = "generation";
  const auto [series, graph] = generate_synthetic(s.config.synth);
  s.prepare_output();
  write_station_csv(s.config.output_dir / "synthetic.csv", series);
  write_adjacency_csv(s.config.output_dir / "adjacency.csv", graph);
  s.graph = graph;
  s.config.flow_station = graph.station_names[graph.flow_station];
  s.model = resolve_model_config(s.config, graph);
  s.echo();
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ContractError*>(&e)) return 1;
  return 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"APS-LSTM flood forecasting"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string dataset, adjacency, checkpoint;
  app.add_option("--config", config_path, "INI config file");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "seed for initialization, shuffling and synthesis");
  app.add_option("--set", overrides, "override, e.g. model.hidden=90")->allow_extra_args(false);
  app.add_option("--dataset", dataset, "station CSV");
  app.add_option("--adjacency", adjacency, "adjacency CSV");
  app.add_option("--checkpoint", checkpoint, "model checkpoint");

  auto* train_cmd = app.add_subcommand("train", "train and write checkpoint, history and metrics");
  auto* eval_cmd = app.add_subcommand("evaluate", "test-set metrics and predictions from a checkpoint");
  auto* predict_cmd = app.add_subcommand("predict", "forecast from the last T hours");
  std::string input;
  predict_cmd->add_option("--input", input, "CSV with exactly T rows")->required();
  auto* periods_cmd = app.add_subcommand("analyze-periods", "period divisions chosen for one window");
  auto* attention_cmd = app.add_subcommand("dump-attention", "PSA and SSA score matrices for one window");
  std::size_t origin = 0;
  for (auto* c : {periods_cmd, attention_cmd}) c->add_option("--origin", origin, "row of the last input hour")->required();
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset and adjacency");
  std::optional<std::size_t> stations, rows, lag;
  std::optional<double> noise;
  std::vector<std::size_t> periods;
  synth_cmd->add_option("--stations", stations);
  synth_cmd->add_option("--rows", rows);
  synth_cmd->add_option("--periods", periods)->delimiter(',');
  synth_cmd->add_option("--noise", noise);
  synth_cmd->add_option("--lag", lag);
  for (auto* c : app.get_subcommands({})) c->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  Session s;
  s.out = &out;
  try {
    if (!config_path.empty()) apply_ini(s.config, config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('='), dot = o.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("--set expects section.key=value, got '" + o + "'");
      set_config_value(s.config, o.substr(0, dot), o.substr(dot + 1, eq - dot - 1), o.substr(eq + 1));
    }
    if (!out_dir.empty()) s.config.output_dir = out_dir;
    if (!dataset.empty()) s.config.dataset = dataset;
    if (!adjacency.empty()) s.config.adjacency = adjacency;
    if (!checkpoint.empty()) s.config.checkpoint = checkpoint;
    if (seed) s.config.train.seed = s.config.synth.seed = *seed;
    if (stations) s.config.synth.n_stations = *stations;
    if (rows) s.config.synth.rows = *rows;
    if (!periods.empty()) s.config.synth.periods = periods;
    if (noise) s.config.synth.noise = *noise;
    if (lag) s.config.synth.lag = *lag;

    if (train_cmd->parsed()) cmd_train(s);
    else if (eval_cmd->parsed()) cmd_evaluate(s);
    else if (predict_cmd->parsed()) cmd_predict(s, input);
    else if (periods_cmd->parsed()) cmd_analyze_periods(s, origin);
    else if (attention_cmd->parsed()) cmd_dump_attention(s, origin);
    else if (synth_cmd->parsed()) cmd_synth(s);
  } catch (const std::exception& e) {
    std::string what = e.what();
    std::replace(what.begin(), what.end(), '\n', ' ');
    err << "apslstm: " << s.stage.name << " failed: " << what << '\n';
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace apslstm
