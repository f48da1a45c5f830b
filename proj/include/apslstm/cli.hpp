#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "apslstm/data.hpp"
#include "apslstm/model.hpp"
#include "apslstm/train.hpp"

namespace apslstm {

/// Everything a command needs. Model fields other than N and the flow index
/// come from here; those two are taken from the adjacency file.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path adjacency;
  std::filesystem::path output_dir = ".";
  std::filesystem::path checkpoint;
  std::string flow_station;  // empty: last adjacency column

  ModelConfig model;
  std::optional<std::size_t> embed_dim;  // empty: min(4, N-1)
  TrainOptions train;
  SplitRatios split;
  SyntheticSpec synth;
};

// Applies one `section.key = value`. ConfigError on unknown keys or bad values.
void set_config_value(RunConfig& config, const std::string& section, const std::string& key,
                      const std::string& value);
// INI file with [data], [model], [train] and [synth] sections.
RunConfig load_run_config(const std::filesystem::path& path);
void apply_ini(RunConfig& config, const std::filesystem::path& path);

// Fills n_stations, flow_station and embed_dim from the graph.
ModelConfig resolve_model_config(const RunConfig& config, const StationGraph& graph);

// Re-readable INI text of the resolved config.
std::string config_echo(const RunConfig& config, const ModelConfig& resolved);

// Entry point shared by the executable and the tests. Exit codes: 0 success,
// 1 usage or config error, 2 data error, 3 numerical error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace apslstm
