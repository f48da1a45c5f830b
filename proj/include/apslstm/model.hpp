#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "apslstm/graph_embed.hpp"
#include "apslstm/spectral.hpp"
#include "apslstm/tensor.hpp"

namespace apslstm {

struct ModelConfig {
  std::size_t n_stations = 1;
  std::size_t input_len = 12;  // T
  std::size_t horizon = 6;     // H
  std::size_t blocks = 2;      // L; 0 gives the plain embedding -> LSTM -> decoder baseline
  std::size_t top_k = 2;       // k
  std::size_t hidden = 85;
  std::size_t embed_dim = 4;  // m
  std::size_t psa_kernel_h = 3;
  std::size_t psa_kernel_w = 3;
  std::size_t ssa_kernel = 3;
  std::size_t flow_station = 0;
  bool disable_psa = false;
  bool disable_ssa = false;
  bool differentiable_agg_weights = false;

  // Number of attention slots per block: min(k, floor(T/2)).
  std::size_t slots() const;
  void validate() const;  // ConfigError
  bool operator==(const ModelConfig&) const = default;
};

struct ConvParams {
  Tensor weight;
  Tensor bias;
};

// Query/key/value convolutions for one period slot of one block.
struct AttentionParams {
  ConvParams psa_q, psa_k, psa_v;  // [N,N,kh,kw]
  ConvParams ssa_q, ssa_k, ssa_v;  // [N,N,kw]
};

struct BlockParams {
  std::vector<AttentionParams> slots;
};

// Gate weights act on the concatenation [h_prev, x_t].
struct LstmParams {
  Tensor w_f, w_i, w_o, w_c;  // [hidden+N, hidden]
  Tensor b_f, b_i, b_o, b_c;  // [hidden]
};

struct ModelState {
  ModelConfig config;
  LaplacianEmbedding embedding;
  std::vector<BlockParams> blocks;
  LstmParams lstm;
  Tensor decoder_w;  // [hidden, H]
  Tensor decoder_b;  // [H]
  std::uint64_t seed = 0;

  // Learnable tensors in a fixed order; names are stable checkpoint keys.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grads() const;
  // Deep copy with independent storage.
  ModelState clone() const;
};

// All parameters allocated and zero; the embedding has no eigenvectors yet.
ModelState empty_model(const ModelConfig& config);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases from a
// seeded mt19937_64 stream; identical (config, graph, seed) gives identical bits.
ModelState init_parameters(const ModelConfig& config, const StationGraph& graph, std::uint64_t seed);

// Sets every PSA/SSA kernel and bias to zero.
void zero_attention(ModelState& state);

// Per-slot record of one forward pass, for attention export.
struct SlotTrace {
  PeriodDivision division;
  double weight = 0.0;
  Tensor psa_scores;  // [N,pn,pn]; undefined when PSA is disabled
  Tensor ssa_scores;  // [N,N];     undefined when SSA is disabled
};
struct BlockTrace {
  std::vector<SlotTrace> slots;
};
struct ForwardTrace {
  std::vector<BlockTrace> blocks;
};

// x3: [pn,pl,N]. Per station, periods are tokens and intra-period positions
// are features; scores are scaled by sqrt(pl).
Tensor periodic_self_attention(const Tensor& x3, const AttentionParams& params, Tensor* scores = nullptr);

// x2: [T,N]. Stations are tokens carrying their convolved series; scores are
// [N,N] scaled by sqrt(N).
Tensor spatial_self_attention(const Tensor& x2, const AttentionParams& params, Tensor* scores = nullptr);

// One APS block without its residual connection: period division, PSA, SSA
// and amplitude-weighted aggregation.
Tensor aps_block_forward(const Tensor& x, const BlockParams& params, const ModelConfig& config,
                         BlockTrace* trace = nullptr);

struct LstmOutput {
  Tensor h;
  Tensor c;
};

// x_t: [N], h_prev/c_prev: [hidden].
LstmOutput lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev, const LstmParams& params);
// x_seq: [T,N]; zero initial state; returns the final hidden state [hidden].
Tensor lstm_encode(const Tensor& x_seq, const LstmParams& params);
// h: [hidden] -> [H]
Tensor decode(const Tensor& h, const Tensor& decoder_w, const Tensor& decoder_b);

// x: [T,N] normalized window -> [H] normalized flow forecast.
Tensor model_forward(const Tensor& x, const ModelState& state, ForwardTrace* trace = nullptr);

}  // namespace apslstm
