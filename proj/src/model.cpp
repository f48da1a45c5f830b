#include "apslstm/model.hpp"

#include <cmath>
#include <random>

#include "apslstm/errors.hpp"

namespace apslstm {

std::size_t ModelConfig::slots() const { return std::min(top_k, input_len / 2); }

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid model config: " + what);
  };
  require(n_stations >= 1, "n_stations must be >= 1");
  require(input_len >= 2, "input_len (T) must be >= 2");
  require(horizon >= 1, "horizon (H) must be >= 1");
  require(top_k >= 1, "top_k (k) must be >= 1");
  require(hidden >= 1, "hidden must be >= 1");
  require(psa_kernel_h % 2 == 1 && psa_kernel_w % 2 == 1, "PSA kernel extents must be odd");
  require(ssa_kernel % 2 == 1, "SSA kernel width must be odd");
  require(flow_station < n_stations, "flow_station out of range");
  require(embed_dim < n_stations, "embed_dim (m) must be <= N-1");
}

namespace {

void push_conv(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const ConvParams& c) {
  out.emplace_back(prefix + ".weight", c.weight);
  out.emplace_back(prefix + ".bias", c.bias);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelState::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (embedding.dims() > 0) out.emplace_back("embed.proj_w", embedding.projection_w);
  out.emplace_back("embed.proj_b", embedding.projection_b);
  for (std::size_t l = 0; l < blocks.size(); ++l)
    for (std::size_t i = 0; i < blocks[l].slots.size(); ++i) {
      const std::string p = "block" + std::to_string(l) + ".slot" + std::to_string(i) + ".";
      const auto& s = blocks[l].slots[i];
      push_conv(out, p + "psa_q", s.psa_q);
      push_conv(out, p + "psa_k", s.psa_k);
      push_conv(out, p + "psa_v", s.psa_v);
      push_conv(out, p + "ssa_q", s.ssa_q);
      push_conv(out, p + "ssa_k", s.ssa_k);
      push_conv(out, p + "ssa_v", s.ssa_v);
    }
  out.emplace_back("lstm.w_f", lstm.w_f);
  out.emplace_back("lstm.w_i", lstm.w_i);
  out.emplace_back("lstm.w_o", lstm.w_o);
  out.emplace_back("lstm.w_c", lstm.w_c);
  out.emplace_back("lstm.b_f", lstm.b_f);
  out.emplace_back("lstm.b_i", lstm.b_i);
  out.emplace_back("lstm.b_o", lstm.b_o);
  out.emplace_back("lstm.b_c", lstm.b_c);
  out.emplace_back("decoder.w", decoder_w);
  out.emplace_back("decoder.b", decoder_b);
  return out;
}

std::vector<Tensor> ModelState::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void ModelState::zero_grads() const {
  for (auto t : parameters()) t.zero_grad();
}

ModelState ModelState::clone() const {
  auto copy = [](const Tensor& t) {
    if (!t.defined()) return t;
    Tensor c = t.detach();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  auto copy_conv = [&](const ConvParams& c) { return ConvParams{copy(c.weight), copy(c.bias)}; };
  ModelState out = *this;
  out.embedding.eigvecs = copy(embedding.eigvecs);
  out.embedding.projection_w = copy(embedding.projection_w);
  out.embedding.projection_b = copy(embedding.projection_b);
  for (auto& b : out.blocks)
    for (auto& s : b.slots) {
      s.psa_q = copy_conv(s.psa_q);
      s.psa_k = copy_conv(s.psa_k);
      s.psa_v = copy_conv(s.psa_v);
      s.ssa_q = copy_conv(s.ssa_q);
      s.ssa_k = copy_conv(s.ssa_k);
      s.ssa_v = copy_conv(s.ssa_v);
    }
  for (Tensor* t : {&out.lstm.w_f, &out.lstm.w_i, &out.lstm.w_o, &out.lstm.w_c, &out.lstm.b_f,
                    &out.lstm.b_i, &out.lstm.b_o, &out.lstm.b_c, &out.decoder_w, &out.decoder_b})
    *t = copy(*t);
  return out;
}

ModelState empty_model(const ModelConfig& config) {
  config.validate();
  auto param = [](Shape shape) {
    Tensor t(std::move(shape), 0.0);
    t.set_requires_grad();
    return t;
  };
  ModelState s;
  s.config = config;
  const std::size_t N = config.n_stations, m = config.embed_dim, hid = config.hidden;
  s.embedding.n_stations = N;
  s.embedding.eigvals.assign(m, 0.0);
  if (m > 0) {
    s.embedding.eigvecs = Tensor({N, m}, 0.0);
    s.embedding.projection_w = param({m, 1});
  }
  s.embedding.projection_b = param({1});

  const std::size_t kh = config.psa_kernel_h, kw = config.psa_kernel_w, k1 = config.ssa_kernel;
  auto conv2 = [&] { return ConvParams{param({N, N, kh, kw}), param({N})}; };
  auto conv1 = [&] { return ConvParams{param({N, N, k1}), param({N})}; };
  s.blocks.resize(config.blocks);
  for (auto& block : s.blocks) {
    block.slots.resize(config.slots());
    for (auto& slot : block.slots) {
      slot.psa_q = conv2();
      slot.psa_k = conv2();
      slot.psa_v = conv2();
      slot.ssa_q = conv1();
      slot.ssa_k = conv1();
      slot.ssa_v = conv1();
    }
  }
  const std::size_t in = hid + N;
  for (Tensor* w : {&s.lstm.w_f, &s.lstm.w_i, &s.lstm.w_o, &s.lstm.w_c}) *w = param({in, hid});
  for (Tensor* b : {&s.lstm.b_f, &s.lstm.b_i, &s.lstm.b_o, &s.lstm.b_c}) *b = param({hid});
  s.decoder_w = param({hid, config.horizon});
  s.decoder_b = param({config.horizon});
  return s;
}

ModelState init_parameters(const ModelConfig& config, const StationGraph& graph, std::uint64_t seed) {
  if (graph.n_stations != config.n_stations)
    throw ConfigError("graph has " + std::to_string(graph.n_stations) + " stations but config N=" +
                      std::to_string(config.n_stations));
  ModelState s = empty_model(config);
  s.seed = seed;
  s.embedding = laplacian_embedding(graph, config.embed_dim);

  std::mt19937_64 rng(seed);
  auto fill = [&rng](Tensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.mutable_data()) {
      // 53 random mantissa bits -> [0,1); std::uniform_real_distribution is
      // implementation-defined, this draw is not.
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      x = (2.0 * u - 1.0) * bound;
    }
  };
  const std::size_t N = config.n_stations, hid = config.hidden;
  if (config.embed_dim > 0) fill(s.embedding.projection_w, config.embed_dim);
  const std::size_t fan2 = N * config.psa_kernel_h * config.psa_kernel_w, fan1 = N * config.ssa_kernel;
  for (auto& block : s.blocks)
    for (auto& slot : block.slots) {
      for (ConvParams* c : {&slot.psa_q, &slot.psa_k, &slot.psa_v}) fill(c->weight, fan2);
      for (ConvParams* c : {&slot.ssa_q, &slot.ssa_k, &slot.ssa_v}) fill(c->weight, fan1);
    }
  for (Tensor* w : {&s.lstm.w_f, &s.lstm.w_i, &s.lstm.w_o, &s.lstm.w_c}) fill(*w, hid + N);
  fill(s.decoder_w, hid);
  return s;
}

void zero_attention(ModelState& state) {
  auto zero = [](ConvParams& c) {
    for (auto& v : c.weight.mutable_data()) v = 0.0;
    for (auto& v : c.bias.mutable_data()) v = 0.0;
  };
  for (auto& b : state.blocks)
    for (auto& s : b.slots) {
      zero(s.psa_q);
      zero(s.psa_k);
      zero(s.psa_v);
      zero(s.ssa_q);
      zero(s.ssa_k);
      zero(s.ssa_v);
    }
}

Tensor periodic_self_attention(const Tensor& x3, const AttentionParams& params, Tensor* scores) {
  if (x3.rank() != 3) throw ShapeError("PSA expects [pn,pl,N], got " + shape_str(x3.shape()));
  const std::size_t pl = x3.dim(1);
  Tensor grid = permute(x3, {2, 0, 1});  // [N,pn,pl]
  Tensor q = conv2d_same(grid, params.psa_q.weight, params.psa_q.bias);
  Tensor k = conv2d_same(grid, params.psa_k.weight, params.psa_k.bias);
  Tensor v = conv2d_same(grid, params.psa_v.weight, params.psa_v.bias);
  Tensor attn = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(pl))), 2);
  if (scores) *scores = attn.detach();
  return permute(matmul(attn, v), {1, 2, 0});
}

Tensor spatial_self_attention(const Tensor& x2, const AttentionParams& params, Tensor* scores) {
  if (x2.rank() != 2) throw ShapeError("SSA expects [T,N], got " + shape_str(x2.shape()));
  const std::size_t N = x2.dim(1);
  Tensor series = transpose(x2);  // [N,T]
  Tensor q = conv1d_same(series, params.ssa_q.weight, params.ssa_q.bias);
  Tensor k = conv1d_same(series, params.ssa_k.weight, params.ssa_k.bias);
  Tensor v = conv1d_same(series, params.ssa_v.weight, params.ssa_v.bias);
  Tensor attn = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(N))), 1);
  if (scores) *scores = attn.detach();
  return transpose(matmul(attn, v));
}

Tensor aps_block_forward(const Tensor& x, const BlockParams& params, const ModelConfig& config,
                         BlockTrace* trace) {
  if (x.rank() != 2) throw ShapeError("APS block expects [T,N], got " + shape_str(x.shape()));
  const std::size_t T = x.dim(0);
  const auto divisions = select_top_k(dft_amplitudes(x), config.top_k);
  if (divisions.size() > params.slots.size())
    throw ShapeError("block has " + std::to_string(params.slots.size()) + " slots for " +
                     std::to_string(divisions.size()) + " divisions");

  std::vector<Tensor> outputs;
  if (trace) trace->slots.clear();
  for (std::size_t i = 0; i < divisions.size(); ++i) {
    const auto& slot = params.slots[i];
    SlotTrace st;
    st.division = divisions[i];
    Tensor periodic = config.disable_psa
                          ? x
                          : unfold_from_periods(
                                periodic_self_attention(fold_to_periods(x, divisions[i]), slot,
                                                        trace ? &st.psa_scores : nullptr),
                                T);
    Tensor spatial = config.disable_ssa
                         ? periodic
                         : spatial_self_attention(periodic, slot, trace ? &st.ssa_scores : nullptr);
    outputs.push_back(spatial);
    if (trace) trace->slots.push_back(std::move(st));
  }

  Tensor out;
  if (config.differentiable_agg_weights) {
    std::vector<std::size_t> freqs;
    for (const auto& d : divisions) freqs.push_back(d.frequency);
    Tensor weights = softmax(spectral_amplitudes(x, freqs), 0);
    if (trace)
      for (std::size_t i = 0; i < divisions.size(); ++i) trace->slots[i].weight = weights[i];
    out = adaptive_aggregate(outputs, weights);
  } else {
    if (trace) {
      const auto w = aggregation_weights(divisions);
      for (std::size_t i = 0; i < divisions.size(); ++i) trace->slots[i].weight = w[i];
    }
    out = adaptive_aggregate(outputs, divisions);
  }
  return out;
}

LstmOutput lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev, const LstmParams& p) {
  const std::size_t hid = p.b_f.numel();
  if (h_prev.numel() != hid || c_prev.numel() != hid || p.w_f.dim(0) != hid + x_t.numel())
    throw ShapeError("lstm_step: x " + shape_str(x_t.shape()) + ", h " + shape_str(h_prev.shape()) +
                     ", c " + shape_str(c_prev.shape()) + " vs weights " + shape_str(p.w_f.shape()));
  Tensor z = reshape(concat({reshape(h_prev, {hid}), reshape(x_t, {x_t.numel()})}, 0), {1, hid + x_t.numel()});
  auto gate = [&](const Tensor& w, const Tensor& b) { return reshape(add(matmul(z, w), b), {hid}); };
  Tensor f = sigmoid(gate(p.w_f, p.b_f));
  Tensor i = sigmoid(gate(p.w_i, p.b_i));
  Tensor o = sigmoid(gate(p.w_o, p.b_o));
  Tensor candidate = apslstm::tanh(gate(p.w_c, p.b_c));
  Tensor c = add(mul(f, reshape(c_prev, {hid})), mul(i, candidate));
  Tensor h = mul(o, apslstm::tanh(c));
  return {h, c};
}

Tensor lstm_encode(const Tensor& x_seq, const LstmParams& params) {
  if (x_seq.rank() != 2) throw ShapeError("lstm_encode expects [T,N], got " + shape_str(x_seq.shape()));
  const std::size_t hid = params.b_f.numel();
  Tensor h({hid}, 0.0), c({hid}, 0.0);
  for (std::size_t t = 0; t < x_seq.dim(0); ++t) {
    auto next = lstm_step(slice_rows(x_seq, t, 1), h, c, params);
    h = next.h;
    c = next.c;
  }
  return h;
}

Tensor decode(const Tensor& h, const Tensor& decoder_w, const Tensor& decoder_b) {
  const std::size_t hid = decoder_w.dim(0), H = decoder_w.dim(1);
  if (h.numel() != hid || decoder_b.numel() != H)
    throw ShapeError("decode: h " + shape_str(h.shape()) + " vs weights " + shape_str(decoder_w.shape()));
  return reshape(add(matmul(reshape(h, {1, hid}), decoder_w), decoder_b), {H});
}

Tensor model_forward(const Tensor& x, const ModelState& state, ForwardTrace* trace) {
  const auto& cfg = state.config;
  if (x.rank() != 2 || x.dim(0) != cfg.input_len || x.dim(1) != cfg.n_stations)
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match T=" +
                     std::to_string(cfg.input_len) + ", N=" + std::to_string(cfg.n_stations));
  Tensor h = fuse_embedding(x, state.embedding);
  if (trace) trace->blocks.assign(state.blocks.size(), {});
  for (std::size_t l = 0; l < state.blocks.size(); ++l)
    h = add(aps_block_forward(h, state.blocks[l], cfg, trace ? &trace->blocks[l] : nullptr), h);
  return decode(lstm_encode(h, state.lstm), state.decoder_w, state.decoder_b);
}

}  // namespace apslstm
