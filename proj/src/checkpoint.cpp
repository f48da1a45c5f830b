#include "apslstm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <span>

#include "apslstm/errors.hpp"

namespace apslstm {

namespace {

constexpr char kMagic[4] = {'A', 'P', 'S', 'L'};
constexpr std::uint32_t kMaxRank = 8;

struct ConfigField {
  const char* name;
  std::size_t ModelConfig::*size_field;
  bool ModelConfig::*bool_field;
};

// Order is part of the file format.
constexpr ConfigField kFields[] = {
    {"n_stations", &ModelConfig::n_stations, nullptr},
    {"input_len", &ModelConfig::input_len, nullptr},
    {"horizon", &ModelConfig::horizon, nullptr},
    {"blocks", &ModelConfig::blocks, nullptr},
    {"top_k", &ModelConfig::top_k, nullptr},
    {"hidden", &ModelConfig::hidden, nullptr},
    {"embed_dim", &ModelConfig::embed_dim, nullptr},
    {"psa_kernel_h", &ModelConfig::psa_kernel_h, nullptr},
    {"psa_kernel_w", &ModelConfig::psa_kernel_w, nullptr},
    {"ssa_kernel", &ModelConfig::ssa_kernel, nullptr},
    {"flow_station", &ModelConfig::flow_station, nullptr},
    {"disable_psa", nullptr, &ModelConfig::disable_psa},
    {"disable_ssa", nullptr, &ModelConfig::disable_ssa},
    {"differentiable_agg_weights", nullptr, &ModelConfig::differentiable_agg_weights},
};

std::uint64_t field_value(const ModelConfig& c, const ConfigField& f) {
  return f.size_field ? static_cast<std::uint64_t>(c.*(f.size_field)) : (c.*(f.bool_field) ? 1u : 0u);
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void tensor(const std::string& name, const Shape& shape, std::span<const double> data) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) u32(static_cast<std::uint32_t>(d));
    for (double v : data) f64(v);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  bool done() const { return pos_ == b_.size(); }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw DataError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  Shape shape;
  std::vector<double> data;
};

}  // namespace

std::string first_config_mismatch(const ModelConfig& stored, const ModelConfig& expected) {
  for (const auto& f : kFields)
    if (field_value(stored, f) != field_value(expected, f)) return f.name;
  return {};
}

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& model, const MinMaxScaler* scaler) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  for (const auto& f : kFields) w.u32(static_cast<std::uint32_t>(field_value(model.config, f)));
  w.u64(model.seed);
  for (const auto& [name, t] : model.named_parameters()) w.tensor(name, t.shape(), t.data());
  const auto& emb = model.embedding;
  if (emb.dims() > 0) {
    w.tensor("laplacian.eigvecs", emb.eigvecs.shape(), emb.eigvecs.data());
    w.tensor("laplacian.eigvals", {emb.dims()}, emb.eigvals);
  }
  if (scaler && scaler->fitted()) {
    w.tensor("scaler.min", {scaler->columns()}, scaler->mins());
    w.tensor("scaler.max", {scaler->columns()}, scaler->maxs());
  }
  return w.take();
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& model, const MinMaxScaler* scaler) {
  const auto bytes = serialize_checkpoint(model, scaler);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig* expected) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw DataError("checkpoint has a bad magic header");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported");

  ModelConfig config;
  for (const auto& f : kFields) {
    const auto v = r.u32("config block");
    if (f.size_field)
      config.*(f.size_field) = v;
    else
      config.*(f.bool_field) = v != 0;
  }
  const auto seed = r.u64("config block");
  if (expected) {
    const auto field = first_config_mismatch(config, *expected);
    if (!field.empty()) {
      const ConfigField* f = nullptr;
      for (const auto& c : kFields)
        if (field == c.name) f = &c;
      throw ConfigError("checkpoint config mismatch in field '" + field + "': checkpoint has " +
                        std::to_string(field_value(config, *f)) + ", expected " +
                        std::to_string(field_value(*expected, *f)));
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint carries an invalid config: ") + e.what());
  }

  std::map<std::string, RawTensor> tensors;
  while (!r.done()) {
    const auto len = r.u32("tensor name length");
    std::string name = r.str(len, "tensor name");
    RawTensor t;
    const auto rank = r.u32("tensor rank");
    if (rank == 0 || rank > kMaxRank) throw DataError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.shape.push_back(r.u32("tensor dims"));
      numel *= t.shape.back();
    }
    r.need(numel * 8, "tensor data");
    t.data.resize(numel);
    for (auto& v : t.data) v = r.f64("tensor data");
    if (!tensors.emplace(name, std::move(t)).second) throw DataError("checkpoint repeats tensor '" + name + "'");
  }

  Checkpoint ck;
  ck.model = empty_model(config);
  ck.model.seed = seed;
  auto take = [&](const std::string& name, const Shape& shape) -> std::vector<double> {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (it->second.shape != shape)
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape) + ", expected " +
                      shape_str(shape));
    auto data = std::move(it->second.data);
    tensors.erase(it);
    return data;
  };
  for (auto& [name, t] : ck.model.named_parameters()) {
    auto data = take(name, t.shape());
    std::copy(data.begin(), data.end(), t.mutable_data().begin());
  }
  auto& emb = ck.model.embedding;
  if (config.embed_dim > 0) {
    auto vecs = take("laplacian.eigvecs", emb.eigvecs.shape());
    std::copy(vecs.begin(), vecs.end(), emb.eigvecs.mutable_data().begin());
    emb.eigvals = take("laplacian.eigvals", {config.embed_dim});
  }
  if (tensors.count("scaler.min")) {
    auto mins = take("scaler.min", {config.n_stations});
    auto maxs = take("scaler.max", {config.n_stations});
    ck.scaler = MinMaxScaler(std::move(mins), std::move(maxs));
  }
  if (!tensors.empty()) throw DataError("checkpoint has unexpected tensor '" + tensors.begin()->first + "'");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace apslstm
