#include "apslstm/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "apslstm/errors.hpp"

namespace apslstm {

namespace {

using cd = std::complex<double>;

// exp(-2*pi*i * num / den), reducing num modulo den first for accuracy.
cd twiddle(std::size_t num, std::size_t den) {
  const double angle = -2.0 * std::numbers::pi * static_cast<double>(num % den) / static_cast<double>(den);
  return {std::cos(angle), std::sin(angle)};
}

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

std::size_t smallest_factor(std::size_t n) {
  for (std::size_t p = 2; p * p <= n; ++p)
    if (n % p == 0) return p;
  return n;
}

void fft_pow2(std::vector<cd>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t j = 0; j < len / 2; ++j) {
        cd w = twiddle(j, len);
        if (inverse) w = std::conj(w);
        const cd u = a[i + j];
        const cd v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
      }
  }
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(n);
}

// Chirp-z: expresses a length-n DFT as a power-of-two convolution.
std::vector<cd> bluestein(std::span<const cd> x) {
  const std::size_t n = x.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  std::vector<cd> chirp(n);
  for (std::size_t j = 0; j < n; ++j) {
    // exp(-i*pi*j^2/n) == twiddle(j^2, 2n)
    chirp[j] = twiddle((j * j) % (2 * n), 2 * n);
  }
  std::vector<cd> a(m, 0.0), b(m, 0.0);
  for (std::size_t j = 0; j < n; ++j) a[j] = x[j] * chirp[j];
  b[0] = std::conj(chirp[0]);
  for (std::size_t j = 1; j < n; ++j) b[j] = b[m - j] = std::conj(chirp[j]);
  fft_pow2(a, false);
  fft_pow2(b, false);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  fft_pow2(a, true);
  std::vector<cd> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] * chirp[k];
  return out;
}

constexpr std::size_t kDirectPrimeCutoff = 7;

std::vector<cd> fft_rec(std::span<const cd> x) {
  const std::size_t n = x.size();
  if (n == 1) return {x[0]};
  if (is_pow2(n)) {
    std::vector<cd> a(x.begin(), x.end());
    fft_pow2(a, false);
    return a;
  }
  const std::size_t p = smallest_factor(n);
  if (p == n) {
    if (n > kDirectPrimeCutoff) return bluestein(x);
    std::vector<cd> out(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < n; ++j) out[k] += x[j] * twiddle(j * k, n);
    return out;
  }
  // Decimation in time by the smallest factor p: x[m*p + r] -> p sub-transforms.
  const std::size_t q = n / p;
  std::vector<std::vector<cd>> sub(p);
  std::vector<cd> buf(q);
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t m = 0; m < q; ++m) buf[m] = x[m * p + r];
    sub[r] = fft_rec(buf);
  }
  std::vector<cd> out(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    cd acc = 0.0;
    for (std::size_t r = 0; r < p; ++r) acc += sub[r][k % q] * twiddle(r * k, n);
    out[k] = acc;
  }
  return out;
}

}  // namespace

std::vector<std::complex<double>> fft(std::span<const std::complex<double>> input) {
  if (input.empty()) return {};
  return fft_rec(input);
}

PeriodDivision make_division(std::size_t window_len, std::size_t frequency, double amplitude) {
  if (window_len < 2 || frequency < 1 || frequency > window_len / 2)
    throw ContractError("frequency " + std::to_string(frequency) + " outside 1.." +
                        std::to_string(window_len / 2) + " for window length " +
                        std::to_string(window_len));
  PeriodDivision d;
  d.frequency = frequency;
  d.period_len = (window_len + frequency - 1) / frequency;
  d.num_periods = (window_len + d.period_len - 1) / d.period_len;
  d.amplitude = amplitude;
  return d;
}

AmplitudeSpectrum dft_amplitudes(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("dft_amplitudes expects [T,N], got " + shape_str(x.shape()));
  const std::size_t T = x.dim(0), N = x.dim(1);
  if (T < 2) throw ContractError("dft_amplitudes needs T >= 2, got " + std::to_string(T));
  const auto xd = x.data();
  AmplitudeSpectrum spec;
  spec.values.assign(T, 0.0);
  std::vector<cd> column(T);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t t = 0; t < T; ++t) column[t] = xd[t * N + n];
    const auto freq = fft(column);
    for (std::size_t f = 0; f < T; ++f) spec.values[f] += std::abs(freq[f]);
  }
  for (auto& v : spec.values) v /= static_cast<double>(N);
  return spec;
}

std::vector<PeriodDivision> select_top_k(const AmplitudeSpectrum& spectrum, std::size_t k) {
  if (k < 1) throw ContractError("select_top_k needs k >= 1");
  const std::size_t T = spectrum.window_len();
  if (T < 2) throw ContractError("spectrum too short for period selection");
  const std::size_t half = T / 2;
  const std::size_t want = std::min(k, half);

  std::vector<std::size_t> candidates(half);
  for (std::size_t f = 1; f <= half; ++f) candidates[f - 1] = f;
  std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
    return spectrum.values[a] > spectrum.values[b];
  });

  // Bins at transform roundoff relative to the strongest bin (DC included)
  // count as empty, so a constant window pads instead of ranking noise.
  const double floor = 1e-12 * *std::max_element(spectrum.values.begin(), spectrum.values.end());
  std::vector<std::size_t> chosen;
  for (std::size_t f : candidates) {
    if (chosen.size() == want) break;
    if (spectrum.values[f] > floor) chosen.push_back(f);
  }
  for (std::size_t f = 1; f <= half && chosen.size() < want; ++f)
    if (std::find(chosen.begin(), chosen.end(), f) == chosen.end()) chosen.push_back(f);

  std::vector<PeriodDivision> out;
  out.reserve(chosen.size());
  for (std::size_t f : chosen) out.push_back(make_division(T, f, spectrum.values[f]));
  return out;
}

Tensor fold_to_periods(const Tensor& x, const PeriodDivision& d) {
  if (x.rank() != 2) throw ShapeError("fold_to_periods expects [T,N], got " + shape_str(x.shape()));
  const std::size_t T = x.dim(0);
  const std::size_t padded = d.num_periods * d.period_len;
  if (d.period_len == 0 || padded < T || padded - T >= d.period_len)
    throw ContractError("division " + std::to_string(d.num_periods) + "x" +
                        std::to_string(d.period_len) + " inconsistent with T=" + std::to_string(T));
  Tensor padded_x = padded > T ? pad_rows(x, padded - T) : x;
  return reshape(padded_x, {d.num_periods, d.period_len, x.dim(1)});
}

Tensor unfold_from_periods(const Tensor& y, std::size_t window_len) {
  if (y.rank() != 3) throw ShapeError("unfold_from_periods expects [pn,pl,N], got " + shape_str(y.shape()));
  const std::size_t rows = y.dim(0) * y.dim(1);
  if (rows < window_len)
    throw ContractError("cannot unfold " + shape_str(y.shape()) + " to " +
                        std::to_string(window_len) + " rows");
  Tensor flat = reshape(y, {rows, y.dim(2)});
  return rows == window_len ? flat : slice_rows(flat, 0, window_len);
}

std::vector<double> aggregation_weights(const std::vector<PeriodDivision>& divisions) {
  if (divisions.empty()) throw ContractError("aggregation over zero divisions");
  double mx = divisions.front().amplitude;
  for (const auto& d : divisions) mx = std::max(mx, d.amplitude);
  std::vector<double> w;
  double z = 0.0;
  for (const auto& d : divisions) {
    w.push_back(std::exp(d.amplitude - mx));
    z += w.back();
  }
  for (auto& v : w) v /= z;
  return w;
}

Tensor spectral_amplitudes(const Tensor& x, std::span<const std::size_t> frequencies) {
  if (x.rank() != 2) throw ShapeError("spectral_amplitudes expects [T,N], got " + shape_str(x.shape()));
  const std::size_t T = x.dim(0);
  const std::size_t k = frequencies.size();
  // Real and imaginary parts at the requested bins via a direct sum.
  std::vector<double> cos_basis(k * T), sin_basis(k * T);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t t = 0; t < T; ++t) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((frequencies[i] * t) % T) /
                           static_cast<double>(T);
      cos_basis[i * T + t] = std::cos(angle);
      sin_basis[i * T + t] = std::sin(angle);
    }
  Tensor re = matmul(Tensor({k, T}, std::move(cos_basis)), x);  // [k,N]
  Tensor im = matmul(Tensor({k, T}, std::move(sin_basis)), x);
  Tensor magnitude = sqrt(add(mul(re, re), mul(im, im)));
  return mean(magnitude, 1);
}

Tensor adaptive_aggregate(const std::vector<Tensor>& outputs,
                          const std::vector<PeriodDivision>& divisions) {
  if (outputs.empty() || outputs.size() != divisions.size())
    throw ContractError("adaptive_aggregate needs matching non-empty lists, got " +
                        std::to_string(outputs.size()) + " outputs and " +
                        std::to_string(divisions.size()) + " divisions");
  const auto w = aggregation_weights(divisions);
  Tensor acc = scale(outputs[0], w[0]);
  for (std::size_t i = 1; i < outputs.size(); ++i) {
    if (outputs[i].shape() != outputs[0].shape())
      throw ShapeError("adaptive_aggregate shape mismatch: " + shape_str(outputs[0].shape()) +
                       " vs " + shape_str(outputs[i].shape()));
    acc = add(acc, scale(outputs[i], w[i]));
  }
  return acc;
}

Tensor adaptive_aggregate(const std::vector<Tensor>& outputs, const Tensor& weights) {
  if (outputs.empty() || weights.rank() != 1 || weights.dim(0) != outputs.size())
    throw ContractError("adaptive_aggregate needs one weight per output");
  Tensor acc = mul(outputs[0], slice_rows(weights, 0, 1));
  for (std::size_t i = 1; i < outputs.size(); ++i) {
    if (outputs[i].shape() != outputs[0].shape())
      throw ShapeError("adaptive_aggregate shape mismatch: " + shape_str(outputs[0].shape()) +
                       " vs " + shape_str(outputs[i].shape()));
    acc = add(acc, mul(outputs[i], slice_rows(weights, i, 1)));
  }
  return acc;
}

}  // namespace apslstm
