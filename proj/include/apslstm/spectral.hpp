#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "apslstm/tensor.hpp"

namespace apslstm {

/// One way of folding a length-T window: `num_periods` rows of `period_len`
/// steps, chosen because integer frequency `frequency` carries `amplitude`.
struct PeriodDivision {
  std::size_t frequency = 1;
  std::size_t period_len = 1;
  std::size_t num_periods = 1;
  double amplitude = 0.0;

  bool operator==(const PeriodDivision&) const = default;
};

// period_len = ceil(T / f), num_periods = ceil(T / period_len).
PeriodDivision make_division(std::size_t window_len, std::size_t frequency, double amplitude);

/// Station-averaged DFT magnitude per integer frequency 0..T-1.
struct AmplitudeSpectrum {
  std::vector<double> values;

  std::size_t window_len() const { return values.size(); }
};

// Discrete Fourier transform of arbitrary length (mixed radix, Bluestein for
// prime factors above a small cutoff).
std::vector<std::complex<double>> fft(std::span<const std::complex<double>> input);

// x: [T,N]. Computed on values only; nothing is recorded on the graph.
AmplitudeSpectrum dft_amplitudes(const Tensor& x);

// k strongest frequencies in 1..floor(T/2), ties toward the lower index.
// Always returns min(k, floor(T/2)) divisions, padding with the lowest unused
// frequencies when fewer than k candidates carry energy. A bin carries energy
// when it exceeds 1e-12 times the largest bin.
std::vector<PeriodDivision> select_top_k(const AmplitudeSpectrum& spectrum, std::size_t k);

// [T,N] -> [pn,pl,N], zero padding appended after the last time step.
Tensor fold_to_periods(const Tensor& x, const PeriodDivision& division);
// [pn,pl,N] -> [T,N], dropping the padded tail.
Tensor unfold_from_periods(const Tensor& y, std::size_t window_len);

// Softmax over the division amplitudes.
std::vector<double> aggregation_weights(const std::vector<PeriodDivision>& divisions);

// Station-averaged amplitudes of x at the given frequencies, differentiable in x.
Tensor spectral_amplitudes(const Tensor& x, std::span<const std::size_t> frequencies);

// Sum of outputs[i] * softmax(amplitudes)[i]; weights are constants.
Tensor adaptive_aggregate(const std::vector<Tensor>& outputs,
                          const std::vector<PeriodDivision>& divisions);
// Same, with a caller-supplied (possibly differentiable) weight vector [k].
Tensor adaptive_aggregate(const std::vector<Tensor>& outputs, const Tensor& weights);

}  // namespace apslstm
