#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

namespace twinforge {

// In-place radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

struct Psd {
  Eigen::VectorXd freq_hz;
  Eigen::VectorXd power;
};

// One-sided Welch power spectral density: Hann (periodic) window, 50%
// overlap, per-block mean removal, density scaling.  Blocks shrink to the
// largest power of two <= min(nseg, len(x)).
Psd welch_psd(const Eigen::VectorXd& x, double fs, int nseg = 256);

// Interior local maxima ranked by power (descending), ties toward lower
// frequency, greedily thinned to a minimum index separation.
std::vector<int> psd_peak_indices(const Eigen::VectorXd& power, int min_separation = 2);

}  // namespace twinforge
