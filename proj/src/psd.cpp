#include "twinforge/psd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace twinforge {

void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::runtime_error("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

namespace {
int prev_pow2(int n) {
  int p = 1;
  while (p * 2 <= n) p *= 2;
  return p;
}
}  // namespace

Psd welch_psd(const Eigen::VectorXd& x, double fs, int nseg) {
  if (x.size() < 16) throw std::runtime_error("welch_psd: input too short");
  if (fs <= 0.0) throw std::runtime_error("welch_psd: sample rate must be positive");
  const int n = static_cast<int>(x.size());
  const int seg = prev_pow2(std::min(nseg, n));
  const int step = seg / 2;  // 50% overlap
  const int nwin = (n - seg) / step + 1;

  Eigen::VectorXd window(seg);
  for (int i = 0; i < seg; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / seg));
  }
  const double win_power = window.squaredNorm();

  const int nbins = seg / 2 + 1;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(nbins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(seg));
  for (int w = 0; w < nwin; ++w) {
    const auto block = x.segment(w * step, seg);
    const double mean = block.mean();
    for (int i = 0; i < seg; ++i) buf[static_cast<std::size_t>(i)] = {(block[i] - mean) * window[i], 0.0};
    fft_radix2(buf);
    for (int k = 0; k < nbins; ++k) acc[k] += std::norm(buf[static_cast<std::size_t>(k)]);
  }

  Psd out;
  out.freq_hz.resize(nbins);
  out.power.resize(nbins);
  const double scale = 1.0 / (fs * win_power * nwin);
  for (int k = 0; k < nbins; ++k) {
    out.freq_hz[k] = static_cast<double>(k) * fs / seg;
    double p = acc[k] * scale;
    if (k != 0 && k != seg / 2) p *= 2.0;  // one-sided
    out.power[k] = p;
  }
  return out;
}

std::vector<int> psd_peak_indices(const Eigen::VectorXd& power, int min_separation) {
  std::vector<int> candidates;
  for (int i = 1; i + 1 < power.size(); ++i) {
    if (power[i] > power[i - 1] && power[i] >= power[i + 1]) candidates.push_back(i);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&power](int a, int b) {
    if (power[a] != power[b]) return power[a] > power[b];
    return a < b;
  });
  std::vector<int> picked;
  for (int c : candidates) {
    bool ok = true;
    for (int p : picked) {
      if (std::abs(c - p) < min_separation) {
        ok = false;
        break;
      }
    }
    if (ok) picked.push_back(c);
  }
  return picked;
}

}  // namespace twinforge
