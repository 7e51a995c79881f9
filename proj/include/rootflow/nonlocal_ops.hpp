#pragma once

// Periodic Hilbert transform and half Laplacian on a uniform circle grid.
//
//   H[u](y)   = 1/(2pi) P.V. int cot((y - x)/2) u(x) dx           multiplier -i sgn(k)
//   A0[f](th) = 1/(8pi) int (2f(th) - f(th - t) - f(th + t)) / sin^2(t/2) dt   multiplier |k|
//
// Two backends compute the same discrete operators by different routes:
//
//   spectral    FFT, multiply, inverse FFT (O(M log M)). H drops the Nyquist
//               mode, A0 keeps it with multiplier M/2.
//   quadrature  direct O(M^2) sums of the alternating-point trapezoid rule,
//               which samples the kernel only at odd offsets t = (2l+1) 2pi/M
//               and so never touches the singular node. The rule is exact for
//               trigonometric polynomials of degree < M/2.
//
// The quadrature form of A0 makes the sign structure visible: every
// off-diagonal weight is <= 0, so A0 at a discrete maximum is >= 0.

#include <algorithm>
#include <cmath>
#include <complex>
#include <concepts>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "rootflow/circle_measures.hpp"
#include "rootflow/error.hpp"
#include "rootflow/parallel.hpp"

namespace rootflow {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Uniform grid theta_j = 2 pi j / M with M a power of two, M >= 8.
class SpectralGrid {
 public:
  explicit SpectralGrid(std::size_t M) : M_(M) {
    detail::require(M >= 8 && is_power_of_two(M), ErrorKind::Config, "grid size must be a power of two >= 8");
  }
  std::size_t size() const { return M_; }
  double node(long j) const { return grid_node(j, M_); }
  /// Signed Fourier mode stored at FFT index i, in {-M/2+1, ..., M/2}.
  long mode(std::size_t i) const {
    auto k = static_cast<long>(i);
    auto half = static_cast<long>(M_ / 2);
    return k <= half ? k : k - static_cast<long>(M_);
  }

 private:
  std::size_t M_;
};

enum class BackendKind { spectral, quadrature };

inline const char* to_string(BackendKind k) { return k == BackendKind::spectral ? "spectral" : "quadrature"; }

inline BackendKind backend_from_string(const std::string& s) {
  if (s == "spectral") return BackendKind::spectral;
  if (s == "quadrature") return BackendKind::quadrature;
  detail::fail(ErrorKind::Config, "unknown operator backend '" + s + "'");
}

struct OperatorBackend {
  BackendKind kind = BackendKind::spectral;
  std::optional<double> delta;          // split radius for I1 / I2
  double quadrature_tolerance = 1e-13;  // adaptive Gauss-Kronrod target for the split integrals
};

namespace detail {

/// Cached FFTW r2c / c2r plan pair for one size. Plans are created under a
/// lock; execution uses the new-array interface and is thread safe.
class RealFft {
 public:
  static const RealFft& get(std::size_t M) {
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<RealFft>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[M];
    if (!slot) slot.reset(new RealFft(M));
    return *slot;
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  /// Coefficients c_k, k = 0..M/2, of u_j = sum_k c_k e^{i k theta_j} (unnormalised).
  std::vector<std::complex<double>> forward(std::span<const double> u) const {
    std::vector<double> in(u.begin(), u.end());
    std::vector<std::complex<double>> out(M_ / 2 + 1);
    fftw_execute_dft_r2c(forward_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
    return out;
  }

  /// Inverse of forward, including the 1/M normalisation.
  std::vector<double> inverse(std::vector<std::complex<double>> c) const {
    std::vector<double> out(M_);
    fftw_execute_dft_c2r(backward_, reinterpret_cast<fftw_complex*>(c.data()), out.data());
    const double scale = 1.0 / static_cast<double>(M_);
    for (double& v : out) v *= scale;
    return out;
  }

 private:
  explicit RealFft(std::size_t M) : M_(M) {
    std::vector<double> in(M);
    std::vector<std::complex<double>> out(M / 2 + 1);
    const int n = static_cast<int>(M);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft_r2c_1d(n, in.data(), reinterpret_cast<fftw_complex*>(out.data()), flags);
    backward_ = fftw_plan_dft_c2r_1d(n, reinterpret_cast<fftw_complex*>(out.data()), in.data(),
                                     flags | FFTW_DESTROY_INPUT);
    if (!forward_ || !backward_) fail(ErrorKind::Numerical, "FFTW plan creation failed");
  }

  std::size_t M_;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

template <class Multiplier>
std::vector<double> apply_multiplier(std::span<const double> u, Multiplier&& sigma) {
  SpectralGrid grid(u.size());
  const auto& fft = RealFft::get(u.size());
  auto c = fft.forward(u);
  for (std::size_t k = 0; k < c.size(); ++k) c[k] *= sigma(static_cast<long>(k), k + 1 == c.size());
  return fft.inverse(std::move(c));
}

/// Alternating-point weights for odd offsets l = 1, 3, ..., M-1.
struct OddOffsetWeights {
  std::vector<std::size_t> offsets;
  std::vector<double> cot;    // (2/M) cot(pi l / M)
  std::vector<double> csc2;   // (1/(2M)) / sin^2(pi l / M)

  static const OddOffsetWeights& get(std::size_t M) {
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<OddOffsetWeights>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[M];
    if (!slot) {
      slot = std::make_unique<OddOffsetWeights>();
      const double Md = static_cast<double>(M);
      for (std::size_t l = 1; l < M; l += 2) {
        double a = kPi * static_cast<double>(l) / Md;
        double s = std::sin(a);
        slot->offsets.push_back(l);
        slot->cot.push_back(2.0 / Md * std::cos(a) / s);
        slot->csc2.push_back(0.5 / Md / (s * s));
      }
    }
    return *slot;
  }
};

}  // namespace detail

/// Spectral derivative (multiplier i k, Nyquist mode dropped).
inline std::vector<double> spectral_derivative(std::span<const double> u) {
  return detail::apply_multiplier(u, [](long k, bool nyquist) -> std::complex<double> {
    if (nyquist) return 0.0;
    return {0.0, static_cast<double>(k)};
  });
}

inline std::vector<double> hilbert_transform(std::span<const double> u, const OperatorBackend& backend = {}) {
  const std::size_t M = u.size();
  SpectralGrid grid(M);
  if (backend.kind == BackendKind::spectral) {
    return detail::apply_multiplier(u, [](long k, bool nyquist) -> std::complex<double> {
      if (k == 0 || nyquist) return 0.0;
      return {0.0, -1.0};
    });
  }
  const auto& w = detail::OddOffsetWeights::get(M);
  std::vector<double> out(M);
  parallel_for(M, [&](std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.offsets.size(); ++i) {
      std::size_t src = (j + M - w.offsets[i]) % M;
      s += w.cot[i] * (u[src] - u[j]);
    }
    out[j] = s;
  });
  return out;
}

/// A0 of periodic samples.
inline std::vector<double> half_laplacian(std::span<const double> f, const OperatorBackend& backend = {}) {
  const std::size_t M = f.size();
  SpectralGrid grid(M);
  if (backend.kind == BackendKind::spectral) {
    return detail::apply_multiplier(f, [](long k, bool) -> std::complex<double> { return static_cast<double>(k); });
  }
  const auto& w = detail::OddOffsetWeights::get(M);
  std::vector<double> out(M);
  parallel_for(M, [&](std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.offsets.size(); ++i) {
      std::size_t l = w.offsets[i];
      s += w.csc2[i] * (2.0 * f[j] - f[(j + M - l) % M] - f[(j + l) % M]);
    }
    out[j] = s;
  });
  return out;
}

/// A0 of a CDF. The unit ramp is affine, so its symmetric second difference
/// vanishes identically and only the periodic part is transformed.
inline std::vector<double> half_laplacian(const CdfField& F, const OperatorBackend& backend = {}) {
  return half_laplacian(std::span<const double>(F.periodic()), backend);
}

/// Band-limited interpolant of periodic samples, evaluable anywhere.
class TrigInterpolant {
 public:
  explicit TrigInterpolant(std::span<const double> u) : M_(u.size()) {
    SpectralGrid grid(M_);
    coeffs_ = detail::RealFft::get(M_).forward(u);
    const double scale = 1.0 / static_cast<double>(M_);
    for (auto& c : coeffs_) c *= scale;
  }

  double operator()(double theta) const {
    double s = coeffs_[0].real();
    const std::size_t half = M_ / 2;
    for (std::size_t k = 1; k < half; ++k) {
      double a = static_cast<double>(k) * theta;
      s += 2.0 * (coeffs_[k].real() * std::cos(a) - coeffs_[k].imag() * std::sin(a));
    }
    s += coeffs_[half].real() * std::cos(static_cast<double>(half) * theta);
    return s;
  }

 private:
  std::size_t M_;
  std::vector<std::complex<double>> coeffs_;
};

struct SplitResult {
  double i1 = 0.0;  // |t| <= delta: local, second-difference part
  double i2 = 0.0;  // |t| > delta: regular remainder
  double total() const { return i1 + i2; }
};

/// I1 and I2 of A0 at theta for any callable f (only the symmetric second
/// difference is used, so f may carry an affine part).
template <class Fn>
  requires std::invocable<Fn, double>
SplitResult split_I1_I2(Fn&& f, double theta, double delta, double tolerance = 1e-13) {
  detail::require(delta > 0.0 && delta <= kPi, ErrorKind::Config, "split radius must lie in (0, pi]");
  const double f0 = f(theta);
  auto integrand = [&](double t) {
    double s = std::sin(0.5 * t);
    return (2.0 * f0 - f(theta - t) - f(theta + t)) / (s * s);
  };
  // the integrand is even in t: (1/8pi) int_{|t|<...} = (1/4pi) int_0^...
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  SplitResult r;
  r.i1 = GK::integrate(integrand, 0.0, delta, 10, tolerance) / (4.0 * kPi);
  r.i2 = delta < kPi ? GK::integrate(integrand, delta, kPi, 10, tolerance) / (4.0 * kPi) : 0.0;
  return r;
}

/// Split at grid node j of periodic samples, through their band-limited interpolant.
inline SplitResult split_I1_I2(std::span<const double> samples, std::size_t node, double delta,
                               double tolerance = 1e-13) {
  detail::require(node < samples.size(), ErrorKind::Shape, "node index out of range");
  TrigInterpolant interp(samples);
  return split_I1_I2(interp, grid_node(static_cast<long>(node), samples.size()), delta, tolerance);
}

/// max_j |A0[f] - H[f']| with f' the spectral derivative.
inline double a0_equals_h_of_derivative_check(std::span<const double> f, const OperatorBackend& backend = {}) {
  auto a0 = half_laplacian(f, backend);
  auto df = spectral_derivative(f);
  auto hdf = hilbert_transform(df, backend);
  double dev = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) dev = std::max(dev, std::abs(a0[j] - hdf[j]));
  return dev;
}

struct MultiplierRow {
  std::string op;  // "H[cos]", "H[sin]", "A0[cos]"
  long k = 0;
  double max_error = 0.0;
};

struct OperatorReport {
  std::string backend;
  std::size_t M = 0;
  long kmax = 0;
  std::vector<MultiplierRow> rows;
  double max_multiplier_error = 0.0;
  double ramp_residual = 0.0;        // max |A0[ramp]|
  double a0_minus_h_derivative = 0.0;
  // normalisations checked by the table above
  double hilbert_prefactor = 1.0 / kTwoPi;
  double half_laplacian_prefactor = 1.0 / (8.0 * kPi);
};

/// Checks H[cos k] = sin k, H[sin k] = -cos k, A0[cos k] = k cos k for
/// k = 0..kmax, A0 of the pure ramp, and A0 = H o d/dtheta on a mixed mode sum.
inline OperatorReport operator_self_test(std::size_t M, long kmax, const OperatorBackend& backend) {
  SpectralGrid grid(M);
  detail::require(kmax >= 0 && static_cast<std::size_t>(kmax) < M / 2, ErrorKind::Config,
                  "kmax must be below the Nyquist mode");
  OperatorReport rep;
  rep.backend = to_string(backend.kind);
  rep.M = M;
  rep.kmax = kmax;
  std::vector<double> c(M), s(M);
  for (long k = 0; k <= kmax; ++k) {
    for (std::size_t j = 0; j < M; ++j) {
      double th = grid.node(static_cast<long>(j));
      c[j] = std::cos(static_cast<double>(k) * th);
      s[j] = std::sin(static_cast<double>(k) * th);
    }
    auto hc = hilbert_transform(c, backend);
    auto hs = hilbert_transform(s, backend);
    auto ac = half_laplacian(c, backend);
    double e1 = 0, e2 = 0, e3 = 0;
    for (std::size_t j = 0; j < M; ++j) {
      e1 = std::max(e1, std::abs(hc[j] - (k == 0 ? 0.0 : s[j])));
      e2 = std::max(e2, std::abs(hs[j] + (k == 0 ? 0.0 : c[j])));
      e3 = std::max(e3, std::abs(ac[j] - static_cast<double>(k) * c[j]));
    }
    rep.rows.push_back({"H[cos]", k, e1});
    rep.rows.push_back({"H[sin]", k, e2});
    rep.rows.push_back({"A0[cos]", k, e3});
    rep.max_multiplier_error = std::max({rep.max_multiplier_error, e1, e2, e3});
  }
  for (double v : half_laplacian(CdfField::ramp(M), backend)) rep.ramp_residual = std::max(rep.ramp_residual, std::abs(v));
  std::vector<double> mix(M);
  for (std::size_t j = 0; j < M; ++j) {
    double th = grid.node(static_cast<long>(j));
    mix[j] = std::cos(th) + 0.5 * std::sin(2.0 * th) - 0.25 * std::cos(static_cast<double>(std::max<long>(kmax, 3)) * th);
  }
  rep.a0_minus_h_derivative = a0_equals_h_of_derivative_check(mix, backend);
  return rep;
}

}  // namespace rootflow
