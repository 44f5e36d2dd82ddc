#include "miltremor/dsp.hpp"

#include <algorithm>
#include <cmath>

namespace miltremor::dsp {

namespace {

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

double window_value(FirWindow w, int i, int n) {
  const double t = 2.0 * M_PI * i / (n - 1);
  switch (w) {
    case FirWindow::hamming:
      return 0.54 - 0.46 * std::cos(t);
    case FirWindow::blackman:
      return 0.42 - 0.5 * std::cos(t) + 0.08 * std::cos(2.0 * t);
  }
  return 1.0;
}

// Reflect an index into [0, n) about the edge samples.
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

std::vector<double> windowed_sinc_lowpass(int taps, double cutoff_hz, double fs, FirWindow window) {
  if (taps < 3 || taps % 2 == 0)
    throw Error(ErrorCode::precondition, "tap count must be odd and >= 3");
  if (cutoff_hz <= 0 || cutoff_hz >= fs / 2)
    throw Error(ErrorCode::precondition, "cutoff must lie in (0, fs/2)");
  const int center = taps / 2;
  const double fc = cutoff_hz / fs;
  std::vector<double> h(taps, 0.0);
  // Compute one half and mirror so the symmetry is bit-exact.
  for (int i = 0; i <= center; ++i) {
    const double v = window_value(window, i, taps) * 2.0 * fc * sinc(2.0 * fc * (i - center));
    h[i] = v;
    h[taps - 1 - i] = v;
  }
  double sum = 0.0;
  for (double v : h) sum += v;
  for (double& v : h) v /= sum;
  return h;
}

FirFilter design_highpass() {
  FirFilter f;
  f.cutoff_hz = 1.0;
  f.taps = windowed_sinc_lowpass(513, 1.0, 100.0, FirWindow::hamming);
  // Spectral inversion: H_hp(w) = 1 - H_lp(w).
  for (double& v : f.taps) v = -v;
  f.taps[256] += 1.0;
  return f;
}

std::vector<double> filter_reflect(std::span<const double> x, std::span<const double> taps) {
  const int64_t n = static_cast<int64_t>(x.size());
  const int64_t t = static_cast<int64_t>(taps.size());
  if (t % 2 == 0) throw Error(ErrorCode::precondition, "taps must have odd length");
  const int64_t half = t / 2;
  std::vector<double> padded(n + 2 * half);
  for (int64_t i = 0; i < n + 2 * half; ++i) padded[i] = x[reflect_index(i - half, n)];
  std::vector<double> out(n, 0.0);
  // Symmetric taps make correlation identical to convolution; the group delay
  // cancels because the kernel is centered on each output sample.
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* p = padded.data() + i;
    for (int64_t k = 0; k < t; ++k) acc += taps[k] * p[k];
    out[i] = acc;
  }
  return out;
}

Session remove_gravity(const Session& s, const FirFilter& f) {
  Session out;
  out.subject_id = s.subject_id;
  out.session_id = s.session_id;
  out.fs = s.fs;
  for (int a = 0; a < 3; ++a) out.axes[a] = filter_reflect(s.axes[a], f.taps);
  return out;
}

std::pair<int64_t, int64_t> rational_approx(double value, int64_t max_den) {
  if (value <= 0) throw Error(ErrorCode::precondition, "rational_approx needs a positive value");
  // Continued-fraction convergents with bounded denominator.
  int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double x = value;
  for (int iter = 0; iter < 64; ++iter) {
    const double fa = std::floor(x);
    const int64_t a = static_cast<int64_t>(fa);
    const int64_t p2 = a * p1 + p0;
    const int64_t q2 = a * q1 + q0;
    if (q2 > max_den) break;
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double rem = x - fa;
    if (rem < 1e-12) break;
    x = 1.0 / rem;
  }
  if (q1 == 0) throw Error(ErrorCode::precondition, "rational_approx failed");
  return {p1, q1};
}

namespace {

// Linear interpolation of one axis onto the uniform grid, skipping NaNs.
std::vector<double> interp_axis(const std::vector<double>& t, const std::vector<double>& v,
                                double t0, double dt, size_t count) {
  std::vector<double> ts, vs;
  ts.reserve(t.size());
  vs.reserve(t.size());
  for (size_t i = 0; i < t.size(); ++i)
    if (std::isfinite(v[i])) {
      ts.push_back(t[i]);
      vs.push_back(v[i]);
    }
  std::vector<double> out(count, 0.0);
  if (ts.empty()) return out;
  if (ts.size() == 1) {
    std::fill(out.begin(), out.end(), vs[0]);
    return out;
  }
  size_t j = 0;
  for (size_t i = 0; i < count; ++i) {
    const double g = t0 + static_cast<double>(i) * dt;
    while (j + 2 < ts.size() && ts[j + 1] <= g) ++j;
    const double span = ts[j + 1] - ts[j];
    double w = span > 0 ? (g - ts[j]) / span : 0.0;
    w = std::clamp(w, 0.0, 1.0);
    out[i] = vs[j] + w * (vs[j + 1] - vs[j]);
  }
  return out;
}

}  // namespace

Session resample_to_100hz(const RawSession& raw, double fs_est) {
  if (fs_est < ingest::kMinRateHz)
    throw Error(ErrorCode::precondition, "estimated rate below 50 Hz");
  if (raw.n() < 2) throw Error(ErrorCode::precondition, "need at least two samples");

  const double t0 = raw.timestamps.front();
  const double span = raw.timestamps.back() - t0;
  const size_t n_uniform = static_cast<size_t>(std::floor(span * fs_est)) + 1;

  std::array<std::vector<double>, 3> grid;
  for (int a = 0; a < 3; ++a)
    grid[a] = interp_axis(raw.timestamps, raw.samples[a], t0, 1.0 / fs_est, n_uniform);

  Session out;
  out.subject_id = raw.subject_id;
  out.session_id = raw.source_path;
  out.fs = 100.0;

  auto [p, q] = rational_approx(100.0 / fs_est, 1000);
  if (p == 1 && q == 1) {
    out.axes = std::move(grid);
    return out;
  }

  // Anti-alias low-pass at the upsampled rate fs_est * P.
  const double cutoff = 0.9 * std::min(50.0, fs_est / 2.0);
  const double trans_half = 0.1 * std::min(50.0, fs_est / 2.0);
  const int64_t l_half = static_cast<int64_t>(std::ceil(1.375 * fs_est / trans_half));
  const int64_t d = l_half * p;
  const double fs_up = fs_est * static_cast<double>(p);
  std::vector<double> taps =
      windowed_sinc_lowpass(static_cast<int>(2 * d + 1), cutoff, fs_up, FirWindow::blackman);
  // Normalize each polyphase branch to unit sum: a constant input then maps
  // to the same constant at every output phase.
  for (int64_t r = 0; r < p; ++r) {
    double s = 0.0;
    for (int64_t i = r; i < static_cast<int64_t>(taps.size()); i += p) s += taps[i];
    if (s != 0.0)
      for (int64_t i = r; i < static_cast<int64_t>(taps.size()); i += p) taps[i] /= s;
  }

  const double duration = (static_cast<double>(n_uniform) - 1.0) / fs_est;
  const size_t n_out = static_cast<size_t>(std::floor(duration * 100.0)) + 1;
  const int64_t nu = static_cast<int64_t>(n_uniform);

  for (int a = 0; a < 3; ++a) {
    const std::vector<double>& x = grid[a];
    std::vector<double> y(n_out, 0.0);
    for (size_t i = 0; i < n_out; ++i) {
      const int64_t m = static_cast<int64_t>(i) * q;  // index on the upsampled grid
      const int64_t j_lo = static_cast<int64_t>(std::ceil(double(m - d) / double(p)));
      const int64_t j_hi = static_cast<int64_t>(std::floor(double(m + d) / double(p)));
      double acc = 0.0;
      for (int64_t j = j_lo; j <= j_hi; ++j) {
        const int64_t tap = m - j * p + d;
        acc += taps[tap] * x[reflect_index(j, nu)];
      }
      y[i] = acc;
    }
    out.axes[a] = std::move(y);
  }
  return out;
}

Session trim_edges(const Session& s, double trim) {
  const size_t cut = static_cast<size_t>(std::llround(trim * s.fs));
  if (s.n() <= 2 * cut)
    throw Error(ErrorCode::too_short_after_trim,
                "session of " + std::to_string(s.duration()) + " s cannot lose 2x" +
                    std::to_string(trim) + " s");
  Session out;
  out.subject_id = s.subject_id;
  out.session_id = s.session_id;
  out.fs = s.fs;
  for (int a = 0; a < 3; ++a)
    out.axes[a].assign(s.axes[a].begin() + cut, s.axes[a].end() - cut);
  return out;
}

namespace {

struct WelchTables {
  std::array<double, kWelchWindow> hann;
  double scale;  // 1 / (fs * sum(w^2))
  // cos/sin tables for the 76 retained bins.
  std::array<std::array<double, kWelchWindow>, kSpectrumBins> cosw, sinw;

  WelchTables() {
    double wsum2 = 0.0;
    for (int i = 0; i < kWelchWindow; ++i) {
      hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / kWelchWindow);
      wsum2 += hann[i] * hann[i];
    }
    scale = 1.0 / (100.0 * wsum2);
    for (int k = 0; k < kSpectrumBins; ++k)
      for (int i = 0; i < kWelchWindow; ++i) {
        const double a = 2.0 * M_PI * k * i / kWelchWindow;
        cosw[k][i] = std::cos(a);
        sinw[k][i] = std::sin(a);
      }
  }
};

const WelchTables& welch_tables() {
  static const WelchTables tables;
  return tables;
}

void welch_axis_accumulate(std::span<const double> x, std::array<double, kSpectrumBins>& out) {
  const WelchTables& tb = welch_tables();
  const int hop = kWelchWindow - kWelchOverlap;
  const int count = (static_cast<int>(x.size()) - kWelchWindow) / hop + 1;
  std::array<double, kWelchWindow> buf;
  std::array<double, kSpectrumBins> acc{};
  for (int w = 0; w < count; ++w) {
    const double* seg = x.data() + static_cast<size_t>(w) * hop;
    for (int i = 0; i < kWelchWindow; ++i) buf[i] = seg[i] * tb.hann[i];
    for (int k = 0; k < kSpectrumBins; ++k) {
      double re = 0.0, im = 0.0;
      const double* c = tb.cosw[k].data();
      const double* s = tb.sinw[k].data();
      for (int i = 0; i < kWelchWindow; ++i) {
        re += buf[i] * c[i];
        im += buf[i] * s[i];
      }
      double p = (re * re + im * im) * tb.scale;
      if (k != 0) p *= 2.0;  // one-sided spectrum
      acc[k] += p;
    }
  }
  for (int k = 0; k < kSpectrumBins; ++k) out[k] += acc[k] / count;
}

}  // namespace

Spectrum welch_spectrum(std::span<const double> ax, std::span<const double> ay,
                        std::span<const double> az) {
  if (ax.size() != kSegmentSamples || ay.size() != kSegmentSamples || az.size() != kSegmentSamples)
    throw Error(ErrorCode::bad_window, "welch_spectrum expects 3 x 500 samples");
  Spectrum sp;
  welch_axis_accumulate(ax, sp.coefficients);
  welch_axis_accumulate(ay, sp.coefficients);
  welch_axis_accumulate(az, sp.coefficients);
  return sp;
}

double band_energy(const Spectrum& sp, double lo_hz, double hi_hz) {
  if (!(lo_hz < hi_hz) || lo_hz < 0.0 || hi_hz > 25.0)
    throw Error(ErrorCode::precondition, "band must satisfy 0 <= lo < hi <= 25");
  const int k_lo = static_cast<int>(std::ceil(lo_hz * 3.0 - 1e-9));
  const int k_hi = static_cast<int>(std::floor(hi_hz * 3.0 + 1e-9));
  double sum = 0.0;
  for (int k = std::max(0, k_lo); k <= std::min(kSpectrumBins - 1, k_hi); ++k)
    sum += sp.coefficients[k];
  return sum;
}

double total_energy(const Spectrum& sp) {
  double sum = 0.0;
  for (double v : sp.coefficients) sum += v;
  return sum;
}

}  // namespace miltremor::dsp
