#pragma once

// Signal conditioning (resampling, trimming, gravity removal) and spectral
// features (summed-axes Welch PSD, band energies).

#include <array>
#include <span>
#include <vector>

#include "miltremor/ingest.hpp"

namespace miltremor::dsp {

using ingest::RawSession;
using ingest::Session;

inline constexpr int kSegmentSamples = 500;   // W
inline constexpr int kWelchWindow = 300;      // 3 s at 100 Hz
inline constexpr int kWelchOverlap = 225;     // 75%
inline constexpr int kSpectrumBins = 76;      // [0, 25] Hz at 1/3 Hz
inline constexpr double kBinHz = 1.0 / 3.0;

// Summed-axes Welch PSD truncated to [0, 25] Hz.
struct Spectrum {
  std::array<double, kSpectrumBins> coefficients{};
};

struct FirFilter {
  std::vector<double> taps;  // odd length, symmetric (linear phase)
  double cutoff_hz = 0.0;
};

enum class FirWindow { hamming, blackman };

// Odd-length windowed-sinc low-pass, normalized to unit DC gain. Taps are
// mirrored from one half so taps[i] == taps[n-1-i] holds exactly.
std::vector<double> windowed_sinc_lowpass(int taps, double cutoff_hz, double fs, FirWindow window);

// Order-512 high-pass at 1 Hz (fs 100): spectrally inverted Hamming sinc.
FirFilter design_highpass();

// Zero-phase filtering with reflection padding; output length equals input.
std::vector<double> filter_reflect(std::span<const double> x, std::span<const double> taps);

// Removes the gravitational component from all three axes.
Session remove_gravity(const Session& s, const FirFilter& f);

// Linear interpolation onto a uniform grid at fs_est, then rational-ratio
// conversion fs_est -> 100 Hz (upsample P, low-pass, downsample Q).
Session resample_to_100hz(const RawSession& raw, double fs_est);

// Drops `trim` seconds from both ends of every axis.
Session trim_edges(const Session& s, double trim = 5.0);

// Welch PSD of one 3 x 500 segment at 100 Hz: per axis 300-sample Hann
// windows with 225-sample overlap, averaged, summed over axes, bins 0..75.
Spectrum welch_spectrum(std::span<const double> ax, std::span<const double> ay,
                        std::span<const double> az);

// Sum of coefficients for bins with lo <= k/3 <= hi (inclusive).
double band_energy(const Spectrum& sp, double lo_hz = 3.0, double hi_hz = 7.0);

// Sum of all 76 coefficients.
double total_energy(const Spectrum& sp);

// Best rational approximation p/q of `value` with q <= max_den.
std::pair<int64_t, int64_t> rational_approx(double value, int64_t max_den);

}  // namespace miltremor::dsp
