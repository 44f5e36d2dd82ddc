#pragma once

// Raw session parsing, sampling-rate estimation, rejection rules and
// per-subject annotation handling.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "miltremor/common.hpp"

namespace miltremor::ingest {

// One timestamped tri-axial recording as read from disk. Samples may contain
// NaN (missing values); timestamps and each axis have equal length.
struct RawSession {
  std::string subject_id;
  std::vector<double> timestamps;                // seconds, non-decreasing
  std::array<std::vector<double>, 3> samples;    // m/s^2, axis-major
  std::string source_path;

  size_t n() const { return timestamps.size(); }
  double duration() const {
    return timestamps.empty() ? 0.0 : timestamps.back() - timestamps.front();
  }
};

// A conditioned session: uniformly sampled at 100 Hz, no missing values.
struct Session {
  std::string subject_id;
  std::string session_id;  // source path, kept for instance provenance
  double fs = 100.0;
  std::array<std::vector<double>, 3> axes;

  size_t n() const { return axes[0].size(); }
  double duration() const { return static_cast<double>(n()) / fs; }
};

struct SubjectAnnotation {
  std::string subject_id;
  int updrs16 = 0;
  int updrs20_left = 0, updrs20_right = 0;
  int updrs21_left = 0, updrs21_right = 0;
  int sp_expert = 0;
};

enum class Scheme { updrs16, updrs20, updrs21, sp_expert };

const char* scheme_name(Scheme s);
Scheme scheme_from_name(const std::string& name);

// Binarized label: hand-score sums for updrs20/21, positivity for updrs16,
// passthrough for the expert annotation.
int binarize_annotation(const SubjectAnnotation& ann, Scheme scheme);

enum class RejectReason { none, too_short, low_rate, extreme_values, missing_values };

const char* reject_reason_name(RejectReason r);

struct RejectionReport {
  std::string session_path;
  bool accepted = false;
  RejectReason reason = RejectReason::none;
  // Filled for downstream use when available.
  double est_fs = 0.0;
  double duration = 0.0;
};

// 1 / median of consecutive timestamp differences.
double estimate_sampling_rate(std::span<const double> timestamps);

// Applies the rejection rules in order (too_short, low_rate, extreme_values,
// missing_values); the first failing rule is reported. Pure function.
RejectionReport validate_session(const RawSession& raw);

// Fraction of expected samples (at the estimated rate) that are absent or NaN.
double missing_fraction(const RawSession& raw, double est_fs);

inline constexpr double kMinDurationSec = 20.0;
inline constexpr double kMinRateHz = 50.0;
inline constexpr double kMaxAbsValue = 100.0;
inline constexpr double kMissingMax = 0.10;

struct ManifestEntry {
  SubjectAnnotation annotation;
  std::vector<std::string> session_ids;    // as written in the manifest
  std::vector<std::filesystem::path> session_paths;  // resolved against the manifest dir
};

// Manifest JSON: {"subjects":[{"id","updrs16","updrs20":[l,r],"updrs21":[l,r],
// "sp_expert","sessions":[...]}]}. Unknown fields are ignored, order kept.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

// Session CSV with header t,x,y,z. Empty or unparseable value fields become
// NaN; rows without a parseable timestamp are skipped.
RawSession read_session_csv(const std::filesystem::path& path, const std::string& subject_id,
                            const std::string& session_id);

}  // namespace miltremor::ingest
