#include "miltremor/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

namespace miltremor::ingest {

using nlohmann::json;

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::updrs16: return "updrs16";
    case Scheme::updrs20: return "updrs20";
    case Scheme::updrs21: return "updrs21";
    case Scheme::sp_expert: return "sp_expert";
  }
  return "?";
}

Scheme scheme_from_name(const std::string& name) {
  if (name == "updrs16") return Scheme::updrs16;
  if (name == "updrs20") return Scheme::updrs20;
  if (name == "updrs21") return Scheme::updrs21;
  if (name == "sp_expert") return Scheme::sp_expert;
  throw Error(ErrorCode::bad_config, "unknown annotation scheme: " + name);
}

const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::none: return "none";
    case RejectReason::too_short: return "too_short";
    case RejectReason::low_rate: return "low_rate";
    case RejectReason::extreme_values: return "extreme_values";
    case RejectReason::missing_values: return "missing_values";
  }
  return "?";
}

int binarize_annotation(const SubjectAnnotation& ann, Scheme scheme) {
  switch (scheme) {
    case Scheme::updrs16: return ann.updrs16 > 0 ? 1 : 0;
    case Scheme::updrs20: return ann.updrs20_left + ann.updrs20_right > 0 ? 1 : 0;
    case Scheme::updrs21: return ann.updrs21_left + ann.updrs21_right > 0 ? 1 : 0;
    case Scheme::sp_expert: return ann.sp_expert ? 1 : 0;
  }
  return 0;
}

double estimate_sampling_rate(std::span<const double> timestamps) {
  if (timestamps.size() < 2)
    throw Error(ErrorCode::insufficient_data, "need at least two timestamps");
  std::vector<double> diffs(timestamps.size() - 1);
  for (size_t i = 0; i + 1 < timestamps.size(); ++i) diffs[i] = timestamps[i + 1] - timestamps[i];
  const size_t mid = diffs.size() / 2;
  std::nth_element(diffs.begin(), diffs.begin() + mid, diffs.end());
  double med = diffs[mid];
  if (diffs.size() % 2 == 0) {
    const double lower = *std::max_element(diffs.begin(), diffs.begin() + mid);
    med = 0.5 * (lower + med);
  }
  if (!(med > 0.0))
    throw Error(ErrorCode::degenerate_clock, "median timestamp difference is not positive");
  return 1.0 / med;
}

double missing_fraction(const RawSession& raw, double est_fs) {
  const double expected = std::floor(raw.duration() * est_fs) + 1.0;
  if (expected <= 0) return 1.0;
  double present = 0;
  for (size_t i = 0; i < raw.n(); ++i) {
    const bool ok = std::isfinite(raw.samples[0][i]) && std::isfinite(raw.samples[1][i]) &&
                    std::isfinite(raw.samples[2][i]);
    if (ok) present += 1.0;
  }
  return std::max(0.0, (expected - present) / expected);
}

RejectionReport validate_session(const RawSession& raw) {
  RejectionReport rep;
  rep.session_path = raw.source_path;
  rep.duration = raw.duration();

  if (rep.duration < kMinDurationSec) {
    rep.reason = RejectReason::too_short;
    return rep;
  }
  double fs = 0.0;
  try {
    fs = estimate_sampling_rate(raw.timestamps);
  } catch (const Error&) {
    // Unusable clock: the rate criterion cannot be met.
    rep.reason = RejectReason::low_rate;
    return rep;
  }
  rep.est_fs = fs;
  if (fs < kMinRateHz) {
    rep.reason = RejectReason::low_rate;
    return rep;
  }
  for (int a = 0; a < 3; ++a)
    for (double v : raw.samples[a])
      if (std::isfinite(v) && std::fabs(v) > kMaxAbsValue) {
        rep.reason = RejectReason::extreme_values;
        return rep;
      }
  if (missing_fraction(raw, fs) > kMissingMax) {
    rep.reason = RejectReason::missing_values;
    return rep;
  }
  rep.accepted = true;
  return rep;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, "manifest " + path.string() + ": " + e.what());
  }
  if (!doc.contains("subjects") || !doc["subjects"].is_array())
    throw Error(ErrorCode::parse, "manifest missing \"subjects\" array");

  const std::filesystem::path base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::vector<std::string> seen;
  for (const json& s : doc["subjects"]) {
    ManifestEntry e;
    if (!s.contains("id") || !s["id"].is_string())
      throw Error(ErrorCode::parse, "subject entry without string id");
    e.annotation.subject_id = s["id"].get<std::string>();
    if (std::find(seen.begin(), seen.end(), e.annotation.subject_id) != seen.end())
      throw Error(ErrorCode::duplicate_subject, e.annotation.subject_id);
    seen.push_back(e.annotation.subject_id);

    const bool annotated = s.contains("updrs16") && s.contains("updrs20") &&
                           s.contains("updrs21") && s.contains("sp_expert");
    if (!annotated)
      throw Error(ErrorCode::unannotated_subject,
                  e.annotation.subject_id + " lacks one of updrs16/updrs20/updrs21/sp_expert");
    try {
      e.annotation.updrs16 = s["updrs16"].get<int>();
      e.annotation.updrs20_left = s["updrs20"].at(0).get<int>();
      e.annotation.updrs20_right = s["updrs20"].at(1).get<int>();
      e.annotation.updrs21_left = s["updrs21"].at(0).get<int>();
      e.annotation.updrs21_right = s["updrs21"].at(1).get<int>();
      e.annotation.sp_expert = s["sp_expert"].get<int>();
      if (s.contains("sessions"))
        for (const json& p : s["sessions"]) e.session_ids.push_back(p.get<std::string>());
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::parse, "subject " + e.annotation.subject_id + ": " + ex.what());
    }
    for (const std::string& id : e.session_ids) {
      std::filesystem::path sp(id);
      e.session_paths.push_back(sp.is_absolute() ? sp : base / sp);
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

double parse_field(const std::string& field) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str()) return std::numeric_limits<double>::quiet_NaN();
  return v;
}

}  // namespace

RawSession read_session_csv(const std::filesystem::path& path, const std::string& subject_id,
                            const std::string& session_id) {
  const std::string text = read_file(path);
  RawSession raw;
  raw.subject_id = subject_id;
  raw.source_path = session_id;

  size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      std::string squished;
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) squished.push_back(c);
      if (squished != "t,x,y,z")
        throw Error(ErrorCode::parse, path.string() + ": expected header t,x,y,z");
      header = false;
      continue;
    }
    std::array<std::string, 4> fields;
    size_t f = 0, start = 0;
    for (size_t i = 0; i <= line.size() && f < 4; ++i) {
      if (i == line.size() || line[i] == ',') {
        fields[f++] = line.substr(start, i - start);
        start = i + 1;
      }
    }
    const double t = parse_field(fields[0]);
    if (!std::isfinite(t)) continue;  // row without a usable timestamp
    raw.timestamps.push_back(t);
    raw.samples[0].push_back(parse_field(fields[1]));
    raw.samples[1].push_back(parse_field(fields[2]));
    raw.samples[2].push_back(parse_field(fields[3]));
  }
  if (header) throw Error(ErrorCode::parse, path.string() + ": empty file");
  return raw;
}

}  // namespace miltremor::ingest
