#include "miltremor/synth.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "miltremor/dsp.hpp"

namespace miltremor::synth {

using nlohmann::json;

namespace {

constexpr int kFs = 100;
constexpr int kTrimSamples = 500;   // 5 s off each end
constexpr int kSegment = 500;
constexpr double kNoiseCutoffHz = 15.0;

void validate(const SynthSpec& s) {
  if (s.n_subjects < 1) throw Error(ErrorCode::precondition, "need at least one subject");
  if (s.positive_fraction < 0 || s.positive_fraction > 1)
    throw Error(ErrorCode::precondition, "positive_fraction must be in [0,1]");
  if (s.burst_fraction <= 0 || s.burst_fraction > 1)
    throw Error(ErrorCode::precondition, "burst_fraction must be in (0,1]");
  if (s.tremor_freq < 3.0 || s.tremor_freq > 7.0)
    throw Error(ErrorCode::precondition, "tremor_freq must lie in [3,7] Hz");
  if (s.sessions_per_subject < 1 || s.session_seconds <= 11.0)
    throw Error(ErrorCode::precondition, "sessions must exist and exceed the trim margins");
}

std::string subject_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "subj%02d", i + 1);
  return buf;
}

std::string session_rel_path(const std::string& subject, int call) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "call%02d.csv", call + 1);
  return "sessions/" + subject + "/" + buf;
}

}  // namespace

uint64_t spec_hash(const SynthSpec& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "synth:%d:%.9g:%d:%.9g:%.9g:%.9g:%.9g:%.9g:%llu", s.n_subjects,
                s.positive_fraction, s.sessions_per_subject, s.session_seconds, s.tremor_freq,
                s.tremor_amplitude, s.burst_fraction, s.noise_level,
                static_cast<unsigned long long>(s.seed));
  return fnv1a64(buf);
}

CorpusTruth generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  validate(spec);
  namespace fs = std::filesystem;

  const int n_samples = static_cast<int>(std::llround(spec.session_seconds * kFs));
  const int segs_per_session = (n_samples - 2 * kTrimSamples) / kSegment;
  if (segs_per_session < 1)
    throw Error(ErrorCode::precondition, "session too short to yield any segment after trimming");
  const int n_pos = static_cast<int>(std::llround(spec.n_subjects * spec.positive_fraction));

  // Noise shaping filter; white noise loses power through it, so rescale to
  // keep the requested standard deviation.
  const std::vector<double> lp =
      dsp::windowed_sinc_lowpass(129, kNoiseCutoffHz, kFs, dsp::FirWindow::hamming);
  double tap_sq = 0.0;
  for (double t : lp) tap_sq += t * t;
  const double noise_gain = 1.0 / std::sqrt(tap_sq);

  CorpusTruth truth;
  truth.tremor_freq = spec.tremor_freq;

  struct SubjectOut {
    std::string id;
    bool positive = false;
    std::vector<std::string> session_ids;
    std::map<std::string, std::vector<uint32_t>> bursts;
  };
  std::vector<SubjectOut> subjects(spec.n_subjects);

  parallel_for(static_cast<size_t>(spec.n_subjects), [&](size_t si) {
    SubjectOut& sub = subjects[si];
    sub.id = subject_name(static_cast<int>(si));
    sub.positive = static_cast<int>(si) < n_pos;
    Rng rng(derive_seed(spec.seed, si, 0xc0ffeeULL));

    // Choose burst segments across the whole subject pool.
    std::vector<std::pair<int, int>> burst_at;  // (session, segment)
    if (sub.positive) {
      std::vector<std::pair<int, int>> all;
      for (int m = 0; m < spec.sessions_per_subject; ++m)
        for (int g = 0; g < segs_per_session; ++g) all.emplace_back(m, g);
      rng.shuffle(all);
      const int total = static_cast<int>(all.size());
      int n_bursts = static_cast<int>(std::llround(spec.burst_fraction * total));
      n_bursts = std::clamp(n_bursts, 1, total);
      burst_at.assign(all.begin(), all.begin() + n_bursts);
      std::sort(burst_at.begin(), burst_at.end());
    }

    for (int m = 0; m < spec.sessions_per_subject; ++m) {
      const std::string rel = session_rel_path(sub.id, m);
      sub.session_ids.push_back(rel);

      std::array<std::vector<double>, 3> axes;
      for (int a = 0; a < 3; ++a) {
        std::vector<double> white(n_samples);
        for (double& v : white) v = rng.normal() * spec.noise_level;
        axes[a] = dsp::filter_reflect(white, lp);
        for (double& v : axes[a]) v *= noise_gain;
      }
      for (double& v : axes[2]) v += 9.81;  // gravity on z

      for (const auto& [bm, bg] : burst_at) {
        if (bm != m) continue;
        const int start = kTrimSamples + bg * kSegment;
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        double dir[3] = {rng.normal(), rng.normal(), rng.normal()};
        const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        for (double& d : dir) d /= norm > 0 ? norm : 1.0;
        for (int j = 0; j < kSegment; ++j) {
          const double env = 0.5 - 0.5 * std::cos(2.0 * M_PI * j / (kSegment - 1));
          const double v = spec.tremor_amplitude * env *
                           std::sin(2.0 * M_PI * spec.tremor_freq * j / kFs + phase);
          for (int a = 0; a < 3; ++a) axes[a][start + j] += v * dir[a];
        }
        sub.bursts[rel].push_back(static_cast<uint32_t>(bg * kSegment));
      }

      std::string csv = "t,x,y,z\n";
      csv.reserve(static_cast<size_t>(n_samples) * 44 + 16);
      char line[128];
      for (int i = 0; i < n_samples; ++i) {
        std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f,%.6f\n", static_cast<double>(i) / kFs,
                      axes[0][i], axes[1][i], axes[2][i]);
        csv += line;
      }
      write_file_atomic(out_dir / rel, csv);
    }
  });

  json manifest_subjects = json::array();
  for (const SubjectOut& sub : subjects) {
    const int label = sub.positive ? 1 : 0;
    manifest_subjects.push_back(json{{"id", sub.id},
                                     {"updrs16", label},
                                     {"updrs20", {label, 0}},
                                     {"updrs21", {label, 0}},
                                     {"sp_expert", label},
                                     {"sessions", sub.session_ids}});
    if (sub.positive) truth.positive_subjects.push_back(sub.id);
    for (const auto& [sid, offs] : sub.bursts) truth.bursts[sid] = offs;
  }
  json manifest{{"config_hash", hex64(spec_hash(spec))}, {"subjects", manifest_subjects}};
  write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");

  json jb = json::object();
  for (const auto& [sid, offs] : truth.bursts) jb[sid] = offs;
  json jt{{"config_hash", hex64(spec_hash(spec))},
          {"positive_subjects", truth.positive_subjects},
          {"tremor_freq", truth.tremor_freq},
          {"bursts", jb}};
  write_file_atomic(out_dir / "truth.json", jt.dump(2) + "\n");
  return truth;
}

CorpusTruth load_truth(const std::filesystem::path& truth_json) {
  json doc;
  try {
    doc = json::parse(read_file(truth_json));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, "truth file: " + std::string(e.what()));
  }
  CorpusTruth t;
  t.tremor_freq = doc.value("tremor_freq", 0.0);
  for (const auto& s : doc["positive_subjects"]) t.positive_subjects.push_back(s.get<std::string>());
  for (const auto& [key, offs] : doc["bursts"].items()) {
    std::vector<uint32_t> v;
    for (const auto& o : offs) v.push_back(o.get<uint32_t>());
    t.bursts[key] = v;
  }
  return t;
}

}  // namespace miltremor::synth
