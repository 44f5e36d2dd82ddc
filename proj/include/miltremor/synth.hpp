#pragma once

// Synthetic corpus generation: band-limited noise sessions for every subject,
// plus amplitude-modulated tremor-band bursts in a fraction of the segments
// of positive subjects. Ground truth (labels and burst placement) is written
// alongside the corpus.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "miltremor/common.hpp"

namespace miltremor::synth {

struct SynthSpec {
  int n_subjects = 20;
  double positive_fraction = 0.5;
  int sessions_per_subject = 8;
  double session_seconds = 60.0;
  double tremor_freq = 5.0;       // Hz, within the 3-7 Hz tremor band
  double tremor_amplitude = 2.0;  // m/s^2 peak of the burst envelope
  double burst_fraction = 0.05;   // fraction of a positive subject's segments
  double noise_level = 0.3;       // m/s^2 std of the band-limited noise
  uint64_t seed = 1;
};

struct CorpusTruth {
  std::vector<std::string> positive_subjects;
  // session id -> offsets (samples, within the trimmed session) of injected
  // tremor bursts; each burst spans one full 500-sample segment.
  std::map<std::string, std::vector<uint32_t>> bursts;
  double tremor_freq = 0.0;
};

// Writes manifest.json, sessions/<subject>/<call>.csv and truth.json under
// out_dir. Deterministic: a fixed spec yields byte-identical files.
CorpusTruth generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir);

CorpusTruth load_truth(const std::filesystem::path& truth_json);

uint64_t spec_hash(const SynthSpec& spec);

}  // namespace miltremor::synth
