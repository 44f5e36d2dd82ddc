#pragma once

// Segmentation of conditioned sessions, energy filtering, tremor-band ranking
// and fixed-capacity per-subject bags with validity masks.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "miltremor/dsp.hpp"
#include "miltremor/ingest.hpp"

namespace miltremor::bags {

struct Labels {
  int updrs16 = 0, updrs20 = 0, updrs21 = 0, sp_expert = 0;

  int get(ingest::Scheme s) const;
  static Labels from(const ingest::SubjectAnnotation& ann);
};

// One 5-second gravity-removed segment with its spectral summary.
struct Instance {
  std::vector<float> raw;       // 3 x 500, axis-major
  std::vector<float> spectrum;  // 76 bins
  double band_e = 0.0;          // [3, 7] Hz energy
  double total_e = 0.0;
  std::string session_id;
  uint32_t offset = 0;  // first sample index within the conditioned session
};

// Per-subject container of up to `capacity` instances, sorted by band energy.
// Padded slots hold explicit zeros and mask = 0.
struct Bag {
  std::string subject_id;
  uint32_t capacity = 0;   // K_t
  uint32_t survivors = 0;  // surviving instances before top-K_t truncation
  Labels labels;
  std::vector<Instance> instances;  // size == capacity
  std::vector<uint8_t> mask;        // size == capacity; 1 = real instance

  uint32_t real_count() const {
    uint32_t n = 0;
    for (uint8_t m : mask) n += m;
    return n;
  }
};

// Non-overlapping windows of `w` samples; the trailing remainder is dropped.
// Each instance carries its Welch spectrum and band/total energies.
std::vector<Instance> segment_session(const ingest::Session& s, int w = dsp::kSegmentSamples);

// Keeps instances with total_e > e_min; sessions left with fewer than two
// surviving segments are dropped entirely.
std::vector<Instance> filter_segments(std::vector<Instance> instances, double e_min = 0.15);

// Sorts by band energy descending (ties: session_id, offset ascending), takes
// the top k_t and zero-pads to capacity.
Bag build_bag(const std::string& subject_id, std::vector<Instance> instances,
              const Labels& labels, uint32_t k_t);

// Minimum-contribution rule, counted after energy filtering and before
// truncation to K_t.
bool subject_eligible(const Bag& bag, uint32_t min_segments = 30);

// Prefix of a bag at a smaller capacity; real instances keep their order.
Bag truncate_bag(const Bag& bag, uint32_t k_t);

// --- bag cache ------------------------------------------------------------

std::string serialize_bag(const Bag& bag, uint64_t config_hash);
Bag deserialize_bag(const std::string& bytes);

void write_bag(const std::filesystem::path& path, const Bag& bag, uint64_t config_hash);
Bag read_bag(const std::filesystem::path& path);

}  // namespace miltremor::bags
