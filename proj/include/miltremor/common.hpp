#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace miltremor {

enum class ErrorCode {
  insufficient_data,
  degenerate_clock,
  precondition,
  too_short_after_trim,
  bad_window,
  shape,
  input_kind,
  empty_bag,
  bag_too_small,
  degenerate_labels,
  too_few,
  bad_k,
  empty,
  unannotated_subject,
  duplicate_subject,
  no_data,
  parse,
  io,
  bad_config,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Deterministic PRNG. Distribution helpers are hand-rolled so that the
// generated sequences are pinned independently of the standard library
// implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    // xorshift64* keeps the generator tiny and fully specified.
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dULL;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  // Standard normal via Box-Muller; one spare value is cached.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer, used for seed derivation and hashing small ints.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-trial seed: hash(base_seed, fold_index, trial_index).
inline uint64_t derive_seed(uint64_t base, uint64_t fold, uint64_t trial) {
  return mix64(mix64(mix64(base) ^ fold) ^ trial);
}

// FNV-1a over a byte string; used for config provenance hashes.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v);

// --- little-endian binary IO ------------------------------------------------

struct BinWriter {
  std::string buf;

  void u8(uint8_t v) { buf.push_back(static_cast<char>(v)); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void f32s(const float* p, size_t n) { raw(p, 4 * n); }
  void str(const std::string& s);
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
};

struct BinReader {
  const std::string& buf;
  size_t pos = 0;

  explicit BinReader(const std::string& b) : buf(b) {}
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  double f64();
  void f32s(float* p, size_t n);
  std::string str();
  void raw(void* p, size_t n);
};

// Write atomically: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// --- worker pool ------------------------------------------------------------

// Number of workers: min(hardware, MILTREMOR_THREADS if set).
int worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Exceptions are
// captured and the first one (by index) is rethrown after all tasks finish.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace miltremor
