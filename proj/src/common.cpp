#include "miltremor/common.hpp"

#include <cmath>
#include <cstdio>
#include <mutex>

namespace miltremor {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::degenerate_clock: return "degenerate_clock";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::too_short_after_trim: return "too_short_after_trim";
    case ErrorCode::bad_window: return "bad_window";
    case ErrorCode::shape: return "shape";
    case ErrorCode::input_kind: return "input_kind";
    case ErrorCode::empty_bag: return "empty_bag";
    case ErrorCode::bag_too_small: return "bag_too_small";
    case ErrorCode::degenerate_labels: return "degenerate_labels";
    case ErrorCode::too_few: return "too_few";
    case ErrorCode::bad_k: return "bad_k";
    case ErrorCode::empty: return "empty";
    case ErrorCode::unannotated_subject: return "unannotated_subject";
    case ErrorCode::duplicate_subject: return "duplicate_subject";
    case ErrorCode::no_data: return "no_data";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
    case ErrorCode::bad_config: return "bad_config";
  }
  return "unknown";
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on two uniforms; u clamped away from 0.
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  double v = uniform();
  double r = std::sqrt(-2.0 * std::log(u));
  double a = 2.0 * M_PI * v;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::string hex64(uint64_t v) {
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(v));
  return out;
}

void BinWriter::str(const std::string& s) {
  if (s.size() > 0xffff) throw Error(ErrorCode::io, "string too long for u16 length prefix");
  u16(static_cast<uint16_t>(s.size()));
  raw(s.data(), s.size());
}

uint8_t BinReader::u8() {
  uint8_t v;
  raw(&v, 1);
  return v;
}
uint16_t BinReader::u16() {
  uint16_t v;
  raw(&v, 2);
  return v;
}
uint32_t BinReader::u32() {
  uint32_t v;
  raw(&v, 4);
  return v;
}
uint64_t BinReader::u64() {
  uint64_t v;
  raw(&v, 8);
  return v;
}
float BinReader::f32() {
  float v;
  raw(&v, 4);
  return v;
}
double BinReader::f64() {
  double v;
  raw(&v, 8);
  return v;
}
void BinReader::f32s(float* p, size_t n) { raw(p, 4 * n); }

std::string BinReader::str() {
  size_t n = u16();
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

void BinReader::raw(void* p, size_t n) {
  if (pos + n > buf.size()) throw Error(ErrorCode::parse, "truncated binary file");
  std::memcpy(p, buf.data() + pos, n);
  pos += n;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::io, "cannot open " + tmp.string());
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw Error(ErrorCode::io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("MILTREMOR_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1 && cap < hw) hw = cap;
  }
  return hw;
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  size_t workers = std::min<size_t>(worker_count(), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  size_t err_index = n;
  std::exception_ptr err;
  auto body = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (size_t t = 0; t < workers; ++t) threads.emplace_back(body);
  for (auto& t : threads) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace miltremor
