#include "miltremor/bags.hpp"

#include <algorithm>
#include <map>

namespace miltremor::bags {

int Labels::get(ingest::Scheme s) const {
  switch (s) {
    case ingest::Scheme::updrs16: return updrs16;
    case ingest::Scheme::updrs20: return updrs20;
    case ingest::Scheme::updrs21: return updrs21;
    case ingest::Scheme::sp_expert: return sp_expert;
  }
  return 0;
}

Labels Labels::from(const ingest::SubjectAnnotation& ann) {
  Labels l;
  l.updrs16 = ingest::binarize_annotation(ann, ingest::Scheme::updrs16);
  l.updrs20 = ingest::binarize_annotation(ann, ingest::Scheme::updrs20);
  l.updrs21 = ingest::binarize_annotation(ann, ingest::Scheme::updrs21);
  l.sp_expert = ingest::binarize_annotation(ann, ingest::Scheme::sp_expert);
  return l;
}

std::vector<Instance> segment_session(const ingest::Session& s, int w) {
  if (w != dsp::kSegmentSamples)
    throw Error(ErrorCode::bad_window, "segment length must be 500 samples");
  const size_t count = s.n() / static_cast<size_t>(w);
  std::vector<Instance> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    Instance inst;
    inst.session_id = s.session_id;
    inst.offset = static_cast<uint32_t>(i * w);
    inst.raw.resize(3 * static_cast<size_t>(w));
    for (int a = 0; a < 3; ++a)
      for (int j = 0; j < w; ++j)
        inst.raw[a * w + j] = static_cast<float>(s.axes[a][inst.offset + j]);
    const dsp::Spectrum sp = dsp::welch_spectrum(
        std::span(s.axes[0]).subspan(inst.offset, w), std::span(s.axes[1]).subspan(inst.offset, w),
        std::span(s.axes[2]).subspan(inst.offset, w));
    inst.spectrum.resize(dsp::kSpectrumBins);
    for (int k = 0; k < dsp::kSpectrumBins; ++k)
      inst.spectrum[k] = static_cast<float>(sp.coefficients[k]);
    inst.band_e = dsp::band_energy(sp);
    inst.total_e = dsp::total_energy(sp);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Instance> filter_segments(std::vector<Instance> instances, double e_min) {
  // Group by session, preserving first-seen session order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<Instance>> by_session;
  for (Instance& inst : instances) {
    auto it = by_session.find(inst.session_id);
    if (it == by_session.end()) {
      order.push_back(inst.session_id);
      it = by_session.emplace(inst.session_id, std::vector<Instance>{}).first;
    }
    if (inst.total_e > e_min) it->second.push_back(std::move(inst));
  }
  std::vector<Instance> out;
  for (const std::string& sid : order) {
    std::vector<Instance>& kept = by_session[sid];
    if (kept.size() < 2) continue;  // whole session discarded
    for (Instance& inst : kept) out.push_back(std::move(inst));
  }
  return out;
}

namespace {

Instance zero_instance() {
  Instance inst;
  inst.raw.assign(3 * dsp::kSegmentSamples, 0.0f);
  inst.spectrum.assign(dsp::kSpectrumBins, 0.0f);
  return inst;
}

}  // namespace

Bag build_bag(const std::string& subject_id, std::vector<Instance> instances, const Labels& labels,
              uint32_t k_t) {
  std::sort(instances.begin(), instances.end(), [](const Instance& a, const Instance& b) {
    if (a.band_e != b.band_e) return a.band_e > b.band_e;
    if (a.session_id != b.session_id) return a.session_id < b.session_id;
    return a.offset < b.offset;
  });
  Bag bag;
  bag.subject_id = subject_id;
  bag.capacity = k_t;
  bag.survivors = static_cast<uint32_t>(instances.size());
  bag.labels = labels;
  const uint32_t real = std::min<uint32_t>(k_t, static_cast<uint32_t>(instances.size()));
  bag.instances.reserve(k_t);
  for (uint32_t i = 0; i < real; ++i) bag.instances.push_back(std::move(instances[i]));
  for (uint32_t i = real; i < k_t; ++i) bag.instances.push_back(zero_instance());
  bag.mask.assign(k_t, 0);
  for (uint32_t i = 0; i < real; ++i) bag.mask[i] = 1;
  return bag;
}

bool subject_eligible(const Bag& bag, uint32_t min_segments) {
  return bag.survivors >= min_segments;
}

Bag truncate_bag(const Bag& bag, uint32_t k_t) {
  Bag out;
  out.subject_id = bag.subject_id;
  out.capacity = k_t;
  out.survivors = bag.survivors;
  out.labels = bag.labels;
  const uint32_t real = std::min(bag.real_count(), k_t);
  out.instances.reserve(k_t);
  for (uint32_t i = 0; i < real; ++i) out.instances.push_back(bag.instances[i]);
  for (uint32_t i = real; i < k_t; ++i) out.instances.push_back(zero_instance());
  out.mask.assign(k_t, 0);
  for (uint32_t i = 0; i < real; ++i) out.mask[i] = 1;
  return out;
}

namespace {
constexpr uint32_t kBagMagic = 0x4741424d;  // "MBAG"
constexpr uint32_t kBagVersion = 1;
}  // namespace

std::string serialize_bag(const Bag& bag, uint64_t config_hash) {
  BinWriter w;
  w.u32(kBagMagic);
  w.u32(kBagVersion);
  w.u64(config_hash);
  w.u32(dsp::kSegmentSamples);
  w.u32(dsp::kSpectrumBins);
  w.u32(bag.capacity);
  const uint32_t real = bag.real_count();
  w.u32(real);
  w.u32(bag.survivors);
  w.u8(static_cast<uint8_t>(bag.labels.updrs16));
  w.u8(static_cast<uint8_t>(bag.labels.updrs20));
  w.u8(static_cast<uint8_t>(bag.labels.updrs21));
  w.u8(static_cast<uint8_t>(bag.labels.sp_expert));
  w.str(bag.subject_id);
  for (const Instance& inst : bag.instances) w.f32s(inst.raw.data(), inst.raw.size());
  for (const Instance& inst : bag.instances) w.f32s(inst.spectrum.data(), inst.spectrum.size());
  w.raw(bag.mask.data(), bag.mask.size());
  for (uint32_t i = 0; i < real; ++i) w.f64(bag.instances[i].band_e);
  for (uint32_t i = 0; i < real; ++i) w.f64(bag.instances[i].total_e);
  for (uint32_t i = 0; i < real; ++i) w.u32(bag.instances[i].offset);
  for (uint32_t i = 0; i < real; ++i) w.str(bag.instances[i].session_id);
  return std::move(w.buf);
}

Bag deserialize_bag(const std::string& bytes) {
  BinReader r(bytes);
  if (r.u32() != kBagMagic) throw Error(ErrorCode::parse, "not a bag file");
  if (r.u32() != kBagVersion) throw Error(ErrorCode::parse, "unsupported bag version");
  r.u64();  // config hash, informational
  const uint32_t w = r.u32(), bins = r.u32();
  if (w != dsp::kSegmentSamples || bins != dsp::kSpectrumBins)
    throw Error(ErrorCode::parse, "bag file with unexpected segment geometry");
  Bag bag;
  bag.capacity = r.u32();
  const uint32_t real = r.u32();
  bag.survivors = r.u32();
  bag.labels.updrs16 = r.u8();
  bag.labels.updrs20 = r.u8();
  bag.labels.updrs21 = r.u8();
  bag.labels.sp_expert = r.u8();
  bag.subject_id = r.str();
  bag.instances.assign(bag.capacity, Instance{});
  for (Instance& inst : bag.instances) {
    inst.raw.resize(3 * w);
    r.f32s(inst.raw.data(), inst.raw.size());
  }
  for (Instance& inst : bag.instances) {
    inst.spectrum.resize(bins);
    r.f32s(inst.spectrum.data(), inst.spectrum.size());
  }
  bag.mask.resize(bag.capacity);
  r.raw(bag.mask.data(), bag.mask.size());
  for (uint32_t i = 0; i < real; ++i) bag.instances[i].band_e = r.f64();
  for (uint32_t i = 0; i < real; ++i) bag.instances[i].total_e = r.f64();
  for (uint32_t i = 0; i < real; ++i) bag.instances[i].offset = r.u32();
  for (uint32_t i = 0; i < real; ++i) bag.instances[i].session_id = r.str();
  return bag;
}

void write_bag(const std::filesystem::path& path, const Bag& bag, uint64_t config_hash) {
  write_file_atomic(path, serialize_bag(bag, config_hash));
}

Bag read_bag(const std::filesystem::path& path) { return deserialize_bag(read_file(path)); }

}  // namespace miltremor::bags
