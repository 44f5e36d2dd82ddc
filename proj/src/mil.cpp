#include "miltremor/mil.hpp"

namespace miltremor::mil {

std::vector<nn::LayerSpec> embedding_specs(Variant v) {
  using S = nn::LayerSpec;
  if (v == Variant::fc)
    return {S::Dense(76, 256),  S::LeakyRelu(0.2), S::Dropout(0.5), S::Dense(256, 128),
            S::LeakyRelu(0.2),  S::Dropout(0.5),   S::Dense(128, kEmbedDim)};
  return {S::Conv1d(32, 8),  S::LeakyRelu(0.2), S::MaxPool1d(2), S::Conv1d(32, 8),
          S::LeakyRelu(0.2), S::MaxPool1d(2),   S::Conv1d(16, 16), S::LeakyRelu(0.2),
          S::MaxPool1d(2),   S::Conv1d(16, 16), S::LeakyRelu(0.2), S::MaxPool1d(2),
          S::Flatten(),      S::Dense(0, kEmbedDim)};
}

std::vector<nn::LayerSpec> classifier_specs() {
  using S = nn::LayerSpec;
  return {S::Dense(kEmbedDim, 32), S::LeakyRelu(0.2), S::Dropout(0.2), S::Dense(32, 16),
          S::LeakyRelu(0.2),       S::Dropout(0.2),   S::Dense(16, 2)};
}

nn::ItemShape embedding_input_shape(Variant v) {
  return v == Variant::fc ? nn::ItemShape::Flat(76)
                          : nn::ItemShape::Grid(3, dsp::kSegmentSamples);
}

namespace {

constexpr uint32_t kCkptMagic = 0x504b434d;  // "MCKP"
constexpr uint32_t kCkptVersion = 1;

void write_specs(BinWriter& w, const std::vector<nn::LayerSpec>& specs) {
  w.u32(static_cast<uint32_t>(specs.size()));
  for (const nn::LayerSpec& s : specs) {
    w.u8(static_cast<uint8_t>(s.kind));
    w.u32(static_cast<uint32_t>(s.in));
    w.u32(static_cast<uint32_t>(s.out));
    w.u32(static_cast<uint32_t>(s.filters));
    w.u32(static_cast<uint32_t>(s.kernel));
    w.u32(static_cast<uint32_t>(s.pool));
    w.f64(s.alpha);
    w.f64(s.p);
  }
}

std::vector<nn::LayerSpec> read_specs(BinReader& r) {
  const uint32_t n = r.u32();
  std::vector<nn::LayerSpec> specs(n);
  for (nn::LayerSpec& s : specs) {
    s.kind = static_cast<nn::LayerKind>(r.u8());
    s.in = static_cast<int>(r.u32());
    s.out = static_cast<int>(r.u32());
    s.filters = static_cast<int>(r.u32());
    s.kernel = static_cast<int>(r.u32());
    s.pool = static_cast<int>(r.u32());
    s.alpha = r.f64();
    s.p = r.f64();
  }
  return specs;
}

template <typename T>
void write_tensors(BinWriter& w, const std::vector<nn::Tensor<T>*>& tensors) {
  w.u32(static_cast<uint32_t>(tensors.size()));
  for (const nn::Tensor<T>* t : tensors) {
    w.u8(static_cast<uint8_t>(t->shape.size()));
    for (int d : t->shape) w.u32(static_cast<uint32_t>(d));
    for (T v : t->data) w.f32(static_cast<float>(v));
  }
}

template <typename T>
void read_tensors(BinReader& r, const std::vector<nn::Tensor<T>*>& tensors) {
  const uint32_t n = r.u32();
  if (n != tensors.size()) throw Error(ErrorCode::parse, "checkpoint tensor count mismatch");
  for (nn::Tensor<T>* t : tensors) {
    const uint8_t nd = r.u8();
    std::vector<int> dims(nd);
    for (uint8_t i = 0; i < nd; ++i) dims[i] = static_cast<int>(r.u32());
    if (dims != t->shape) throw Error(ErrorCode::parse, "checkpoint tensor shape mismatch");
    for (T& v : t->data) v = static_cast<T>(r.f32());
  }
}

}  // namespace

template <typename T>
std::string serialize_model(MilModel<T>& m) {
  BinWriter w;
  w.u32(kCkptMagic);
  w.u32(kCkptVersion);
  w.u8(static_cast<uint8_t>(m.variant));
  w.u32(static_cast<uint32_t>(m.M));
  w.u32(static_cast<uint32_t>(m.L));
  w.f64(m.threshold);
  write_specs(w, m.phi.specs());
  write_specs(w, m.rho.specs());
  write_tensors(w, m.params());
  return std::move(w.buf);
}

template <typename T>
MilModel<T> deserialize_model(const std::string& bytes) {
  BinReader r(bytes);
  if (r.u32() != kCkptMagic) throw Error(ErrorCode::parse, "not a checkpoint file");
  if (r.u32() != kCkptVersion) throw Error(ErrorCode::parse, "unsupported checkpoint version");
  MilModel<T> m;
  m.variant = static_cast<Variant>(r.u8());
  m.M = static_cast<int>(r.u32());
  m.L = static_cast<int>(r.u32());
  m.threshold = r.f64();
  const auto phi_specs = read_specs(r);
  const auto rho_specs = read_specs(r);
  m.phi = nn::LayerStack<T>::build(phi_specs, embedding_input_shape(m.variant));
  m.rho = nn::LayerStack<T>::build(rho_specs, nn::ItemShape::Flat(m.M));
  m.V = nn::Tensor<T>({m.L, m.M});
  m.w = nn::Tensor<T>({m.L});
  read_tensors(r, m.params());
  return m;
}

template std::string serialize_model<float>(MilModel<float>&);
template std::string serialize_model<double>(MilModel<double>&);
template MilModel<float> deserialize_model<float>(const std::string&);
template MilModel<double> deserialize_model<double>(const std::string&);

}  // namespace miltremor::mil
