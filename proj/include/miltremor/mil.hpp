#pragma once

// The attention-pooled multiple-instance model: per-instance embedding (fully
// connected over spectra, or CNN over raw segments), attention pooling over
// the bag, a small classifier head, end-to-end training and prediction.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "miltremor/bags.hpp"
#include "miltremor/nn.hpp"

namespace miltremor::mil {

enum class Variant : uint8_t { fc = 0, cnn = 1 };

inline const char* variant_name(Variant v) { return v == Variant::fc ? "fc" : "cnn"; }
inline Variant variant_from_name(const std::string& s) {
  if (s == "fc") return Variant::fc;
  if (s == "cnn") return Variant::cnn;
  throw Error(ErrorCode::bad_config, "unknown variant: " + s);
}

inline constexpr int kEmbedDim = 64;      // M
inline constexpr int kAttentionDim = 16;  // L
inline constexpr double kThreshold = 0.5;

std::vector<nn::LayerSpec> embedding_specs(Variant v);
std::vector<nn::LayerSpec> classifier_specs();
nn::ItemShape embedding_input_shape(Variant v);

template <typename T>
struct MilModel {
  Variant variant = Variant::cnn;
  int M = kEmbedDim;
  int L = kAttentionDim;
  double threshold = kThreshold;
  nn::LayerStack<T> phi;  // instance embedding
  nn::Tensor<T> V;        // [L, M]
  nn::Tensor<T> w;        // [L]
  nn::LayerStack<T> rho;  // classifier, outputs 2 logits

  std::vector<nn::Tensor<T>*> params() {
    std::vector<nn::Tensor<T>*> out = phi.params();
    out.push_back(&V);
    out.push_back(&w);
    for (auto* p : rho.params()) out.push_back(p);
    return out;
  }

  void zero_grads() {
    for (auto* p : params()) p->zero_grad();
  }
};

template <typename T>
MilModel<T> build_model(Variant variant, uint64_t init_seed) {
  MilModel<T> m;
  m.variant = variant;
  m.phi = nn::LayerStack<T>::build(embedding_specs(variant), embedding_input_shape(variant));
  if (static_cast<int>(m.phi.output_shape().count()) != m.M)
    throw Error(ErrorCode::shape, "embedding output is not M");
  m.rho = nn::LayerStack<T>::build(classifier_specs(), nn::ItemShape::Flat(m.M));
  m.V = nn::Tensor<T>({m.L, m.M});
  m.w = nn::Tensor<T>({m.L});
  Rng rng(mix64(init_seed) ^ 0x5eed0001ULL);
  nn::init_params(m.phi, rng);
  const double bv = std::sqrt(6.0 / (m.L + m.M));
  for (auto& x : m.V.data) x = static_cast<T>(rng.uniform(-bv, bv));
  const double bw = std::sqrt(6.0 / (m.L + 1));
  for (auto& x : m.w.data) x = static_cast<T>(rng.uniform(-bw, bw));
  nn::init_params(m.rho, rng);
  return m;
}

// Cross-entropy on the bag probability; p is clamped for stability.
template <typename T>
T bag_loss(T p, int y) {
  const T lo = T(1e-7), hi = T(1) - T(1e-7);
  const T pc = std::min(hi, std::max(lo, p));
  return y ? -std::log(pc) : -std::log(T(1) - pc);
}

// State of one forward pass that backward needs. Keeps the stacked instance
// input alive because the embedding layers reference it during backward.
template <typename T>
struct BagForward {
  int K = 0;                   // number of real instances
  std::vector<int> slots;      // bag slot of each real instance
  std::vector<T> input;        // [K, item] stacked instance inputs
  std::vector<T> H;            // [K, M] embeddings
  std::vector<T> tanh_u;       // [K, L]
  std::vector<T> a;            // [K] attention weights
  std::vector<T> z;            // [M] pooled embedding
  std::array<T, 2> probs{};    // class probabilities
  double probability() const { return static_cast<double>(probs[1]); }
};

template <typename T>
std::vector<T> instance_input(const bags::Bag& bag, int slot, Variant variant) {
  const bags::Instance& inst = bag.instances[slot];
  const std::vector<float>& src = variant == Variant::fc ? inst.spectrum : inst.raw;
  std::vector<T> out(src.size());
  for (size_t i = 0; i < src.size(); ++i) out[i] = static_cast<T>(src[i]);
  return out;
}

template <typename T>
BagForward<T> model_forward(MilModel<T>& m, const bags::Bag& bag, nn::Ctx<T>& ctx) {
  BagForward<T> f;
  for (size_t i = 0; i < bag.mask.size(); ++i)
    if (bag.mask[i]) f.slots.push_back(static_cast<int>(i));
  f.K = static_cast<int>(f.slots.size());
  if (f.K == 0) throw Error(ErrorCode::empty_bag, "bag " + bag.subject_id + " has no instances");

  const size_t item = m.phi.input_shape().count();
  f.input.resize(static_cast<size_t>(f.K) * item);
  for (int k = 0; k < f.K; ++k) {
    const bags::Instance& inst = bag.instances[f.slots[k]];
    const std::vector<float>& src = m.variant == Variant::fc ? inst.spectrum : inst.raw;
    T* dst = f.input.data() + static_cast<size_t>(k) * item;
    for (size_t i = 0; i < item; ++i) dst[i] = static_cast<T>(src[i]);
  }
  f.H = m.phi.forward(f.input, f.K, ctx);

  // Attention scores e_k = w . tanh(V h_k), masked softmax over real rows.
  const int M = m.M, L = m.L;
  f.tanh_u.assign(static_cast<size_t>(f.K) * L, T(0));
  std::vector<T> scores(f.K);
  for (int k = 0; k < f.K; ++k) {
    const T* h = f.H.data() + static_cast<size_t>(k) * M;
    T* tk = f.tanh_u.data() + static_cast<size_t>(k) * L;
    T e = 0;
    for (int l = 0; l < L; ++l) {
      const T* vr = m.V.data.data() + static_cast<size_t>(l) * M;
      T u = 0;
      for (int j = 0; j < M; ++j) u += vr[j] * h[j];
      tk[l] = std::tanh(u);
      e += m.w.data[l] * tk[l];
    }
    scores[k] = e;
  }
  T mx = scores[0];
  for (T s : scores) mx = std::max(mx, s);
  T sum = 0;
  f.a.resize(f.K);
  for (int k = 0; k < f.K; ++k) sum += (f.a[k] = std::exp(scores[k] - mx));
  for (int k = 0; k < f.K; ++k) f.a[k] /= sum;

  f.z.assign(M, T(0));
  for (int k = 0; k < f.K; ++k) {
    const T ak = f.a[k];
    const T* h = f.H.data() + static_cast<size_t>(k) * M;
    for (int j = 0; j < M; ++j) f.z[j] += ak * h[j];
  }

  const std::vector<T>& logits = m.rho.forward(f.z, 1, ctx);
  const auto pr = nn::softmax2(logits[0], logits[1]);
  f.probs = {pr[0], pr[1]};
  return f;
}

// Backpropagates the cross-entropy loss for label y; parameter gradients are
// accumulated into the model tensors (zero_grads() first).
template <typename T>
void model_backward(MilModel<T>& m, BagForward<T>& f, int y) {
  // Fused softmax + cross-entropy gradient on the logits.
  std::vector<T> dlogits = {f.probs[0] - (y ? T(0) : T(1)), f.probs[1] - (y ? T(1) : T(0))};
  const std::vector<T>& dz = m.rho.backward(dlogits, 1, true);

  const int M = m.M, L = m.L, K = f.K;
  std::vector<T> da(K);
  for (int k = 0; k < K; ++k) {
    const T* h = f.H.data() + static_cast<size_t>(k) * M;
    T s = 0;
    for (int j = 0; j < M; ++j) s += dz[j] * h[j];
    da[k] = s;
  }
  T dot = 0;
  for (int k = 0; k < K; ++k) dot += f.a[k] * da[k];
  std::vector<T> de(K);
  for (int k = 0; k < K; ++k) de[k] = f.a[k] * (da[k] - dot);

  std::vector<T> dH(static_cast<size_t>(K) * M, T(0));
  std::vector<T> g(L);
  for (int k = 0; k < K; ++k) {
    const T* tk = f.tanh_u.data() + static_cast<size_t>(k) * L;
    const T* h = f.H.data() + static_cast<size_t>(k) * M;
    T* dh = dH.data() + static_cast<size_t>(k) * M;
    for (int l = 0; l < L; ++l) {
      m.w.grad[l] += de[k] * tk[l];
      g[l] = de[k] * m.w.data[l] * (T(1) - tk[l] * tk[l]);
    }
    for (int l = 0; l < L; ++l) {
      const T gl = g[l];
      T* vg = m.V.grad.data() + static_cast<size_t>(l) * M;
      const T* vr = m.V.data.data() + static_cast<size_t>(l) * M;
      for (int j = 0; j < M; ++j) {
        vg[j] += gl * h[j];
        dh[j] += gl * vr[j];
      }
    }
    const T ak = f.a[k];
    for (int j = 0; j < M; ++j) dh[j] += ak * dz[j];
  }
  m.phi.backward(dH, K, false);
}

struct BagPrediction {
  std::string subject_id;
  double probability = 0.0;
  int label = 0;
  std::vector<double> attention;  // per bag slot; exactly 0 on masked slots
};

template <typename T>
BagPrediction predict(MilModel<T>& m, const bags::Bag& bag) {
  nn::Ctx<T> ctx{nn::Mode::eval, nullptr, false};
  BagForward<T> f = model_forward(m, bag, ctx);
  BagPrediction pred;
  pred.subject_id = bag.subject_id;
  pred.probability = f.probability();
  pred.label = pred.probability >= m.threshold ? 1 : 0;  // inclusive at T
  pred.attention.assign(bag.capacity, 0.0);
  for (int k = 0; k < f.K; ++k) pred.attention[f.slots[k]] = static_cast<double>(f.a[k]);
  return pred;
}

struct TrainConfig {
  Variant variant = Variant::cnn;
  int epochs = 50;
  double base_lr = 1e-3;
  double decay = 0.9;
  uint64_t seed = 1;
  ingest::Scheme train_scheme = ingest::Scheme::sp_expert;
};

inline int default_epochs(Variant v) { return v == Variant::fc ? 1000 : 50; }

template <typename T>
struct TrainResult {
  MilModel<T> model;
  std::vector<double> epoch_loss;  // mean per-bag loss per epoch
};

template <typename T>
void check_two_classes(const std::vector<const bags::Bag*>& bags, ingest::Scheme scheme) {
  int pos = 0, neg = 0;
  for (const bags::Bag* b : bags) (b->labels.get(scheme) ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw Error(ErrorCode::degenerate_labels, "training set needs at least one bag per class");
}

template <typename T>
TrainResult<T> train(const std::vector<const bags::Bag*>& bags, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw Error(ErrorCode::precondition, "epochs must be >= 1");
  check_two_classes<T>(bags, cfg.train_scheme);

  TrainResult<T> result;
  result.model = build_model<T>(cfg.variant, cfg.seed);
  MilModel<T>& m = result.model;
  nn::Adam<T> opt(m.params(), static_cast<T>(cfg.base_lr));
  Rng rng(mix64(cfg.seed) ^ 0x7261696eULL);

  std::vector<size_t> order(bags.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(static_cast<T>(nn::lr_schedule(epoch, cfg.epochs, cfg.base_lr, cfg.decay)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t i : order) {
      const bags::Bag& bag = *bags[i];
      const int y = bag.labels.get(cfg.train_scheme);
      nn::Ctx<T> ctx{nn::Mode::train, &rng, false};
      BagForward<T> f = model_forward(m, bag, ctx);
      loss_sum += static_cast<double>(bag_loss(f.probs[1], y));
      m.zero_grads();
      model_backward(m, f, y);
      opt.step();
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(bags.size()));
  }
  return result;
}

// --- attention report ------------------------------------------------------

struct AttentionEntry {
  std::string session_id;
  uint32_t offset = 0;
  double weight = 0.0;
  double band_e = 0.0;
  int slot = 0;
};

struct AttentionReport {
  std::vector<AttentionEntry> top;     // highest weights, descending
  std::vector<AttentionEntry> bottom;  // lowest weights, ascending
};

template <typename T>
AttentionReport attention_report(MilModel<T>& m, const bags::Bag& bag, int n = 2) {
  const uint32_t real = bag.real_count();
  if (real < 2 * static_cast<uint32_t>(n))
    throw Error(ErrorCode::bag_too_small,
                "need at least " + std::to_string(2 * n) + " instances, bag has " +
                    std::to_string(real));
  BagPrediction pred = predict(m, bag);
  std::vector<int> slots;
  for (size_t i = 0; i < bag.mask.size(); ++i)
    if (bag.mask[i]) slots.push_back(static_cast<int>(i));
  std::sort(slots.begin(), slots.end(), [&](int a, int b) {
    if (pred.attention[a] != pred.attention[b]) return pred.attention[a] > pred.attention[b];
    return a < b;  // deterministic tie-break on instance index
  });
  auto entry = [&](int slot) {
    const bags::Instance& inst = bag.instances[slot];
    return AttentionEntry{inst.session_id, inst.offset, pred.attention[slot], inst.band_e, slot};
  };
  AttentionReport rep;
  for (int i = 0; i < n; ++i) rep.top.push_back(entry(slots[i]));
  for (int i = 0; i < n; ++i) rep.bottom.push_back(entry(slots[slots.size() - 1 - i]));
  return rep;
}

// --- Simple-MIL baseline -----------------------------------------------------

// Bag labels propagated to instances; an instance-level classifier is trained
// and the bag probability is the mean instance probability.
template <typename T>
struct SimpleMilModel {
  nn::LayerStack<T> phi;  // fc spectral embedding
  nn::LayerStack<T> rho;
  std::vector<nn::Tensor<T>*> params() {
    auto out = phi.params();
    for (auto* p : rho.params()) out.push_back(p);
    return out;
  }
  void zero_grads() {
    for (auto* p : params()) p->zero_grad();
  }
};

inline double simple_mil_bag_probability(std::span<const double> instance_probs) {
  if (instance_probs.empty()) throw Error(ErrorCode::empty_bag, "no instance probabilities");
  double s = 0.0;
  for (double p : instance_probs) s += p;
  return s / static_cast<double>(instance_probs.size());
}

template <typename T>
SimpleMilModel<T> build_simple_model(uint64_t init_seed) {
  SimpleMilModel<T> m;
  m.phi = nn::LayerStack<T>::build(embedding_specs(Variant::fc), embedding_input_shape(Variant::fc));
  m.rho = nn::LayerStack<T>::build(classifier_specs(), nn::ItemShape::Flat(kEmbedDim));
  Rng rng(mix64(init_seed) ^ 0x5eed0002ULL);
  nn::init_params(m.phi, rng);
  nn::init_params(m.rho, rng);
  return m;
}

// Forward all real instances; fills per-instance class probabilities. The
// caller owns `input`, which must stay alive while backward may still run.
template <typename T>
std::vector<T> simple_forward(SimpleMilModel<T>& m, const bags::Bag& bag, nn::Ctx<T>& ctx,
                              std::vector<std::array<T, 2>>& probs01, std::vector<T>& input) {
  int K = 0;
  for (uint8_t b : bag.mask) K += b;
  if (K == 0) throw Error(ErrorCode::empty_bag, "bag " + bag.subject_id + " has no instances");
  const size_t item = m.phi.input_shape().count();
  input.resize(static_cast<size_t>(K) * item);
  int k = 0;
  for (size_t i = 0; i < bag.mask.size(); ++i) {
    if (!bag.mask[i]) continue;
    const std::vector<float>& src = bag.instances[i].spectrum;
    T* dst = input.data() + static_cast<size_t>(k++) * item;
    for (size_t j = 0; j < item; ++j) dst[j] = static_cast<T>(src[j]);
  }
  const std::vector<T>& h = m.phi.forward(input, K, ctx);
  const std::vector<T>& logits = m.rho.forward(h, K, ctx);
  probs01.resize(K);
  std::vector<T> p1(K);
  for (int j = 0; j < K; ++j) {
    const auto pr = nn::softmax2(logits[2 * j], logits[2 * j + 1]);
    probs01[j] = {pr[0], pr[1]};
    p1[j] = pr[1];
  }
  return p1;
}

template <typename T>
struct SimpleTrainResult {
  SimpleMilModel<T> model;
  std::vector<double> epoch_loss;
};

template <typename T>
SimpleTrainResult<T> simple_mil_train(const std::vector<const bags::Bag*>& bags,
                                      const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw Error(ErrorCode::precondition, "epochs must be >= 1");
  check_two_classes<T>(bags, cfg.train_scheme);

  SimpleTrainResult<T> result;
  result.model = build_simple_model<T>(cfg.seed);
  SimpleMilModel<T>& m = result.model;
  nn::Adam<T> opt(m.params(), static_cast<T>(cfg.base_lr));
  Rng rng(mix64(cfg.seed) ^ 0x73696d70ULL);

  std::vector<size_t> order(bags.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<std::array<T, 2>> probs;
  std::vector<T> input, dlogits;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(static_cast<T>(nn::lr_schedule(epoch, cfg.epochs, cfg.base_lr, cfg.decay)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t i : order) {
      const bags::Bag& bag = *bags[i];
      const int y = bag.labels.get(cfg.train_scheme);  // propagated to all instances
      nn::Ctx<T> ctx{nn::Mode::train, &rng, false};
      std::vector<T> p1 = simple_forward(m, bag, ctx, probs, input);
      const int K = static_cast<int>(p1.size());
      double loss = 0.0;
      for (int k = 0; k < K; ++k) loss += static_cast<double>(bag_loss(p1[k], y));
      loss_sum += loss / K;
      // Mean cross-entropy over instances: dlogits = (softmax - onehot) / K.
      dlogits.resize(2 * static_cast<size_t>(K));
      const T invk = T(1) / static_cast<T>(K);
      for (int k = 0; k < K; ++k) {
        dlogits[2 * k] = (probs[k][0] - (y ? T(0) : T(1))) * invk;
        dlogits[2 * k + 1] = (probs[k][1] - (y ? T(1) : T(0))) * invk;
      }
      m.zero_grads();
      const std::vector<T>& dh = m.rho.backward(dlogits, K, true);
      m.phi.backward(dh, K, false);
      opt.step();
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(bags.size()));
  }
  return result;
}

template <typename T>
BagPrediction simple_mil_predict(SimpleMilModel<T>& m, const bags::Bag& bag) {
  nn::Ctx<T> ctx{nn::Mode::eval, nullptr, false};
  std::vector<std::array<T, 2>> probs;
  std::vector<T> input;
  std::vector<T> p1 = simple_forward(m, bag, ctx, probs, input);
  std::vector<double> pd(p1.begin(), p1.end());
  BagPrediction pred;
  pred.subject_id = bag.subject_id;
  pred.probability = simple_mil_bag_probability(pd);
  pred.label = pred.probability >= kThreshold ? 1 : 0;
  pred.attention.assign(bag.capacity, 0.0);
  return pred;
}

// --- checkpoints ---------------------------------------------------------------

template <typename T>
std::string serialize_model(MilModel<T>& m);

template <typename T>
MilModel<T> deserialize_model(const std::string& bytes);

template <typename T>
void write_checkpoint(const std::filesystem::path& path, MilModel<T>& m) {
  write_file_atomic(path, serialize_model(m));
}

template <typename T>
MilModel<T> read_checkpoint(const std::filesystem::path& path) {
  return deserialize_model<T>(read_file(path));
}

// --- parameter accounting --------------------------------------------------------

struct ParamRow {
  std::string name;
  size_t count = 0;
};

template <typename T>
std::vector<ParamRow> parameter_table(MilModel<T>& m) {
  std::vector<ParamRow> rows;
  for (const auto& l : m.phi.layers()) {
    std::vector<nn::Tensor<T>*> ps;
    l->collect_params(ps);
    size_t n = 0;
    for (auto* p : ps) n += p->size();
    if (n) rows.push_back({"phi " + l->describe(), n});
  }
  rows.push_back({"attention V[" + std::to_string(m.L) + "x" + std::to_string(m.M) + "] + w[" +
                      std::to_string(m.L) + "]",
                  m.V.size() + m.w.size()});
  for (const auto& l : m.rho.layers()) {
    std::vector<nn::Tensor<T>*> ps;
    l->collect_params(ps);
    size_t n = 0;
    for (auto* p : ps) n += p->size();
    if (n) rows.push_back({"rho " + l->describe(), n});
  }
  return rows;
}

template <typename T>
size_t total_params(MilModel<T>& m) {
  return nn::param_count(m.params());
}

}  // namespace miltremor::mil
