#include "miltremor/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "miltremor/bags.hpp"
#include "miltremor/dsp.hpp"
#include "miltremor/eval.hpp"
#include "miltremor/mil.hpp"
#include "miltremor/svg.hpp"
#include "miltremor/synth.hpp"

namespace miltremor::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr uint32_t kSessionMagic = 0x5345534d;  // "MSES"
constexpr uint32_t kSessionVersion = 1;

// Canonical key=value list hashed for output provenance.
struct ConfigHash {
  std::string canon;
  void add(const std::string& key, const std::string& value) {
    canon += key;
    canon += '=';
    canon += value;
    canon += '\n';
  }
  void add(const std::string& key, double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    add(key, std::string(buf));
  }
  void add(const std::string& key, int64_t v) { add(key, std::to_string(v)); }
  void add(const std::string& key, uint64_t v) { add(key, std::to_string(v)); }
  uint64_t value() const { return fnv1a64(canon); }
};

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')
               ? c
               : '_';
  return out;
}

std::vector<ingest::Scheme> parse_eval_labels(const std::string& value) {
  if (value == "all")
    return {ingest::Scheme::updrs16, ingest::Scheme::updrs20, ingest::Scheme::updrs21,
            ingest::Scheme::sp_expert};
  std::vector<ingest::Scheme> out;
  size_t start = 0;
  while (start <= value.size()) {
    size_t comma = value.find(',', start);
    if (comma == std::string::npos) comma = value.size();
    const std::string tok = value.substr(start, comma - start);
    if (!tok.empty()) out.push_back(ingest::scheme_from_name(tok));
    start = comma + 1;
  }
  if (out.empty()) throw Error(ErrorCode::bad_config, "no evaluation labels requested");
  return out;
}

}  // namespace

void write_session_bin(const fs::path& path, const ingest::Session& s, uint64_t config_hash) {
  BinWriter w;
  w.u32(kSessionMagic);
  w.u32(kSessionVersion);
  w.u64(config_hash);
  w.u32(static_cast<uint32_t>(s.n()));
  for (int a = 0; a < 3; ++a)
    for (double v : s.axes[a]) w.f32(static_cast<float>(v));
  w.str(s.subject_id);
  w.str(s.session_id);
  write_file_atomic(path, w.buf);
}

ingest::Session read_session_bin(const fs::path& path) {
  const std::string bytes = read_file(path);
  BinReader r(bytes);
  if (r.u32() != kSessionMagic) throw Error(ErrorCode::parse, "not a session file");
  if (r.u32() != kSessionVersion) throw Error(ErrorCode::parse, "unsupported session version");
  r.u64();
  const uint32_t n = r.u32();
  ingest::Session s;
  for (int a = 0; a < 3; ++a) {
    s.axes[a].resize(n);
    for (uint32_t i = 0; i < n; ++i) s.axes[a][i] = static_cast<double>(r.f32());
  }
  s.subject_id = r.str();
  s.session_id = r.str();
  return s;
}

namespace {

// ---------------------------------------------------------------- synth ----

struct SynthOpts {
  synth::SynthSpec spec;
  std::string out;
};

int cmd_synth(const SynthOpts& o) {
  const synth::CorpusTruth truth = synth::generate_corpus(o.spec, o.out);
  std::printf("synth: %d subjects (%zu positive), %d sessions each, out=%s\n", o.spec.n_subjects,
              truth.positive_subjects.size(), o.spec.sessions_per_subject, o.out.c_str());
  return 0;
}

// ----------------------------------------------------------- preprocess ----

struct PreprocessOpts {
  std::string manifest;
  std::string cache;
  std::string dump_taps;
};

int cmd_preprocess(const PreprocessOpts& o) {
  const auto entries = ingest::load_manifest(o.manifest);
  ConfigHash ch;
  ch.add("cmd", "preprocess");
  ch.add("manifest", o.manifest);
  const uint64_t hash = ch.value();

  const dsp::FirFilter hp = dsp::design_highpass();
  if (!o.dump_taps.empty()) {
    std::string csv = "tap\n";
    char line[40];
    for (double t : hp.taps) {
      std::snprintf(line, sizeof line, "%.17g\n", t);
      csv += line;
    }
    write_file_atomic(o.dump_taps, csv);
  }

  struct Unit {
    size_t subject;
    size_t session;
    size_t ordinal;
  };
  std::vector<Unit> units;
  for (size_t si = 0; si < entries.size(); ++si)
    for (size_t mi = 0; mi < entries[si].session_ids.size(); ++mi)
      units.push_back({si, mi, units.size()});

  struct Outcome {
    ingest::RejectionReport report;
    std::string error;  // unreadable/unparseable file
    std::string bin_file;
    uint32_t n = 0;
  };
  std::vector<Outcome> outcomes(units.size());

  parallel_for(units.size(), [&](size_t ui) {
    const Unit& u = units[ui];
    const ingest::ManifestEntry& e = entries[u.subject];
    Outcome& out = outcomes[ui];
    out.report.session_path = e.session_ids[u.session];
    try {
      const ingest::RawSession raw = ingest::read_session_csv(
          e.session_paths[u.session], e.annotation.subject_id, e.session_ids[u.session]);
      out.report = ingest::validate_session(raw);
      if (!out.report.accepted) return;
      ingest::Session s = dsp::resample_to_100hz(raw, out.report.est_fs);
      s = dsp::trim_edges(s);
      s = dsp::remove_gravity(s, hp);
      char name[32];
      std::snprintf(name, sizeof name, "s%06zu.bin", u.ordinal);
      out.bin_file = std::string("sessions/") + name;
      out.n = static_cast<uint32_t>(s.n());
      write_session_bin(fs::path(o.cache) / out.bin_file, s, hash);
    } catch (const std::exception& ex) {
      out.error = ex.what();
      out.report.accepted = false;
    }
  });

  // Rejection report, one JSON line per session in manifest order.
  std::string jsonl = json{{"config_hash", hex64(hash)}}.dump() + "\n";
  size_t accepted = 0, rejected = 0, errors = 0;
  for (const Outcome& out : outcomes) {
    json row{{"session", out.report.session_path}};
    if (!out.error.empty()) {
      row["verdict"] = "error";
      row["message"] = out.error;
      errors++;
    } else if (out.report.accepted) {
      row["verdict"] = "accepted";
      accepted++;
    } else {
      row["verdict"] = "rejected";
      row["reason"] = ingest::reject_reason_name(out.report.reason);
      rejected++;
    }
    jsonl += row.dump() + "\n";
  }
  write_file_atomic(fs::path(o.cache) / "rejections.jsonl", jsonl);

  // Index of accepted, conditioned sessions plus annotations.
  json subjects = json::array();
  size_t ui = 0;
  for (const ingest::ManifestEntry& e : entries) {
    json sessions = json::array();
    for (size_t mi = 0; mi < e.session_ids.size(); ++mi, ++ui) {
      const Outcome& out = outcomes[ui];
      if (out.bin_file.empty()) continue;
      sessions.push_back(json{{"id", e.session_ids[mi]}, {"file", out.bin_file}, {"n", out.n}});
    }
    const ingest::SubjectAnnotation& a = e.annotation;
    subjects.push_back(json{{"id", a.subject_id},
                            {"updrs16", a.updrs16},
                            {"updrs20", {a.updrs20_left, a.updrs20_right}},
                            {"updrs21", {a.updrs21_left, a.updrs21_right}},
                            {"sp_expert", a.sp_expert},
                            {"sessions", sessions}});
  }
  json index{{"config_hash", hex64(hash)}, {"subjects", subjects}};
  write_file_atomic(fs::path(o.cache) / "index.json", index.dump(2) + "\n");

  std::printf("preprocess: %zu accepted, %zu rejected, %zu errors (of %zu)\n", accepted, rejected,
              errors, outcomes.size());
  if (!outcomes.empty() && errors == outcomes.size()) return 2;
  return 0;
}

// ------------------------------------------------------------ build-bags ----

struct BuildBagsOpts {
  std::string cache;
  double e_min = 0.15;
  uint32_t k_t = 1500;
  uint32_t min_segments = 30;
  std::string dump_spectra;
};

struct CacheIndex {
  struct SessionRef {
    std::string id;
    std::string file;
  };
  struct Subject {
    ingest::SubjectAnnotation annotation;
    std::vector<SessionRef> sessions;
  };
  std::vector<Subject> subjects;
};

CacheIndex read_index(const fs::path& cache) {
  const fs::path p = cache / "index.json";
  if (!fs::exists(p)) throw Error(ErrorCode::no_data, "no index.json under " + cache.string());
  json doc;
  try {
    doc = json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("index.json: ") + e.what());
  }
  CacheIndex idx;
  for (const json& s : doc["subjects"]) {
    CacheIndex::Subject sub;
    sub.annotation.subject_id = s["id"].get<std::string>();
    sub.annotation.updrs16 = s["updrs16"].get<int>();
    sub.annotation.updrs20_left = s["updrs20"][0].get<int>();
    sub.annotation.updrs20_right = s["updrs20"][1].get<int>();
    sub.annotation.updrs21_left = s["updrs21"][0].get<int>();
    sub.annotation.updrs21_right = s["updrs21"][1].get<int>();
    sub.annotation.sp_expert = s["sp_expert"].get<int>();
    for (const json& ses : s["sessions"])
      sub.sessions.push_back({ses["id"].get<std::string>(), ses["file"].get<std::string>()});
    idx.subjects.push_back(std::move(sub));
  }
  return idx;
}

std::string bag_file_name(size_t ordinal, const std::string& subject_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "bag%04zu_", ordinal);
  return std::string(buf) + sanitize(subject_id) + ".bag";
}

int cmd_build_bags(const BuildBagsOpts& o) {
  const CacheIndex idx = read_index(o.cache);
  if (idx.subjects.empty()) throw Error(ErrorCode::no_data, "cache lists no subjects");

  ConfigHash ch;
  ch.add("cmd", "build-bags");
  ch.add("e_min", o.e_min);
  ch.add("k_t", static_cast<uint64_t>(o.k_t));
  ch.add("min_segments", static_cast<uint64_t>(o.min_segments));
  const uint64_t hash = ch.value();

  struct SubjectBags {
    bags::Bag bag;
    bool eligible = false;
    std::string file;
    std::string spectra_csv;
  };
  std::vector<SubjectBags> results(idx.subjects.size());

  parallel_for(idx.subjects.size(), [&](size_t si) {
    const CacheIndex::Subject& sub = idx.subjects[si];
    SubjectBags& res = results[si];
    std::vector<bags::Instance> pool;
    for (const CacheIndex::SessionRef& ref : sub.sessions) {
      ingest::Session s = read_session_bin(fs::path(o.cache) / ref.file);
      std::vector<bags::Instance> segs = bags::segment_session(s);
      for (bags::Instance& inst : segs) pool.push_back(std::move(inst));
    }
    if (!o.dump_spectra.empty()) {
      char num[24];
      for (const bags::Instance& inst : pool) {
        std::string line;
        for (int k = 0; k < dsp::kSpectrumBins; ++k) {
          std::snprintf(num, sizeof num, k ? ",%.9g" : "%.9g", inst.spectrum[k]);
          line += num;
        }
        res.spectra_csv += line + "\n";
      }
    }
    pool = bags::filter_segments(std::move(pool), o.e_min);
    res.bag = bags::build_bag(sub.annotation.subject_id, std::move(pool),
                              bags::Labels::from(sub.annotation), o.k_t);
    res.eligible = bags::subject_eligible(res.bag, o.min_segments);
    if (res.eligible) {
      res.file = bag_file_name(si, sub.annotation.subject_id);
      bags::write_bag(fs::path(o.cache) / "bags" / res.file, res.bag, hash);
    }
  });

  json eligible = json::array(), ineligible = json::array();
  for (const SubjectBags& res : results) {
    if (res.eligible)
      eligible.push_back(json{{"id", res.bag.subject_id},
                              {"file", res.file},
                              {"survivors", res.bag.survivors},
                              {"real", res.bag.real_count()}});
    else
      ineligible.push_back(json{{"id", res.bag.subject_id}, {"survivors", res.bag.survivors}});
  }
  json report{{"config_hash", hex64(hash)}, {"eligible", eligible}, {"ineligible", ineligible}};
  write_file_atomic(fs::path(o.cache) / "bags" / "eligibility.json", report.dump(2) + "\n");

  if (!o.dump_spectra.empty()) {
    std::string csv;
    for (const SubjectBags& res : results) csv += res.spectra_csv;
    write_file_atomic(o.dump_spectra, csv);
  }

  std::printf("build-bags: %zu eligible, %zu ineligible (K_t=%u, E_min=%g, min_segments=%u)\n",
              eligible.size(), ineligible.size(), o.k_t, o.e_min, o.min_segments);
  return 0;
}

// ------------------------------------------------------------ train/eval ----

std::vector<bags::Bag> load_eligible_bags(const fs::path& cache) {
  const fs::path p = cache / "bags" / "eligibility.json";
  if (!fs::exists(p)) throw Error(ErrorCode::no_data, "no bags under " + cache.string());
  json doc;
  try {
    doc = json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("eligibility.json: ") + e.what());
  }
  std::vector<bags::Bag> out;
  for (const json& e : doc["eligible"])
    out.push_back(bags::read_bag(cache / "bags" / e["file"].get<std::string>()));
  if (out.empty()) throw Error(ErrorCode::no_data, "no eligible bags");
  return out;
}

void print_param_table(mil::Variant variant) {
  mil::MilModel<float> model = mil::build_model<float>(variant, 0);
  std::printf("trainable parameters (%s variant):\n", mil::variant_name(variant));
  for (const mil::ParamRow& row : mil::parameter_table(model))
    std::printf("  %-44s %8zu\n", row.name.c_str(), row.count);
  std::printf("  %-44s %8zu\n", "total", mil::total_params(model));
}

struct TrainOpts {
  std::string cache, out;
  std::string variant = "cnn";
  int epochs = 0;  // 0 = variant default
  uint64_t seed = 1;
  std::string train_labels = "sp_expert";
  uint32_t bag_size = 0;  // 0 = as built
};

int cmd_train(const TrainOpts& o) {
  std::vector<bags::Bag> all = load_eligible_bags(o.cache);
  if (o.bag_size)
    for (bags::Bag& b : all) b = bags::truncate_bag(b, o.bag_size);
  const mil::Variant variant = mil::variant_from_name(o.variant);

  mil::TrainConfig cfg;
  cfg.variant = variant;
  cfg.epochs = o.epochs > 0 ? o.epochs : mil::default_epochs(variant);
  cfg.seed = o.seed;
  cfg.train_scheme = ingest::scheme_from_name(o.train_labels);

  print_param_table(variant);
  std::vector<const bags::Bag*> ptrs;
  for (const bags::Bag& b : all) ptrs.push_back(&b);
  mil::TrainResult<float> tr = mil::train<float>(ptrs, cfg);
  std::printf("train: %zu bags, %d epochs, loss %.4f -> %.4f\n", ptrs.size(), cfg.epochs,
              tr.epoch_loss.front(), tr.epoch_loss.back());
  mil::write_checkpoint(fs::path(o.out) / "model.ckpt", tr.model);
  return 0;
}

struct EvalOpts {
  std::string cache, out;
  std::string variant = "cnn";
  std::string model = "attention";  // attention | simple
  std::string scheme = "loso";
  int k = 5, repeats = 10;
  int trials = 0;  // 0 = scheme default
  int epochs = 0;
  uint64_t seed = 1;
  std::string train_labels = "sp_expert";
  std::string eval_labels = "all";
  uint32_t bag_size = 0;
  bool save_checkpoints = true;
};

eval::TrainPredictFn make_attention_trainer(const mil::TrainConfig& base, const fs::path& ckpt_dir) {
  return [base, ckpt_dir](const eval::FoldRun& run, const std::vector<const bags::Bag*>& train,
                          const std::vector<const bags::Bag*>& test) {
    mil::TrainConfig cfg = base;
    cfg.seed = run.seed;
    mil::TrainResult<float> tr = mil::train<float>(train, cfg);
    if (!ckpt_dir.empty()) {
      char name[48];
      std::snprintf(name, sizeof name, "fold%03d_trial%02d.ckpt", run.fold_index, run.trial_index);
      mil::write_checkpoint(ckpt_dir / name, tr.model);
    }
    std::vector<eval::SubjectPrediction> out;
    for (const bags::Bag* b : test) {
      const mil::BagPrediction p = mil::predict(tr.model, *b);
      eval::SubjectPrediction sp{b->subject_id, p.probability, p.label, {}};
      if (b->real_count() >= 4) {
        const mil::AttentionReport rep = mil::attention_report(tr.model, *b, 2);
        for (const mil::AttentionEntry& e : rep.top)
          sp.top_instances.push_back({e.session_id, e.offset, e.weight});
      }
      out.push_back(std::move(sp));
    }
    return out;
  };
}

eval::TrainPredictFn make_simple_trainer(const mil::TrainConfig& base) {
  return [base](const eval::FoldRun& run, const std::vector<const bags::Bag*>& train,
                const std::vector<const bags::Bag*>& test) {
    mil::TrainConfig cfg = base;
    cfg.seed = run.seed;
    mil::SimpleTrainResult<float> tr = mil::simple_mil_train<float>(train, cfg);
    std::vector<eval::SubjectPrediction> out;
    for (const bags::Bag* b : test) {
      const mil::BagPrediction p = mil::simple_mil_predict(tr.model, *b);
      out.push_back({b->subject_id, p.probability, p.label, {}});
    }
    return out;
  };
}

eval::FoldPlan make_plan(const EvalOpts& o, const std::vector<std::string>& ids) {
  if (o.scheme == "loso")
    return eval::plan_loso(ids, o.trials > 0 ? o.trials : 10, o.seed);
  if (o.scheme == "rkf")
    return eval::plan_rkf(ids, o.k, o.repeats, o.trials > 0 ? o.trials : 5, o.seed);
  throw Error(ErrorCode::bad_config, "scheme must be loso or rkf");
}

uint64_t eval_config_hash(const EvalOpts& o, const char* cmd) {
  ConfigHash ch;
  ch.add("cmd", cmd);
  ch.add("variant", o.variant);
  ch.add("model", o.model);
  ch.add("scheme", o.scheme);
  ch.add("k", static_cast<int64_t>(o.k));
  ch.add("repeats", static_cast<int64_t>(o.repeats));
  ch.add("trials", static_cast<int64_t>(o.trials));
  ch.add("epochs", static_cast<int64_t>(o.epochs));
  ch.add("seed", o.seed);
  ch.add("train_labels", o.train_labels);
  ch.add("eval_labels", o.eval_labels);
  ch.add("bag_size", static_cast<uint64_t>(o.bag_size));
  return ch.value();
}

int cmd_evaluate(const EvalOpts& o) {
  std::vector<bags::Bag> all = load_eligible_bags(o.cache);
  if (o.bag_size)
    for (bags::Bag& b : all) b = bags::truncate_bag(b, o.bag_size);

  std::vector<std::string> ids;
  for (const bags::Bag& b : all) ids.push_back(b.subject_id);
  const eval::FoldPlan plan = make_plan(o, ids);

  const mil::Variant variant = mil::variant_from_name(o.variant);
  mil::TrainConfig base;
  base.variant = variant;
  base.epochs = o.epochs > 0 ? o.epochs : mil::default_epochs(variant);
  base.train_scheme = ingest::scheme_from_name(o.train_labels);

  const uint64_t hash = eval_config_hash(o, "evaluate");
  print_param_table(variant);

  fs::path ckpt_dir;
  if (o.save_checkpoints) {
    ckpt_dir = fs::path(o.out) / "checkpoints";
    fs::create_directories(ckpt_dir);
  }
  const std::string model_name = o.model == "simple" ? "simple-mil" : ("deep-mil-" + o.variant);
  eval::TrainPredictFn fn = o.model == "simple" ? make_simple_trainer(base)
                                                : make_attention_trainer(base, ckpt_dir);

  const eval::ProtocolResult result =
      eval::run_protocol(plan, all, parse_eval_labels(o.eval_labels), fn);

  write_file_atomic(fs::path(o.out) / "report.json",
                    eval::protocol_to_json(plan, result, model_name, hash));
  write_file_atomic(fs::path(o.out) / "report.csv",
                    eval::reports_to_csv(result.reports, model_name, hash));
  write_file_atomic(fs::path(o.out) / "predictions.jsonl",
                    eval::predictions_to_jsonl(plan, result));

  std::printf("evaluate: %zu folds x %d trials (%s)\n", plan.folds.size(), plan.trials_per_fold,
              model_name.c_str());
  for (const eval::MetricsReport& rep : result.reports)
    std::printf("  %-10s f1 %.3f +- %.3f  precision %.3f  sensitivity %.3f  specificity %.3f\n",
                ingest::scheme_name(rep.scheme), rep.f1.mean, rep.f1.stddev, rep.precision.mean,
                rep.sensitivity.mean, rep.specificity.mean);
  return 0;
}

// ----------------------------------------------------------------- sweep ----

struct SweepOpts {
  EvalOpts eval;
  std::string sizes = "10,100,250,500,1000,1500";
};

int cmd_sweep(const SweepOpts& o) {
  std::vector<bags::Bag> all = load_eligible_bags(o.eval.cache);
  std::vector<std::string> ids;
  for (const bags::Bag& b : all) ids.push_back(b.subject_id);
  const eval::FoldPlan plan = make_plan(o.eval, ids);

  std::vector<uint32_t> sizes;
  {
    size_t start = 0;
    while (start <= o.sizes.size()) {
      size_t comma = o.sizes.find(',', start);
      if (comma == std::string::npos) comma = o.sizes.size();
      const std::string tok = o.sizes.substr(start, comma - start);
      if (!tok.empty()) sizes.push_back(static_cast<uint32_t>(std::stoul(tok)));
      start = comma + 1;
    }
  }
  if (sizes.empty()) throw Error(ErrorCode::bad_config, "no sweep sizes given");

  const mil::Variant variant = mil::variant_from_name(o.eval.variant);
  mil::TrainConfig base;
  base.variant = variant;
  base.epochs = o.eval.epochs > 0 ? o.eval.epochs : mil::default_epochs(variant);
  base.train_scheme = ingest::scheme_from_name(o.eval.train_labels);
  // The sweep tracks one metric; default to the expert labels.
  const ingest::Scheme scheme = ingest::scheme_from_name(
      o.eval.eval_labels == "all" ? "sp_expert" : o.eval.eval_labels);

  const uint64_t hash = eval_config_hash(o.eval, "sweep");
  const eval::ProtocolRunner runner = [&](const std::vector<bags::Bag>& truncated,
                                          uint32_t k_t) -> eval::MetricsReport {
    eval::TrainPredictFn fn = o.eval.model == "simple" ? make_simple_trainer(base)
                                                       : make_attention_trainer(base, fs::path());
    const eval::ProtocolResult res = eval::run_protocol(plan, truncated, {scheme}, fn);
    std::printf("sweep: K_t=%u f1 %.3f +- %.3f\n", k_t, res.reports[0].f1.mean,
                res.reports[0].f1.stddev);
    return res.reports[0];
  };

  const std::vector<eval::SweepRow> rows = eval::bag_size_sweep(sizes, all, runner);
  write_file_atomic(fs::path(o.eval.out) / "sweep.csv", eval::sweep_to_csv(rows, hash));
  return 0;
}

// ------------------------------------------------------------- attention ----

struct AttentionOpts {
  std::string checkpoint, bag, out;
  int top = 2;
  std::string svg_path;
};

int cmd_attention(const AttentionOpts& o) {
  mil::MilModel<float> model = mil::read_checkpoint<float>(o.checkpoint);
  const bags::Bag bag = bags::read_bag(o.bag);
  const mil::AttentionReport rep = mil::attention_report(model, bag, o.top);
  const mil::BagPrediction pred = mil::predict(model, bag);

  auto entry_json = [](const mil::AttentionEntry& e) {
    return json{{"session", e.session_id},
                {"offset", e.offset},
                {"weight", e.weight},
                {"band_energy", e.band_e}};
  };
  json top = json::array(), bottom = json::array();
  for (const mil::AttentionEntry& e : rep.top) top.push_back(entry_json(e));
  for (const mil::AttentionEntry& e : rep.bottom) bottom.push_back(entry_json(e));
  json doc{{"subject_id", bag.subject_id},
           {"probability", pred.probability},
           {"label", pred.label},
           {"top", top},
           {"bottom", bottom}};
  write_file_atomic(o.out, doc.dump(2) + "\n");

  if (!o.svg_path.empty()) {
    std::vector<svg::Panel> panels;
    char title[160];
    auto add_panel = [&](const mil::AttentionEntry& e, const char* tag) {
      std::snprintf(title, sizeof title, "%s a=%.4f band_e=%.3f %s@%u", tag, e.weight, e.band_e,
                    e.session_id.c_str(), e.offset);
      panels.push_back({title, bag.instances[e.slot].raw, dsp::kSegmentSamples});
    };
    for (const mil::AttentionEntry& e : rep.top) add_panel(e, "top");
    for (const mil::AttentionEntry& e : rep.bottom) add_panel(e, "bottom");
    write_file_atomic(o.svg_path, svg::render_segments(panels));
  }
  std::printf("attention: subject %s p=%.4f, %d top + %d bottom instances\n",
              bag.subject_id.c_str(), pred.probability, o.top, o.top);
  return 0;
}

int classify_exit(const Error& e) {
  switch (e.code()) {
    case ErrorCode::bad_config:
      return 1;
    case ErrorCode::parse:
    case ErrorCode::io:
    case ErrorCode::no_data:
    case ErrorCode::unannotated_subject:
    case ErrorCode::duplicate_subject:
    case ErrorCode::empty:
      return 2;
    default:
      return 3;
  }
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"Tremor detection from in-the-wild accelerometer recordings"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML-style config file; flags override file values");

  SynthOpts synth_opts;
  CLI::App* c_synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  c_synth->add_option("--out", synth_opts.out, "Output directory")->required();
  c_synth->add_option("--subjects", synth_opts.spec.n_subjects, "Number of subjects");
  c_synth->add_option("--positive-fraction", synth_opts.spec.positive_fraction,
                      "Fraction of tremor-positive subjects");
  c_synth->add_option("--sessions", synth_opts.spec.sessions_per_subject, "Sessions per subject");
  c_synth->add_option("--session-seconds", synth_opts.spec.session_seconds, "Session length");
  c_synth->add_option("--tremor-freq", synth_opts.spec.tremor_freq, "Burst frequency in [3,7] Hz");
  c_synth->add_option("--tremor-amplitude", synth_opts.spec.tremor_amplitude, "Burst peak m/s^2");
  c_synth->add_option("--burst-fraction", synth_opts.spec.burst_fraction,
                      "Fraction of segments with bursts (positive subjects)");
  c_synth->add_option("--noise-level", synth_opts.spec.noise_level, "Noise std in m/s^2");
  c_synth->add_option("--seed", synth_opts.spec.seed, "Corpus seed");

  PreprocessOpts pre_opts;
  CLI::App* c_pre = app.add_subcommand("preprocess", "Validate, resample, trim, remove gravity");
  c_pre->add_option("--manifest", pre_opts.manifest, "Manifest JSON")->required();
  c_pre->add_option("--cache", pre_opts.cache, "Cache directory")->required();
  c_pre->add_option("--dump-taps", pre_opts.dump_taps, "Write high-pass taps as CSV");

  BuildBagsOpts bag_opts;
  CLI::App* c_bags = app.add_subcommand("build-bags", "Segment, filter and rank into bags");
  c_bags->add_option("--cache", bag_opts.cache, "Cache directory")->required();
  c_bags->add_option("--e-min", bag_opts.e_min, "Minimum segment energy");
  c_bags->add_option("--bag-size", bag_opts.k_t, "Bag capacity K_t");
  c_bags->add_option("--min-segments", bag_opts.min_segments, "Subject eligibility minimum");
  c_bags->add_option("--dump-spectra", bag_opts.dump_spectra, "Write per-segment spectra CSV");

  TrainOpts train_opts;
  CLI::App* c_train = app.add_subcommand("train", "Train one model on all eligible bags");
  c_train->add_option("--cache", train_opts.cache, "Cache directory")->required();
  c_train->add_option("--out", train_opts.out, "Output directory")->required();
  c_train->add_option("--variant", train_opts.variant, "fc or cnn")
      ->check(CLI::IsMember({"fc", "cnn"}));
  c_train->add_option("--epochs", train_opts.epochs, "Epochs (default: fc 1000, cnn 50)");
  c_train->add_option("--seed", train_opts.seed, "Training seed");
  c_train->add_option("--train-labels", train_opts.train_labels, "Annotation scheme for training");
  c_train->add_option("--bag-size", train_opts.bag_size, "Truncate bags to this capacity");

  EvalOpts eval_opts;
  CLI::App* c_eval = app.add_subcommand("evaluate", "Cross-validated protocol with reports");
  c_eval->add_option("--cache", eval_opts.cache, "Cache directory")->required();
  c_eval->add_option("--out", eval_opts.out, "Output directory")->required();
  c_eval->add_option("--variant", eval_opts.variant, "fc or cnn")
      ->check(CLI::IsMember({"fc", "cnn"}));
  c_eval->add_option("--model", eval_opts.model, "attention or simple")
      ->check(CLI::IsMember({"attention", "simple"}));
  c_eval->add_option("--scheme", eval_opts.scheme, "loso or rkf")
      ->check(CLI::IsMember({"loso", "rkf"}));
  c_eval->add_option("--k", eval_opts.k, "Folds per repetition (rkf)");
  c_eval->add_option("--repeats", eval_opts.repeats, "Repetitions (rkf)");
  c_eval->add_option("--trials", eval_opts.trials, "Trials per fold (default: loso 10, rkf 5)");
  c_eval->add_option("--epochs", eval_opts.epochs, "Epochs (default: fc 1000, cnn 50)");
  c_eval->add_option("--seed", eval_opts.seed, "Base seed");
  c_eval->add_option("--train-labels", eval_opts.train_labels, "Annotation scheme for training");
  c_eval->add_option("--eval-labels", eval_opts.eval_labels,
                     "updrs16|updrs20|updrs21|sp_expert|all (or a comma list)");
  c_eval->add_option("--bag-size", eval_opts.bag_size, "Truncate bags to this capacity");
  c_eval->add_flag("--save-checkpoints,!--no-checkpoints", eval_opts.save_checkpoints,
                   "Write per-fold checkpoints (default on)");

  SweepOpts sweep_opts;
  CLI::App* c_sweep = app.add_subcommand("sweep", "Bag-size sweep using bag prefixes");
  c_sweep->add_option("--cache", sweep_opts.eval.cache, "Cache directory")->required();
  c_sweep->add_option("--out", sweep_opts.eval.out, "Output directory")->required();
  c_sweep->add_option("--sizes", sweep_opts.sizes, "Comma-separated bag sizes");
  c_sweep->add_option("--variant", sweep_opts.eval.variant, "fc or cnn")
      ->check(CLI::IsMember({"fc", "cnn"}));
  c_sweep->add_option("--model", sweep_opts.eval.model, "attention or simple")
      ->check(CLI::IsMember({"attention", "simple"}));
  c_sweep->add_option("--scheme", sweep_opts.eval.scheme, "loso or rkf")
      ->check(CLI::IsMember({"loso", "rkf"}));
  c_sweep->add_option("--k", sweep_opts.eval.k, "Folds per repetition (rkf)");
  c_sweep->add_option("--repeats", sweep_opts.eval.repeats, "Repetitions (rkf)");
  c_sweep->add_option("--trials", sweep_opts.eval.trials, "Trials per fold");
  c_sweep->add_option("--epochs", sweep_opts.eval.epochs, "Training epochs");
  c_sweep->add_option("--seed", sweep_opts.eval.seed, "Base seed");
  c_sweep->add_option("--train-labels", sweep_opts.eval.train_labels, "Training annotation scheme");
  c_sweep->add_option("--eval-labels", sweep_opts.eval.eval_labels,
                      "Evaluation scheme tracked by the sweep");

  AttentionOpts att_opts;
  CLI::App* c_att = app.add_subcommand("attention", "Report top/bottom attention instances");
  c_att->add_option("--checkpoint", att_opts.checkpoint, "Model checkpoint")->required();
  c_att->add_option("--bag", att_opts.bag, "Bag cache file")->required();
  c_att->add_option("--out", att_opts.out, "Output JSON path")->required();
  c_att->add_option("--top", att_opts.top, "Instances per end");
  c_att->add_option("--svg", att_opts.svg_path, "Optional SVG of the plotted segments");

  std::vector<const char*> argv;
  argv.push_back("miltremor");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*c_synth) return cmd_synth(synth_opts);
    if (*c_pre) return cmd_preprocess(pre_opts);
    if (*c_bags) return cmd_build_bags(bag_opts);
    if (*c_train) return cmd_train(train_opts);
    if (*c_eval) return cmd_evaluate(eval_opts);
    if (*c_sweep) return cmd_sweep(sweep_opts);
    if (*c_att) return cmd_attention(att_opts);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return classify_exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace miltremor::cli
