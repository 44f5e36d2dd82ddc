#include "miltremor/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <nlohmann/json.hpp>

namespace miltremor::eval {

using nlohmann::json;

namespace {

void check_unique(const std::vector<std::string>& subjects) {
  std::set<std::string> seen;
  for (const std::string& s : subjects)
    if (!seen.insert(s).second) throw Error(ErrorCode::duplicate_subject, s);
}

}  // namespace

FoldPlan plan_loso(const std::vector<std::string>& subjects, int trials, uint64_t seed) {
  if (subjects.size() < 2) throw Error(ErrorCode::too_few, "LOSO needs at least two subjects");
  check_unique(subjects);
  FoldPlan plan;
  plan.scheme = PlanScheme::loso;
  plan.trials_per_fold = trials;
  plan.base_seed = seed;
  for (size_t i = 0; i < subjects.size(); ++i) {
    Fold f;
    f.test_ids.push_back(subjects[i]);
    for (size_t j = 0; j < subjects.size(); ++j)
      if (j != i) f.train_ids.push_back(subjects[j]);
    f.group = 0;
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

FoldPlan plan_rkf(const std::vector<std::string>& subjects, int k, int repeats, int trials,
                  uint64_t seed) {
  if (k < 2 || static_cast<size_t>(k) > subjects.size())
    throw Error(ErrorCode::bad_k, "k must be in [2, n_subjects]");
  if (repeats < 1) throw Error(ErrorCode::precondition, "repeats must be >= 1");
  check_unique(subjects);
  FoldPlan plan;
  plan.scheme = PlanScheme::rkf;
  plan.k = k;
  plan.repeats = repeats;
  plan.trials_per_fold = trials;
  plan.base_seed = seed;
  const size_t n = subjects.size();
  for (int rep = 0; rep < repeats; ++rep) {
    std::vector<std::string> order = subjects;
    Rng rng(derive_seed(seed, 0x726b66ULL, static_cast<uint64_t>(rep)));
    rng.shuffle(order);
    // First (n mod k) folds get one extra subject.
    size_t pos = 0;
    for (int fi = 0; fi < k; ++fi) {
      const size_t size = n / k + (static_cast<size_t>(fi) < n % k ? 1 : 0);
      Fold f;
      f.group = rep;
      f.test_ids.assign(order.begin() + pos, order.begin() + pos + size);
      for (size_t j = 0; j < n; ++j) {
        const bool in_test = j >= pos && j < pos + size;
        if (!in_test) f.train_ids.push_back(order[j]);
      }
      pos += size;
      plan.folds.push_back(std::move(f));
    }
  }
  return plan;
}

Metrics metrics_from_counts(const TrialCounts& c) {
  Metrics m;
  m.precision = (c.tp + c.fp) ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
  m.sensitivity = (c.tp + c.fn) ? static_cast<double>(c.tp) / (c.tp + c.fn) : 1.0;
  m.specificity = (c.tn + c.fp) ? static_cast<double>(c.tn) / (c.tn + c.fp) : 1.0;
  const double ps = m.precision + m.sensitivity;
  m.f1 = ps > 0.0 ? 2.0 * m.precision * m.sensitivity / ps : 0.0;
  return m;
}

TrialCounts count_confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw Error(ErrorCode::precondition, "predictions and labels differ in length");
  if (predictions.empty()) throw Error(ErrorCode::empty, "no predictions to score");
  TrialCounts c;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i] ? 1 : 0, y = labels[i] ? 1 : 0;
    if (p && y)
      c.tp++;
    else if (p && !y)
      c.fp++;
    else if (!p && !y)
      c.tn++;
    else
      c.fn++;
  }
  return c;
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  return metrics_from_counts(count_confusion(predictions, labels));
}

namespace {

MetricStat stat(const std::vector<double>& v) {
  MetricStat s;
  if (v.empty()) return s;
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double sq = 0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(v.size()));
  return s;
}

}  // namespace

MetricsReport summarize_trials(ingest::Scheme scheme, const std::vector<TrialCounts>& trials) {
  MetricsReport rep;
  rep.scheme = scheme;
  rep.per_trial = trials;
  std::vector<double> p, se, sp, f1;
  for (const TrialCounts& c : trials) {
    const Metrics m = metrics_from_counts(c);
    rep.trial_metrics.push_back(m);
    p.push_back(m.precision);
    se.push_back(m.sensitivity);
    sp.push_back(m.specificity);
    f1.push_back(m.f1);
  }
  rep.precision = stat(p);
  rep.sensitivity = stat(se);
  rep.specificity = stat(sp);
  rep.f1 = stat(f1);
  return rep;
}

ProtocolResult run_protocol(const FoldPlan& plan, const std::vector<bags::Bag>& all_bags,
                            const std::vector<ingest::Scheme>& eval_schemes,
                            const TrainPredictFn& fn) {
  std::map<std::string, const bags::Bag*> by_id;
  for (const bags::Bag& b : all_bags) by_id[b.subject_id] = &b;

  // Train/test disjointness and existence checks before any training starts.
  for (const Fold& f : plan.folds) {
    std::set<std::string> train(f.train_ids.begin(), f.train_ids.end());
    for (const std::string& id : f.test_ids)
      if (train.count(id))
        throw Error(ErrorCode::precondition, "subject " + id + " in both train and test");
    for (const std::string& id : f.train_ids)
      if (!by_id.count(id)) throw Error(ErrorCode::no_data, "no bag for subject " + id);
    for (const std::string& id : f.test_ids)
      if (!by_id.count(id)) throw Error(ErrorCode::no_data, "no bag for subject " + id);
  }

  const int n_folds = static_cast<int>(plan.folds.size());
  const int n_trials = plan.trials_per_fold;
  ProtocolResult result;
  result.predictions.assign(n_folds, std::vector<std::vector<SubjectPrediction>>(n_trials));
  result.seeds.assign(n_folds, std::vector<uint64_t>(n_trials, 0));

  parallel_for(static_cast<size_t>(n_folds) * n_trials, [&](size_t unit) {
    const int fi = static_cast<int>(unit / n_trials);
    const int ti = static_cast<int>(unit % n_trials);
    const Fold& fold = plan.folds[fi];
    std::vector<const bags::Bag*> train, test;
    for (const std::string& id : fold.train_ids) train.push_back(by_id.at(id));
    for (const std::string& id : fold.test_ids) test.push_back(by_id.at(id));
    FoldRun run{fi, ti, plan.trial_seed(fi, ti)};
    result.seeds[fi][ti] = run.seed;
    try {
      result.predictions[fi][ti] = fn(run, train, test);
    } catch (const Error& e) {
      throw Error(e.code(), "fold " + std::to_string(fi) + " trial " + std::to_string(ti) + ": " +
                                e.what());
    }
  });

  // Pool per (group, trial): LOSO pools all folds, RkF pools within a
  // repetition; every pooled unit becomes one scored trial.
  for (ingest::Scheme scheme : eval_schemes) {
    std::vector<TrialCounts> trials;
    for (int g = 0; g < plan.groups(); ++g)
      for (int ti = 0; ti < n_trials; ++ti) {
        std::vector<int> preds, labels;
        for (int fi = 0; fi < n_folds; ++fi) {
          if (plan.folds[fi].group != g) continue;
          for (const SubjectPrediction& sp : result.predictions[fi][ti]) {
            preds.push_back(sp.label);
            labels.push_back(by_id.at(sp.subject_id)->labels.get(scheme));
          }
        }
        trials.push_back(count_confusion(preds, labels));
      }
    result.reports.push_back(summarize_trials(scheme, trials));
  }
  return result;
}

std::vector<SweepRow> bag_size_sweep(const std::vector<uint32_t>& sizes,
                                     const std::vector<bags::Bag>& bags_at_max,
                                     const ProtocolRunner& run) {
  std::vector<SweepRow> rows;
  for (uint32_t k_t : sizes) {
    std::vector<bags::Bag> truncated;
    truncated.reserve(bags_at_max.size());
    for (const bags::Bag& b : bags_at_max) truncated.push_back(bags::truncate_bag(b, k_t));
    const MetricsReport rep = run(truncated, k_t);
    rows.push_back({k_t, rep.f1.mean, rep.f1.stddev});
  }
  return rows;
}

// --- serialization -----------------------------------------------------------

namespace {

json metrics_json(const Metrics& m) {
  return json{{"precision", m.precision},
              {"sensitivity", m.sensitivity},
              {"specificity", m.specificity},
              {"f1", m.f1}};
}

json stat_json(const MetricStat& s) { return json{{"mean", s.mean}, {"std", s.stddev}}; }

json report_json(const MetricsReport& rep) {
  json trials = json::array();
  for (size_t i = 0; i < rep.per_trial.size(); ++i) {
    const TrialCounts& c = rep.per_trial[i];
    json t = metrics_json(rep.trial_metrics[i]);
    t["tp"] = c.tp;
    t["fp"] = c.fp;
    t["tn"] = c.tn;
    t["fn"] = c.fn;
    trials.push_back(t);
  }
  return json{{"scheme", ingest::scheme_name(rep.scheme)},
              {"trials", trials},
              {"precision", stat_json(rep.precision)},
              {"sensitivity", stat_json(rep.sensitivity)},
              {"specificity", stat_json(rep.specificity)},
              {"f1", stat_json(rep.f1)}};
}

}  // namespace

std::string report_to_json(const MetricsReport& rep) { return report_json(rep).dump(2) + "\n"; }

std::string protocol_to_json(const FoldPlan& plan, const ProtocolResult& result,
                             const std::string& model_name, uint64_t config_hash) {
  json folds = json::array();
  for (const Fold& f : plan.folds)
    folds.push_back(json{{"train", f.train_ids}, {"test", f.test_ids}, {"group", f.group}});
  json reports = json::array();
  for (const MetricsReport& rep : result.reports) reports.push_back(report_json(rep));
  json seeds = json::array();
  for (const auto& per_fold : result.seeds) {
    json row = json::array();
    for (uint64_t s : per_fold) row.push_back(hex64(s));
    seeds.push_back(row);
  }
  json doc{{"config_hash", hex64(config_hash)},
           {"model", model_name},
           {"plan",
            json{{"scheme", plan.scheme == PlanScheme::loso ? "loso" : "rkf"},
                 {"k", plan.k},
                 {"repeats", plan.repeats},
                 {"trials_per_fold", plan.trials_per_fold},
                 {"base_seed", hex64(plan.base_seed)},
                 {"folds", folds}}},
           {"seeds", seeds},
           {"reports", reports}};
  return doc.dump(2) + "\n";
}

std::string reports_to_csv(const std::vector<MetricsReport>& reports, const std::string& model_name,
                           uint64_t config_hash) {
  std::string out = "# config_hash=" + hex64(config_hash) + "\n";
  out +=
      "eval_scheme,model,precision_mean,precision_std,sensitivity_mean,sensitivity_std,"
      "specificity_mean,specificity_std,f1_mean,f1_std\n";
  char line[512];
  for (const MetricsReport& rep : reports) {
    std::snprintf(line, sizeof line, "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  ingest::scheme_name(rep.scheme), model_name.c_str(), rep.precision.mean,
                  rep.precision.stddev, rep.sensitivity.mean, rep.sensitivity.stddev,
                  rep.specificity.mean, rep.specificity.stddev, rep.f1.mean, rep.f1.stddev);
    out += line;
  }
  return out;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows, uint64_t config_hash) {
  std::string out = "# config_hash=" + hex64(config_hash) + "\n";
  out += "k_t,f1_mean,f1_std\n";
  char line[128];
  for (const SweepRow& r : rows) {
    std::snprintf(line, sizeof line, "%u,%.6f,%.6f\n", r.k_t, r.f1_mean, r.f1_std);
    out += line;
  }
  return out;
}

std::string predictions_to_jsonl(const FoldPlan& plan, const ProtocolResult& result) {
  std::string out;
  for (size_t fi = 0; fi < result.predictions.size(); ++fi)
    for (size_t ti = 0; ti < result.predictions[fi].size(); ++ti)
      for (const SubjectPrediction& sp : result.predictions[fi][ti]) {
        json top = json::array();
        for (const TopInstance& t : sp.top_instances)
          top.push_back(json{{"session", t.session}, {"offset", t.offset}, {"weight", t.weight}});
        json row{{"fold", fi},
                 {"trial", ti},
                 {"seed", hex64(plan.trial_seed(static_cast<int>(fi), static_cast<int>(ti)))},
                 {"subject_id", sp.subject_id},
                 {"probability", sp.probability},
                 {"label", sp.label},
                 {"top_instances", top}};
        out += row.dump() + "\n";
      }
  return out;
}

}  // namespace miltremor::eval
