#pragma once

// Subject-level cross-validation: LOSO and repeated k-fold plans, metric
// computation with explicit zero-denominator conventions, multi-trial
// aggregation and the bag-size sweep.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "miltremor/bags.hpp"

namespace miltremor::eval {

enum class PlanScheme { loso, rkf };

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  int group = 0;  // trial pooling group: 0 for LOSO, repetition index for RkF
};

struct FoldPlan {
  PlanScheme scheme = PlanScheme::loso;
  int k = 0;        // rkf only
  int repeats = 0;  // rkf only
  int trials_per_fold = 1;
  uint64_t base_seed = 0;
  std::vector<Fold> folds;

  int groups() const { return scheme == PlanScheme::loso ? 1 : repeats; }
  uint64_t trial_seed(int fold_index, int trial_index) const {
    return derive_seed(base_seed, static_cast<uint64_t>(fold_index),
                       static_cast<uint64_t>(trial_index));
  }
};

// One fold per subject, in input order.
FoldPlan plan_loso(const std::vector<std::string>& subjects, int trials = 10, uint64_t seed = 1);

// Per repetition: seeded shuffle, then split into k near-equal parts.
FoldPlan plan_rkf(const std::vector<std::string>& subjects, int k = 5, int repeats = 10,
                  int trials = 5, uint64_t seed = 1);

struct TrialCounts {
  int tp = 0, fp = 0, tn = 0, fn = 0;
  int total() const { return tp + fp + tn + fn; }
};

struct Metrics {
  double precision = 0, sensitivity = 0, specificity = 0, f1 = 0;
};

// Conventions: precision := 0 when TP+FP = 0; specificity := 1 when TN+FP = 0;
// sensitivity := 1 when TP+FN = 0; f1 := 0 when precision+sensitivity = 0.
Metrics metrics_from_counts(const TrialCounts& c);
TrialCounts count_confusion(std::span<const int> predictions, std::span<const int> labels);
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels);

struct MetricStat {
  double mean = 0, stddev = 0;
};

struct MetricsReport {
  ingest::Scheme scheme = ingest::Scheme::sp_expert;
  std::vector<TrialCounts> per_trial;
  std::vector<Metrics> trial_metrics;
  MetricStat precision, sensitivity, specificity, f1;
};

MetricsReport summarize_trials(ingest::Scheme scheme, const std::vector<TrialCounts>& trials);

struct TopInstance {
  std::string session;
  uint32_t offset = 0;
  double weight = 0.0;
};

struct SubjectPrediction {
  std::string subject_id;
  double probability = 0.0;
  int label = 0;
  std::vector<TopInstance> top_instances;  // highest attention weights, descending
};

struct FoldRun {
  int fold_index = 0;
  int trial_index = 0;
  uint64_t seed = 0;
};

// Trains on the fold's training bags and predicts its test bags. The trainers
// used in production wrap mil::train/predict; tests may inject stubs.
using TrainPredictFn = std::function<std::vector<SubjectPrediction>(
    const FoldRun&, const std::vector<const bags::Bag*>& train,
    const std::vector<const bags::Bag*>& test)>;

struct ProtocolResult {
  std::vector<MetricsReport> reports;  // one per requested evaluation scheme
  // predictions[fold][trial], in plan order
  std::vector<std::vector<std::vector<SubjectPrediction>>> predictions;
  std::vector<std::vector<uint64_t>> seeds;  // [fold][trial], recorded for replay
};

// Runs every (fold, trial) unit — in parallel across workers — and aggregates
// per-trial confusion counts against each evaluation scheme's labels.
ProtocolResult run_protocol(const FoldPlan& plan, const std::vector<bags::Bag>& all_bags,
                            const std::vector<ingest::Scheme>& eval_schemes,
                            const TrainPredictFn& fn);

struct SweepRow {
  uint32_t k_t = 0;
  double f1_mean = 0, f1_std = 0;
};

// Runs `run` on prefix-truncated copies of the bags for each requested size.
using ProtocolRunner = std::function<MetricsReport(const std::vector<bags::Bag>&, uint32_t k_t)>;
std::vector<SweepRow> bag_size_sweep(const std::vector<uint32_t>& sizes,
                                     const std::vector<bags::Bag>& bags_at_max,
                                     const ProtocolRunner& run);

// --- report output ----------------------------------------------------------

std::string report_to_json(const MetricsReport& rep);
std::string protocol_to_json(const FoldPlan& plan, const ProtocolResult& result,
                             const std::string& model_name, uint64_t config_hash);
std::string reports_to_csv(const std::vector<MetricsReport>& reports, const std::string& model_name,
                           uint64_t config_hash);
std::string sweep_to_csv(const std::vector<SweepRow>& rows, uint64_t config_hash);
std::string predictions_to_jsonl(const FoldPlan& plan, const ProtocolResult& result);

}  // namespace miltremor::eval
