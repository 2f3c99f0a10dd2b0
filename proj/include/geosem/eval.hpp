#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geosem/synth.hpp"
#include "geosem/trainer.hpp"

namespace geosem {

enum class ProbeHead { Linear, Mlp };
enum class ProbeTask { Classify, Distribution };

const char* head_name(ProbeHead head);
ProbeHead parse_head(const std::string& name);
std::vector<ProbeHead> parse_heads(const std::string& list);

struct ProbeTrainConfig {
    int hidden_dim = 256;
    double learning_rate = 0.05;
    int max_steps = 2000;
    int early_stop_patience = 50;
    // Inner split of the training portion used only for early stopping.
    double holdout_fraction = 0.1;
};

// Linear head: a single softmax layer. MLP head: one rectified hidden
// layer before the softmax layer.
struct ProbeParams {
    ProbeHead head = ProbeHead::Linear;
    LinearLayer hidden;  // unused for the linear head
    LinearLayer output;
};

// Full-batch Adam on soft cross-entropy (equal to the target-referenced
// KL up to a constant, so one loss serves both tasks).
ProbeParams train_probe(const Matrix& embeddings, const Matrix& targets,
                        ProbeHead head, ProbeTask task, std::uint64_t seed,
                        const ProbeTrainConfig& config = {});

// Softmax probabilities per row.
Matrix probe_predict(const ProbeParams& params, const Matrix& embeddings);

std::vector<int> argmax_rows(const Matrix& probabilities);

struct PrfMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Unweighted mean over all classes in [0, C); empty-denominator ratios
// count as 0.
PrfMetrics macro_prf(std::span<const int> predictions, std::span<const int> labels,
                     int num_classes);

struct DistributionMetrics {
    double l1 = 0.0;
    double chebyshev = 0.0;
    double kl = 0.0;
};

// KL is target-referenced, with a 1e-10 floor and renormalization applied
// to both arguments before the log ratio.
DistributionMetrics distribution_metrics(const Vector& predicted,
                                         const Vector& target);
DistributionMetrics mean_distribution_metrics(const Matrix& predicted,
                                              const Matrix& targets);

struct MetricSummary {
    std::string name;
    std::vector<double> per_seed;
    double mean = 0.0;
    double stdev = 0.0;  // population form, zero for a single seed
};

struct HeadReport {
    ProbeHead head = ProbeHead::Linear;
    std::vector<MetricSummary> metrics;
};

struct EvalReport {
    std::string task;
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    std::vector<HeadReport> heads;
    std::vector<std::string> notes;
};

MetricSummary summarize_metric(const std::string& name,
                               std::vector<double> per_seed);

std::string eval_report_to_json_text(const EvalReport& report);
void write_eval_report_json(const std::string& path, const EvalReport& report);
// One row per head and metric; raw and x100 columns side by side.
void write_eval_report_csv(const std::string& path, const EvalReport& report);

// Per-seed 80/20 split, probes on frozen embeddings, macro P/R/F1.
EvalReport run_luc(const Checkpoint& checkpoint,
                   const std::vector<LucSample>& samples,
                   const std::vector<ProbeHead>& heads,
                   const std::vector<std::uint64_t>& seeds,
                   const ProbeTrainConfig& probe_config = {});

// How a region is turned into an embedding for the distribution probe.
struct SdmOptions {
    bool mean_of_sampled_points = false;
    double sample_radius_degrees = 0.01;
    int samples_per_region = 16;
};

// Per-seed 80/20 split, distribution probes, mean L1/Chebyshev/KL.
EvalReport run_sdm(const Checkpoint& checkpoint,
                   const std::vector<SdmRegion>& regions,
                   const std::vector<ProbeHead>& heads,
                   const std::vector<std::uint64_t>& seeds,
                   const ProbeTrainConfig& probe_config = {},
                   const SdmOptions& options = {});

struct AblationResult {
    std::string variant;
    EvalReport luc;  // heads empty when the task was not run
    EvalReport sdm;
};

// Trains one model per description variant against its store and probes
// each; `store_for` lets callers reuse one store or load one per variant.
std::vector<AblationResult> run_ablation(
    const std::vector<PoiRecord>& records,
    const std::function<const EmbeddingStore&(DescriptionVariant)>& store_for,
    const TrainConfig& base_config,
    const std::vector<LucSample>* luc_samples,
    const std::vector<SdmRegion>* sdm_regions,
    const std::vector<ProbeHead>& heads,
    const std::vector<std::uint64_t>& seeds,
    const ProbeTrainConfig& probe_config = {});

// Columns: variant,task,metric,mean,std (metric names carry the head).
void write_ablation_csv(const std::string& path,
                        const std::vector<AblationResult>& results);

}  // namespace geosem
