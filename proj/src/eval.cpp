#include "geosem/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace geosem {

namespace {

using nlohmann::json;

// loss_i = lse(logits_i) - <target_i, logits_i>; equals -sum q log p.
double soft_cross_entropy(const Matrix& logits, const Matrix& targets) {
    Vector lse = logsumexp_rows(logits);
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        total += lse[i] - logits.row(i).dot(targets.row(i));
    }
    return total / static_cast<double>(logits.rows());
}

Matrix probe_logits(const ProbeParams& params, const Matrix& embeddings) {
    if (params.head == ProbeHead::Linear) {
        return linear_forward(params.output, embeddings);
    }
    return linear_forward(params.output,
                          relu(linear_forward(params.hidden, embeddings)));
}

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) =
            source.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

// Shuffled 80/20 row split; at least one row lands on each side.
void split_rows(std::size_t n, std::uint64_t seed,
                std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
    if (n < 2) {
        throw ValidationError("evaluation needs at least 2 samples");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    auto test_count = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
    test_count = std::clamp<std::size_t>(test_count, 1, n - 1);
    test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_count));
    train.assign(order.begin() + static_cast<std::ptrdiff_t>(test_count), order.end());
}

}  // namespace

const char* head_name(ProbeHead head) {
    return head == ProbeHead::Linear ? "linear" : "mlp";
}

ProbeHead parse_head(const std::string& name) {
    if (name == "linear") return ProbeHead::Linear;
    if (name == "mlp") return ProbeHead::Mlp;
    throw ValidationError("unknown probe head '" + name + "' (expected linear or mlp)");
}

std::vector<ProbeHead> parse_heads(const std::string& list) {
    std::vector<ProbeHead> heads;
    std::string current;
    std::istringstream in(list);
    while (std::getline(in, current, ',')) {
        heads.push_back(parse_head(trim(current)));
    }
    if (heads.empty()) {
        throw ValidationError("empty probe head list");
    }
    return heads;
}

ProbeParams train_probe(const Matrix& embeddings, const Matrix& targets,
                        ProbeHead head, ProbeTask task, std::uint64_t seed,
                        const ProbeTrainConfig& config) {
    if (embeddings.rows() != targets.rows()) {
        throw ValidationError("probe embeddings and targets row count mismatch");
    }
    if (embeddings.rows() < 1) {
        throw ValidationError("probe training set is empty");
    }
    if (targets.cols() < 2) {
        throw ValidationError("probe needs at least 2 classes");
    }
    (void)task;  // both tasks share the softmax + soft cross-entropy form

    const auto n = static_cast<std::size_t>(embeddings.rows());
    const int in_dim = static_cast<int>(embeddings.cols());
    const int out_dim = static_cast<int>(targets.cols());

    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::size_t holdout_count = 0;
    if (n >= 2) {
        holdout_count = static_cast<std::size_t>(
            std::llround(config.holdout_fraction * static_cast<double>(n)));
        holdout_count = std::min(holdout_count, n - 1);
    }
    std::vector<std::size_t> holdout_rows(order.begin(),
                                          order.begin() + static_cast<std::ptrdiff_t>(holdout_count));
    std::vector<std::size_t> fit_rows(order.begin() + static_cast<std::ptrdiff_t>(holdout_count),
                                      order.end());

    Matrix fit_x = gather_rows(embeddings, fit_rows);
    Matrix fit_t = gather_rows(targets, fit_rows);
    Matrix hold_x = holdout_count ? gather_rows(embeddings, holdout_rows) : Matrix();
    Matrix hold_t = holdout_count ? gather_rows(targets, holdout_rows) : Matrix();

    ProbeParams params;
    params.head = head;
    if (head == ProbeHead::Mlp) {
        params.hidden = init_linear(in_dim, config.hidden_dim, rng);
        params.output = init_linear(config.hidden_dim, out_dim, rng);
    } else {
        params.output = init_linear(in_dim, out_dim, rng);
    }

    ParamRefs refs;
    if (head == ProbeHead::Mlp) append_refs(refs, params.hidden, "probe.hidden");
    append_refs(refs, params.output, "probe.output");
    AdamState optimizer;
    optimizer.config.learning_rate = config.learning_rate;
    optimizer.init(refs);

    ProbeParams best = params;
    double best_loss = std::numeric_limits<double>::infinity();
    int steps_since_best = 0;

    for (int step = 0; step < config.max_steps; ++step) {
        Matrix hidden_pre, hidden_act;
        Matrix logits;
        if (head == ProbeHead::Mlp) {
            hidden_pre = linear_forward(params.hidden, fit_x);
            hidden_act = relu(hidden_pre);
            logits = linear_forward(params.output, hidden_act);
        } else {
            logits = linear_forward(params.output, fit_x);
        }
        Matrix probs = softmax_rows(logits);
        Matrix d_logits =
            (probs - fit_t) / static_cast<double>(fit_x.rows());

        LinearLayer output_grad = zeros_like(params.output);
        ParamRefs grad_refs;
        LinearLayer hidden_grad;
        if (head == ProbeHead::Mlp) {
            hidden_grad = zeros_like(params.hidden);
            Matrix d_hidden_act =
                linear_backward(params.output, hidden_act, d_logits, output_grad);
            Matrix d_hidden_pre = d_hidden_act.cwiseProduct(relu_mask(hidden_pre));
            linear_backward(params.hidden, fit_x, d_hidden_pre, hidden_grad);
            append_refs(grad_refs, hidden_grad, "probe.hidden");
        } else {
            linear_backward(params.output, fit_x, d_logits, output_grad);
        }
        append_refs(grad_refs, output_grad, "probe.output");
        adam_step(refs, grad_refs, optimizer);

        double monitored = holdout_count
                               ? soft_cross_entropy(probe_logits(params, hold_x), hold_t)
                               : soft_cross_entropy(probe_logits(params, fit_x), fit_t);
        if (!std::isfinite(monitored)) {
            throw std::runtime_error("non-finite probe loss at step " +
                                     std::to_string(step));
        }
        if (monitored < best_loss) {
            best_loss = monitored;
            best = params;
            steps_since_best = 0;
        } else if (++steps_since_best >= config.early_stop_patience) {
            break;
        }
    }
    return best;
}

Matrix probe_predict(const ProbeParams& params, const Matrix& embeddings) {
    return softmax_rows(probe_logits(params, embeddings));
}

std::vector<int> argmax_rows(const Matrix& probabilities) {
    std::vector<int> result(static_cast<std::size_t>(probabilities.rows()));
    for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < probabilities.cols(); ++j) {
            if (probabilities(i, j) > probabilities(i, best)) best = j;
        }
        result[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return result;
}

PrfMetrics macro_prf(std::span<const int> predictions, std::span<const int> labels,
                     int num_classes) {
    if (predictions.size() != labels.size()) {
        throw ValidationError("predictions and labels length mismatch");
    }
    if (num_classes < 1) {
        throw ValidationError("num_classes must be positive");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predictions[i] < 0 || predictions[i] >= num_classes ||
            labels[i] < 0 || labels[i] >= num_classes) {
            throw ValidationError("class index out of range at position " +
                                  std::to_string(i));
        }
    }
    auto safe_ratio = [](double numerator, double denominator) {
        return denominator == 0.0 ? 0.0 : numerator / denominator;
    };
    PrfMetrics totals;
    for (int c = 0; c < num_classes; ++c) {
        double tp = 0.0, fp = 0.0, fn = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            bool predicted = predictions[i] == c;
            bool actual = labels[i] == c;
            if (predicted && actual) tp += 1.0;
            else if (predicted) fp += 1.0;
            else if (actual) fn += 1.0;
        }
        double precision = safe_ratio(tp, tp + fp);
        double recall = safe_ratio(tp, tp + fn);
        double f1 = safe_ratio(2.0 * precision * recall, precision + recall);
        totals.precision += precision;
        totals.recall += recall;
        totals.f1 += f1;
    }
    totals.precision /= num_classes;
    totals.recall /= num_classes;
    totals.f1 /= num_classes;
    return totals;
}

DistributionMetrics distribution_metrics(const Vector& predicted,
                                         const Vector& target) {
    if (predicted.size() != target.size()) {
        throw ValidationError("distribution length mismatch: " +
                              std::to_string(predicted.size()) + " vs " +
                              std::to_string(target.size()));
    }
    DistributionMetrics metrics;
    for (Eigen::Index k = 0; k < predicted.size(); ++k) {
        double diff = std::abs(predicted[k] - target[k]);
        metrics.l1 += diff;
        metrics.chebyshev = std::max(metrics.chebyshev, diff);
    }

    constexpr double kFloor = 1e-10;
    Vector p = predicted.cwiseMax(kFloor);
    Vector q = target.cwiseMax(kFloor);
    p /= p.sum();
    q /= q.sum();
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        metrics.kl += q[k] * std::log(q[k] / p[k]);
    }
    return metrics;
}

DistributionMetrics mean_distribution_metrics(const Matrix& predicted,
                                              const Matrix& targets) {
    if (predicted.rows() != targets.rows()) {
        throw ValidationError("distribution batch row count mismatch");
    }
    if (predicted.rows() == 0) {
        throw ValidationError("distribution batch is empty");
    }
    DistributionMetrics totals;
    for (Eigen::Index i = 0; i < predicted.rows(); ++i) {
        DistributionMetrics row = distribution_metrics(
            predicted.row(i).transpose(), targets.row(i).transpose());
        totals.l1 += row.l1;
        totals.chebyshev += row.chebyshev;
        totals.kl += row.kl;
    }
    auto n = static_cast<double>(predicted.rows());
    totals.l1 /= n;
    totals.chebyshev /= n;
    totals.kl /= n;
    return totals;
}

MetricSummary summarize_metric(const std::string& name,
                               std::vector<double> per_seed) {
    if (per_seed.empty()) {
        throw ValidationError("metric summary needs at least one value");
    }
    MetricSummary summary;
    summary.name = name;
    summary.per_seed = std::move(per_seed);
    double mean = std::accumulate(summary.per_seed.begin(), summary.per_seed.end(), 0.0) /
                  static_cast<double>(summary.per_seed.size());
    double var = 0.0;
    for (double v : summary.per_seed) var += (v - mean) * (v - mean);
    var /= static_cast<double>(summary.per_seed.size());
    summary.mean = mean;
    summary.stdev = std::sqrt(var);
    return summary;
}

std::string eval_report_to_json_text(const EvalReport& report) {
    json heads = json::array();
    for (const auto& head : report.heads) {
        json metrics = json::array();
        for (const auto& metric : head.metrics) {
            metrics.push_back({{"name", metric.name},
                               {"per_seed", metric.per_seed},
                               {"mean", metric.mean},
                               {"std", metric.stdev}});
        }
        heads.push_back({{"head", head_name(head.head)}, {"metrics", metrics}});
    }
    json object{{"task", report.task},
                {"config_hash", report.config_hash},
                {"seeds", report.seeds},
                {"heads", heads},
                {"notes", report.notes}};
    return object.dump(2) + "\n";
}

void write_eval_report_json(const std::string& path, const EvalReport& report) {
    write_text_file(path, eval_report_to_json_text(report));
}

void write_eval_report_csv(const std::string& path, const EvalReport& report) {
    std::ostringstream out;
    out << "task,head,metric,mean,std,mean_x100,std_x100\n";
    for (const auto& head : report.heads) {
        for (const auto& metric : head.metrics) {
            out << report.task << ',' << head_name(head.head) << ',' << metric.name
                << ',' << format_double(metric.mean) << ','
                << format_double(metric.stdev) << ','
                << format_double(metric.mean * 100.0) << ','
                << format_double(metric.stdev * 100.0) << '\n';
        }
    }
    write_text_file(path, out.str());
}

EvalReport run_luc(const Checkpoint& checkpoint,
                   const std::vector<LucSample>& samples,
                   const std::vector<ProbeHead>& heads,
                   const std::vector<std::uint64_t>& seeds,
                   const ProbeTrainConfig& probe_config) {
    if (samples.empty()) throw ValidationError("LUC dataset is empty");
    if (heads.empty()) throw ValidationError("no probe heads requested");
    if (seeds.empty()) throw ValidationError("no seeds requested");

    int num_classes = 0;
    for (const auto& sample : samples) {
        if (sample.label < 0) throw ValidationError("negative LUC label");
        num_classes = std::max(num_classes, sample.label + 1);
    }
    if (num_classes < 2) {
        throw ValidationError("LUC dataset has fewer than 2 classes");
    }

    std::vector<LonLat> coords(samples.size());
    std::vector<int> labels(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        coords[i] = {samples[i].lon, samples[i].lat};
        labels[i] = samples[i].label;
    }
    Matrix embeddings = encode_locations(checkpoint, coords);
    Matrix onehot = Matrix::Zero(static_cast<Eigen::Index>(samples.size()), num_classes);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        onehot(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }

    EvalReport report;
    report.task = "luc";
    report.config_hash = checkpoint.hash;
    report.seeds = seeds;

    std::vector<std::vector<double>> precision(heads.size()), recall(heads.size()),
        f1(heads.size());

    for (std::uint64_t seed : seeds) {
        std::vector<std::size_t> train_rows, test_rows;
        split_rows(samples.size(), seed, train_rows, test_rows);

        std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
        for (std::size_t row : train_rows) seen[static_cast<std::size_t>(labels[row])] = true;
        for (int c = 0; c < num_classes; ++c) {
            if (!seen[static_cast<std::size_t>(c)]) {
                report.notes.push_back("seed " + std::to_string(seed) + ": class " +
                                       std::to_string(c) +
                                       " absent from training portion");
            }
        }

        Matrix train_x = gather_rows(embeddings, train_rows);
        Matrix train_t = gather_rows(onehot, train_rows);
        Matrix test_x = gather_rows(embeddings, test_rows);
        std::vector<int> test_labels(test_rows.size());
        for (std::size_t i = 0; i < test_rows.size(); ++i) {
            test_labels[i] = labels[test_rows[i]];
        }

        for (std::size_t h = 0; h < heads.size(); ++h) {
            ProbeParams probe = train_probe(train_x, train_t, heads[h],
                                            ProbeTask::Classify, seed, probe_config);
            std::vector<int> predictions = argmax_rows(probe_predict(probe, test_x));
            PrfMetrics metrics = macro_prf(predictions, test_labels, num_classes);
            precision[h].push_back(metrics.precision);
            recall[h].push_back(metrics.recall);
            f1[h].push_back(metrics.f1);
        }
    }

    for (std::size_t h = 0; h < heads.size(); ++h) {
        HeadReport head_report;
        head_report.head = heads[h];
        head_report.metrics.push_back(summarize_metric("precision", precision[h]));
        head_report.metrics.push_back(summarize_metric("recall", recall[h]));
        head_report.metrics.push_back(summarize_metric("f1", f1[h]));
        report.heads.push_back(std::move(head_report));
    }
    return report;
}

EvalReport run_sdm(const Checkpoint& checkpoint,
                   const std::vector<SdmRegion>& regions,
                   const std::vector<ProbeHead>& heads,
                   const std::vector<std::uint64_t>& seeds,
                   const ProbeTrainConfig& probe_config,
                   const SdmOptions& options) {
    if (regions.empty()) throw ValidationError("SDM dataset is empty");
    if (heads.empty()) throw ValidationError("no probe heads requested");
    if (seeds.empty()) throw ValidationError("no seeds requested");

    const auto k = regions.front().target.size();
    if (k < 2) throw ValidationError("SDM targets need at least 2 components");
    for (const auto& region : regions) {
        if (region.target.size() != k) {
            throw ValidationError("inconsistent SDM target length for region '" +
                                  region.region_id + "'");
        }
    }

    Matrix embeddings;
    if (options.mean_of_sampled_points) {
        // Fixed sampling stream, independent of evaluation seeds.
        Rng rng(0x5d71c4a3u);
        embeddings = Matrix(static_cast<Eigen::Index>(regions.size()),
                            checkpoint.config.output_dim);
        for (std::size_t i = 0; i < regions.size(); ++i) {
            std::vector<LonLat> points;
            points.push_back({regions[i].lon, regions[i].lat});
            for (int s = 1; s < options.samples_per_region; ++s) {
                double radius = options.sample_radius_degrees * std::sqrt(rng.uniform());
                double angle = 2.0 * M_PI * rng.uniform();
                points.push_back({regions[i].lon + radius * std::cos(angle),
                                  regions[i].lat + radius * std::sin(angle)});
            }
            Matrix point_embeddings = encode_locations(checkpoint, points);
            embeddings.row(static_cast<Eigen::Index>(i)) =
                point_embeddings.colwise().mean();
        }
    } else {
        std::vector<LonLat> coords(regions.size());
        for (std::size_t i = 0; i < regions.size(); ++i) {
            coords[i] = {regions[i].lon, regions[i].lat};
        }
        embeddings = encode_locations(checkpoint, coords);
    }

    Matrix targets(static_cast<Eigen::Index>(regions.size()),
                   static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < regions.size(); ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            targets(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                regions[i].target[j];
        }
    }

    EvalReport report;
    report.task = "sdm";
    report.config_hash = checkpoint.hash;
    report.seeds = seeds;

    std::vector<std::vector<double>> l1(heads.size()), chebyshev(heads.size()),
        kl(heads.size());

    for (std::uint64_t seed : seeds) {
        std::vector<std::size_t> train_rows, test_rows;
        split_rows(regions.size(), seed, train_rows, test_rows);
        Matrix train_x = gather_rows(embeddings, train_rows);
        Matrix train_t = gather_rows(targets, train_rows);
        Matrix test_x = gather_rows(embeddings, test_rows);
        Matrix test_t = gather_rows(targets, test_rows);

        for (std::size_t h = 0; h < heads.size(); ++h) {
            ProbeParams probe = train_probe(train_x, train_t, heads[h],
                                            ProbeTask::Distribution, seed, probe_config);
            DistributionMetrics metrics =
                mean_distribution_metrics(probe_predict(probe, test_x), test_t);
            l1[h].push_back(metrics.l1);
            chebyshev[h].push_back(metrics.chebyshev);
            kl[h].push_back(metrics.kl);
        }
    }

    for (std::size_t h = 0; h < heads.size(); ++h) {
        HeadReport head_report;
        head_report.head = heads[h];
        head_report.metrics.push_back(summarize_metric("l1", l1[h]));
        head_report.metrics.push_back(summarize_metric("chebyshev", chebyshev[h]));
        head_report.metrics.push_back(summarize_metric("kl", kl[h]));
        report.heads.push_back(std::move(head_report));
    }
    return report;
}

std::vector<AblationResult> run_ablation(
    const std::vector<PoiRecord>& records,
    const std::function<const EmbeddingStore&(DescriptionVariant)>& store_for,
    const TrainConfig& base_config,
    const std::vector<LucSample>* luc_samples,
    const std::vector<SdmRegion>* sdm_regions,
    const std::vector<ProbeHead>& heads,
    const std::vector<std::uint64_t>& seeds,
    const ProbeTrainConfig& probe_config) {
    if (!luc_samples && !sdm_regions) {
        throw ValidationError("ablation needs at least one evaluation dataset");
    }
    std::vector<AblationResult> results;
    for (DescriptionVariant variant :
         {DescriptionVariant::NameAndType, DescriptionVariant::NameOnly,
          DescriptionVariant::TypeOnly}) {
        TrainConfig config = base_config;
        config.description_variant = variant;
        TrainResult trained = train(records, store_for(variant), config);

        AblationResult result;
        result.variant = variant_name(variant);
        if (luc_samples) {
            result.luc = run_luc(trained.checkpoint, *luc_samples, heads, seeds,
                                 probe_config);
        }
        if (sdm_regions) {
            result.sdm = run_sdm(trained.checkpoint, *sdm_regions, heads, seeds,
                                 probe_config);
        }
        results.push_back(std::move(result));
    }
    return results;
}

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationResult>& results) {
    std::ostringstream out;
    out << "variant,task,metric,mean,std\n";
    for (const auto& result : results) {
        for (const EvalReport* report : {&result.luc, &result.sdm}) {
            for (const auto& head : report->heads) {
                for (const auto& metric : head.metrics) {
                    out << result.variant << ',' << report->task << ','
                        << head_name(head.head) << '_' << metric.name << ','
                        << format_double(metric.mean) << ','
                        << format_double(metric.stdev) << '\n';
                }
            }
        }
    }
    write_text_file(path, out.str());
}

}  // namespace geosem
