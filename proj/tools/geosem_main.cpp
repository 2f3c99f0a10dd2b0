// Command-line front end: synthetic data generation, description
// preparation, training, probe evaluation, ablations and retrieval.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "geosem/eval.hpp"
#include "geosem/manifest.hpp"
#include "geosem/retrieval.hpp"
#include "geosem/synth.hpp"

namespace fs = std::filesystem;
using namespace geosem;

namespace {

struct ManifestTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    }
};

std::string out_path(const std::string& dir, const std::string& file) {
    return (fs::path(dir) / file).string();
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ValidationError("cannot create output directory '" + dir +
                              "': " + ec.message());
    }
}

std::pair<int, int> parse_grid_spec(const std::string& spec) {
    auto sep = spec.find('x');
    if (sep == std::string::npos) sep = spec.find('X');
    if (sep == std::string::npos || sep == 0 || sep + 1 >= spec.size()) {
        throw ValidationError("grid spec must look like 50x50, got '" + spec + "'");
    }
    int width = 0, height = 0;
    try {
        std::size_t used = 0;
        width = std::stoi(spec.substr(0, sep), &used);
        if (used != sep) throw std::invalid_argument("trailing");
        std::string rest = spec.substr(sep + 1);
        height = std::stoi(rest, &used);
        if (used != rest.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ValidationError("grid spec must look like 50x50, got '" + spec + "'");
    }
    if (width < 1 || height < 1) {
        throw ValidationError("grid dimensions must be positive");
    }
    return {width, height};
}

std::vector<std::uint64_t> make_seed_list(std::uint64_t base, int count) {
    if (count < 1) throw ValidationError("--seeds must be at least 1");
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) seeds[static_cast<std::size_t>(i)] = base + i;
    return seeds;
}

// Hermetic text vectors: render each POI's description for the variant
// and hash-encode it.
EmbeddingStore fallback_store(const std::vector<PoiRecord>& records,
                              DescriptionVariant variant, int dim,
                              std::uint64_t text_seed) {
    EmbeddingStore store(dim, "fallback");
    for (const auto& record : records) {
        Description description = render_description(record, variant);
        store.add(record.id, fallback_encode(description.text, dim, text_seed));
    }
    return store;
}

struct TextSourceFlags {
    std::string vectors_path;
    std::string ids_path;
    int fallback_dim = 384;
    std::uint64_t text_seed = 0;

    bool external() const { return !vectors_path.empty(); }
};

void add_text_source_flags(CLI::App* cmd, TextSourceFlags& flags) {
    cmd->add_option("--vectors", flags.vectors_path,
                    "precomputed text vector file (GEMB)");
    cmd->add_option("--ids", flags.ids_path, "id sidecar for --vectors");
    cmd->add_option("--fallback-dim", flags.fallback_dim,
                    "hash-encoder dimension when no vector file is given");
    cmd->add_option("--text-seed", flags.text_seed, "hash-encoder seed");
}

EmbeddingStore resolve_store(const TextSourceFlags& flags,
                             const std::vector<PoiRecord>& records,
                             DescriptionVariant variant,
                             RunManifest& manifest) {
    if (flags.external()) {
        if (flags.ids_path.empty()) {
            throw ValidationError("--vectors requires --ids");
        }
        manifest.input_digests.emplace_back(flags.vectors_path,
                                            file_digest_hex(flags.vectors_path));
        manifest.input_digests.emplace_back(flags.ids_path,
                                            file_digest_hex(flags.ids_path));
        return load_embeddings(flags.vectors_path, flags.ids_path);
    }
    return fallback_store(records, variant, flags.fallback_dim, flags.text_seed);
}

int run_app(int argc, char** argv) {
    CLI::App app{"location embeddings from POI coordinate/description pairs"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic city");
    std::string synth_preset = "quadrant";
    std::string synth_spec_path;
    std::string synth_out = "synth_out";
    std::uint64_t synth_seed = 0;
    int pois_per_zone = 500, luc_per_zone = 150, sdm_per_zone = 40;
    synth->add_option("--preset", synth_preset,
                      "quadrant (disjoint categories) or shared_category");
    synth->add_option("--spec", synth_spec_path, "custom zone spec JSON");
    synth->add_option("--seed", synth_seed, "generation seed");
    synth->add_option("--pois-per-zone", pois_per_zone, "POIs per zone");
    synth->add_option("--luc-per-zone", luc_per_zone, "labelled samples per zone");
    synth->add_option("--sdm-per-zone", sdm_per_zone, "regions per zone");
    synth->add_option("--out", synth_out, "output directory");

    // prepare
    auto* prepare = app.add_subcommand(
        "prepare", "render description files for an external embedding model");
    std::string prepare_poi, prepare_out = "prepare_out";
    std::string prepare_variant = "name_and_type";
    prepare->add_option("--poi", prepare_poi, "POI CSV")->required();
    prepare->add_option("--variant", prepare_variant,
                        "name_and_type, name_only or type_only");
    prepare->add_option("--out", prepare_out, "output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "contrastive training run");
    std::string train_config_path, train_poi, train_out = "train_out";
    TextSourceFlags train_text;
    std::optional<std::uint64_t> train_seed_override;
    train_cmd->add_option("--config", train_config_path, "train config JSON")
        ->required();
    train_cmd->add_option("--poi", train_poi, "POI CSV")->required();
    train_cmd
        ->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t v) { train_seed_override = v; },
            "override the config seed")
        ->expected(1);
    train_cmd->add_option("--out", train_out, "output directory");
    add_text_source_flags(train_cmd, train_text);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "probe a checkpoint on LUC or SDM");
    std::string eval_checkpoint, eval_task, eval_data, eval_out = "eval_out";
    std::string eval_heads = "linear,mlp";
    int eval_seed_count = 5;
    std::uint64_t eval_seed_base = 0;
    ProbeTrainConfig probe_config;
    SdmOptions sdm_options;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
        ->required();
    eval_cmd->add_option("--task", eval_task, "luc or sdm")->required();
    eval_cmd->add_option("--data", eval_data, "dataset CSV")->required();
    eval_cmd->add_option("--heads", eval_heads, "comma list: linear,mlp");
    eval_cmd->add_option("--seeds", eval_seed_count, "number of probe seeds");
    eval_cmd->add_option("--seed", eval_seed_base, "first probe seed");
    eval_cmd->add_option("--out", eval_out, "output directory");
    eval_cmd->add_option("--probe-steps", probe_config.max_steps, "probe Adam steps");
    eval_cmd->add_option("--probe-lr", probe_config.learning_rate, "probe learning rate");
    eval_cmd->add_option("--probe-patience", probe_config.early_stop_patience,
                         "probe early-stop patience");
    eval_cmd->add_option("--probe-hidden", probe_config.hidden_dim,
                         "MLP probe hidden width");
    eval_cmd->add_flag("--sdm-mean-points", sdm_options.mean_of_sampled_points,
                       "embed regions as the mean over sampled interior points");
    eval_cmd->add_option("--sdm-radius", sdm_options.sample_radius_degrees,
                         "sampling radius in degrees");
    eval_cmd->add_option("--sdm-samples", sdm_options.samples_per_region,
                         "points per region");

    // retrieve
    auto* retrieve = app.add_subcommand("retrieve", "semantic location retrieval");
    std::string ret_checkpoint, ret_query, ret_grid = "50x50", ret_out = "retrieve_out";
    std::string ret_query_vectors, ret_query_ids;
    int ret_k = 30;
    bool ret_svg = false, ret_no_fallback = false;
    std::uint64_t ret_text_seed = 0;
    retrieve->add_option("--checkpoint", ret_checkpoint, "checkpoint file")
        ->required();
    retrieve->add_option("--query", ret_query, "query text or precomputed key")
        ->required();
    retrieve->add_option("--query-vectors", ret_query_vectors,
                         "precomputed query vector file (GEMB)");
    retrieve->add_option("--query-ids", ret_query_ids, "id sidecar for --query-vectors");
    retrieve->add_option("--grid", ret_grid, "candidate grid, e.g. 50x50");
    retrieve->add_option("--k", ret_k, "ranked results to keep");
    retrieve->add_flag("--svg", ret_svg, "also write an SVG heatmap");
    retrieve->add_flag("--no-fallback", ret_no_fallback,
                       "fail instead of hash-encoding an unknown query");
    retrieve->add_option("--text-seed", ret_text_seed, "hash-encoder seed");
    retrieve->add_option("--out", ret_out, "output directory");

    // ablate
    auto* ablate = app.add_subcommand(
        "ablate", "train and probe every description variant");
    std::string abl_config_path, abl_poi, abl_luc, abl_sdm, abl_out = "ablate_out";
    std::string abl_heads = "linear,mlp";
    std::string abl_vectors_dir;
    int abl_seed_count = 5;
    std::uint64_t abl_seed_base = 0;
    TextSourceFlags abl_text;
    ablate->add_option("--config", abl_config_path, "base train config JSON")
        ->required();
    ablate->add_option("--poi", abl_poi, "POI CSV")->required();
    ablate->add_option("--luc", abl_luc, "LUC dataset CSV");
    ablate->add_option("--sdm", abl_sdm, "SDM dataset CSV");
    ablate->add_option("--heads", abl_heads, "comma list: linear,mlp");
    ablate->add_option("--seeds", abl_seed_count, "number of probe seeds");
    ablate->add_option("--seed", abl_seed_base, "first probe seed");
    ablate->add_option("--vectors-dir", abl_vectors_dir,
                       "directory with <variant>.gemb/<variant>.ids per variant");
    ablate->add_option("--fallback-dim", abl_text.fallback_dim,
                       "hash-encoder dimension");
    ablate->add_option("--text-seed", abl_text.text_seed, "hash-encoder seed");
    ablate->add_option("--probe-steps", probe_config.max_steps, "probe Adam steps");
    ablate->add_option("--out", abl_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Bad flags are user input errors; keep the 0/1/2 exit contract.
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    ManifestTimer timer;

    if (*synth) {
        ensure_out_dir(synth_out);
        SynthSpec spec;
        RunManifest manifest;
        manifest.subcommand = "synth";
        if (!synth_spec_path.empty()) {
            spec = load_synth_spec(synth_spec_path);
            manifest.input_digests.emplace_back(synth_spec_path,
                                                file_digest_hex(synth_spec_path));
        } else if (synth_preset == "quadrant") {
            spec = quadrant_preset(pois_per_zone);
        } else if (synth_preset == "shared_category") {
            spec = shared_category_preset(pois_per_zone);
        } else {
            throw ValidationError("unknown preset '" + synth_preset + "'");
        }
        if (synth_spec_path.empty()) {
            spec.pois_per_zone = pois_per_zone;
            spec.luc_samples_per_zone = luc_per_zone;
            spec.sdm_regions_per_zone = sdm_per_zone;
        }
        SynthCity city = generate_synthetic_city(spec, synth_seed);

        std::string poi_path = out_path(synth_out, "poi.csv");
        std::string luc_path = out_path(synth_out, "luc.csv");
        std::string sdm_path = out_path(synth_out, "sdm.csv");
        std::string spec_path = out_path(synth_out, "spec.json");
        write_poi_csv(poi_path, city.records);
        write_luc_csv(luc_path, city.luc_samples);
        write_sdm_csv(sdm_path, city.sdm_regions);
        save_synth_spec(spec_path, spec);

        manifest.seeds = {synth_seed};
        manifest.output_paths = {poi_path, luc_path, sdm_path, spec_path};
        manifest.duration_seconds = timer.seconds();
        write_run_manifest(out_path(synth_out, "manifest.json"), manifest);
        std::cout << "wrote " << city.records.size() << " POIs, "
                  << city.luc_samples.size() << " LUC samples, "
                  << city.sdm_regions.size() << " SDM regions to " << synth_out
                  << "\n";
        return 0;
    }

    if (*prepare) {
        ensure_out_dir(prepare_out);
        DescriptionVariant variant = parse_variant(prepare_variant);
        std::vector<PoiRecord> records = load_poi_csv(prepare_poi);

        std::string text;
        std::string ids;
        for (const auto& record : records) {
            text += render_description(record, variant).text;
            text += '\n';
            ids += record.id;
            ids += '\n';
        }
        std::string desc_path = out_path(prepare_out, "descriptions.txt");
        std::string ids_path = out_path(prepare_out, "ids.txt");
        write_text_file(desc_path, text);
        write_text_file(ids_path, ids);

        RunManifest manifest;
        manifest.subcommand = "prepare";
        manifest.resolved_config_json =
            nlohmann::json{{"variant", variant_name(variant)}}.dump();
        manifest.input_digests.emplace_back(prepare_poi, file_digest_hex(prepare_poi));
        manifest.output_paths = {desc_path, ids_path};
        manifest.duration_seconds = timer.seconds();
        write_run_manifest(out_path(prepare_out, "manifest.json"), manifest);
        std::cout << "wrote " << records.size() << " descriptions to " << prepare_out
                  << "\n";
        return 0;
    }

    if (*train_cmd) {
        ensure_out_dir(train_out);
        TrainConfig config = load_train_config(train_config_path);
        if (train_seed_override) config.seed = *train_seed_override;
        std::vector<PoiRecord> records = load_poi_csv(train_poi);

        RunManifest manifest;
        manifest.subcommand = "train";
        manifest.input_digests.emplace_back(train_config_path,
                                            file_digest_hex(train_config_path));
        manifest.input_digests.emplace_back(train_poi, file_digest_hex(train_poi));
        EmbeddingStore store =
            resolve_store(train_text, records, config.description_variant, manifest);

        TrainResult result = train(records, store, config);

        std::string ckpt_path = out_path(train_out, "checkpoint.gckp");
        std::string log_path = out_path(train_out, "train_log.csv");
        std::string split_path = out_path(train_out, "split.json");
        save_checkpoint(result.checkpoint, ckpt_path);
        write_training_log(log_path, result.log);
        save_split_json(split_path, result.split);

        manifest.resolved_config_json = train_config_to_json_text(config);
        manifest.config_hash = result.checkpoint.hash;
        manifest.seeds = {config.seed};
        manifest.output_paths = {ckpt_path, log_path, split_path};
        manifest.duration_seconds = timer.seconds();
        write_run_manifest(out_path(train_out, "manifest.json"), manifest);
        std::cout << "best validation loss "
                  << format_double(result.checkpoint.best_val_loss) << " at epoch "
                  << result.checkpoint.epoch << " (" << result.log.size()
                  << " epochs run)\n";
        return 0;
    }

    if (*eval_cmd) {
        ensure_out_dir(eval_out);
        Checkpoint checkpoint = load_checkpoint(eval_checkpoint);
        std::vector<ProbeHead> heads = parse_heads(eval_heads);
        std::vector<std::uint64_t> seeds = make_seed_list(eval_seed_base, eval_seed_count);

        EvalReport report;
        if (eval_task == "luc") {
            report = run_luc(checkpoint, load_luc_csv(eval_data), heads, seeds,
                             probe_config);
        } else if (eval_task == "sdm") {
            report = run_sdm(checkpoint, load_sdm_csv(eval_data), heads, seeds,
                             probe_config, sdm_options);
        } else {
            throw ValidationError("unknown task '" + eval_task +
                                  "' (expected luc or sdm)");
        }

        std::string json_path = out_path(eval_out, "report.json");
        std::string csv_path = out_path(eval_out, "report.csv");
        write_eval_report_json(json_path, report);
        write_eval_report_csv(csv_path, report);

        RunManifest manifest;
        manifest.subcommand = "eval";
        manifest.resolved_config_json =
            nlohmann::json{{"task", eval_task}, {"heads", eval_heads}}.dump();
        manifest.config_hash = checkpoint.hash;
        manifest.seeds = seeds;
        manifest.input_digests.emplace_back(eval_checkpoint,
                                            file_digest_hex(eval_checkpoint));
        manifest.input_digests.emplace_back(eval_data, file_digest_hex(eval_data));
        manifest.output_paths = {json_path, csv_path};
        manifest.duration_seconds = timer.seconds();
        write_run_manifest(out_path(eval_out, "manifest.json"), manifest);
        std::cout << eval_report_to_json_text(report);
        return 0;
    }

    if (*retrieve) {
        ensure_out_dir(ret_out);
        Checkpoint checkpoint = load_checkpoint(ret_checkpoint);

        QuerySource source;
        source.allow_fallback = !ret_no_fallback;
        source.fallback_seed = ret_text_seed;
        EmbeddingStore query_store;
        if (!ret_query_vectors.empty()) {
            if (ret_query_ids.empty()) {
                throw ValidationError("--query-vectors requires --query-ids");
            }
            query_store = load_embeddings(ret_query_vectors, ret_query_ids);
            source.store = &query_store;
        }

        auto [width, height] = parse_grid_spec(ret_grid);
        CandidateGrid grid = make_grid(
            checkpoint.normalizer.lon_min, checkpoint.normalizer.lon_max,
            checkpoint.normalizer.lat_min, checkpoint.normalizer.lat_max, width,
            height);
        ensure_embeddings(grid, checkpoint);

        Vector query = embed_query(ret_query, source, checkpoint);
        RetrievalResult result = topk(query, grid, ret_k);
        result.query = ret_query;
        Matrix field = similarity_field(query, grid);

        std::string geojson_path = out_path(ret_out, "retrieval.geojson");
        std::string csv_path = out_path(ret_out, "similarity.csv");
        write_similarity_geojson(geojson_path, grid, field, &result);
        write_similarity_csv(csv_path, grid, field);

        RunManifest manifest;
        manifest.subcommand = "retrieve";
        manifest.resolved_config_json =
            nlohmann::json{{"query", ret_query},
                           {"grid", ret_grid},
                           {"k", ret_k}}
                .dump();
        manifest.config_hash = checkpoint.hash;
        manifest.input_digests.emplace_back(ret_checkpoint,
                                            file_digest_hex(ret_checkpoint));
        if (!ret_query_vectors.empty()) {
            manifest.input_digests.emplace_back(ret_query_vectors,
                                                file_digest_hex(ret_query_vectors));
            manifest.input_digests.emplace_back(ret_query_ids,
                                                file_digest_hex(ret_query_ids));
        }
        manifest.output_paths = {geojson_path, csv_path};
        if (ret_svg) {
            std::string svg_path = out_path(ret_out, "heatmap.svg");
            write_similarity_svg(svg_path, grid, field);
            manifest.output_paths.push_back(svg_path);
        }
        manifest.duration_seconds = timer.seconds();
        write_run_manifest(out_path(ret_out, "manifest.json"), manifest);
        std::cout << "top result at (" << format_double(result.ranked.front().coord.lon)
                  << ", " << format_double(result.ranked.front().coord.lat)
                  << ") score " << format_double(result.ranked.front().score) << "\n";
        return 0;
    }

    if (*ablate) {
        ensure_out_dir(abl_out);
        TrainConfig base_config = load_train_config(abl_config_path);
        std::vector<PoiRecord> records = load_poi_csv(abl_poi);
        std::vector<ProbeHead> heads = parse_heads(abl_heads);
        std::vector<std::uint64_t> seeds = make_seed_list(abl_seed_base, abl_seed_count);

        std::vector<LucSample> luc_samples;
        std::vector<SdmRegion> sdm_regions;
        if (!abl_luc.empty()) luc_samples = load_luc_csv(abl_luc);
        if (!abl_sdm.empty()) sdm_regions = load_sdm_csv(abl_sdm);
        if (abl_luc.empty() && abl_sdm.empty()) {
            throw ValidationError("ablate needs --luc and/or --sdm");
        }

        RunManifest manifest;
        manifest.subcommand = "ablate";
        manifest.input_digests.emplace_back(abl_config_path,
                                            file_digest_hex(abl_config_path));
        manifest.input_digests.emplace_back(abl_poi, file_digest_hex(abl_poi));
        if (!abl_luc.empty()) {
            manifest.input_digests.emplace_back(abl_luc, file_digest_hex(abl_luc));
        }
        if (!abl_sdm.empty()) {
            manifest.input_digests.emplace_back(abl_sdm, file_digest_hex(abl_sdm));
        }

        // One store per variant: either preloaded files or hash encodings
        // of the variant's rendered descriptions.
        std::vector<EmbeddingStore> variant_stores;
        auto store_for = [&](DescriptionVariant variant) -> const EmbeddingStore& {
            if (!abl_vectors_dir.empty()) {
                std::string stem = out_path(abl_vectors_dir, variant_name(variant));
                manifest.input_digests.emplace_back(stem + ".gemb",
                                                    file_digest_hex(stem + ".gemb"));
                manifest.input_digests.emplace_back(stem + ".ids",
                                                    file_digest_hex(stem + ".ids"));
                variant_stores.push_back(
                    load_embeddings(stem + ".gemb", stem + ".ids"));
            } else {
                variant_stores.push_back(fallback_store(
                    records, variant, abl_text.fallback_dim, abl_text.text_seed));
            }
            return variant_stores.back();
        };

        std::vector<AblationResult> results = run_ablation(
            records, store_for, base_config,
            abl_luc.empty() ? nullptr : &luc_samples,
            abl_sdm.empty() ? nullptr : &sdm_regions, heads, seeds, probe_config);

        std::string combined_path = out_path(abl_out, "ablation.csv");
        write_ablation_csv(combined_path, results);
        manifest.output_paths.push_back(combined_path);
        for (const auto& result : results) {
            if (!result.luc.heads.empty()) {
                std::string path =
                    out_path(abl_out, "luc_" + result.variant + ".json");
                write_eval_report_json(path, result.luc);
                manifest.output_paths.push_back(path);
            }
            if (!result.sdm.heads.empty()) {
                std::string path =
                    out_path(abl_out, "sdm_" + result.variant + ".json");
                write_eval_report_json(path, result.sdm);
                manifest.output_paths.push_back(path);
            }
        }

        manifest.resolved_config_json = train_config_to_json_text(base_config);
        manifest.config_hash = config_hash(base_config);
        manifest.seeds = seeds;
        manifest.duration_seconds = timer.seconds();
        write_run_manifest(out_path(abl_out, "manifest.json"), manifest);
        std::cout << "wrote " << results.size() << " variant reports to " << abl_out
                  << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_app(argc, argv);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
