#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "geosem/embedding.hpp"
#include "geosem/poi.hpp"
#include "geosem/synth.hpp"
#include "geosem/trainer.hpp"
#include "json.hpp"
#include "test_util.hpp"

// Drives the installed binary end to end; artifacts are inspected with the
// library the binary was built from.

namespace {

int run_cli(const std::string& args, const std::string& log_path) {
    std::string cmd = std::string(GEOSEM_CLI_PATH) + " " + args + " >" + log_path +
                      " 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

const char* kTinyConfig =
    "{\"batch_size\": 8, \"max_epochs\": 3, \"early_stop_patience\": 2,\n"
    " \"val_fraction\": 0.2, \"grid\": {\"num_scales\": 2},\n"
    " \"hidden_dim\": 16, \"num_residual_blocks\": 1, \"output_dim\": 8}\n";

}  // namespace

TEST_CASE("cli end to end: synth, prepare, train, eval, retrieve, ablate") {
    const std::string dir = scratch_dir("cli");
    const std::string log = dir + "/log.txt";

    // --- synth ---
    REQUIRE(run_cli("synth --preset quadrant --pois-per-zone 12 --luc-per-zone 6"
                    " --sdm-per-zone 4 --seed 3 --out " + dir + "/city",
                    log) == 0);
    auto records = geosem::load_poi_csv(dir + "/city/poi.csv");
    CHECK(records.size() == 48);
    CHECK(geosem::load_luc_csv(dir + "/city/luc.csv").size() == 24);
    CHECK(geosem::load_sdm_csv(dir + "/city/sdm.csv").size() == 16);
    CHECK(std::filesystem::exists(dir + "/city/spec.json"));
    auto synth_manifest =
        nlohmann::json::parse(geosem::read_text_file(dir + "/city/manifest.json"));
    CHECK(synth_manifest.at("subcommand") == "synth");
    CHECK(synth_manifest.at("seeds") == nlohmann::json::array({3}));

    // --- prepare ---
    REQUIRE(run_cli("prepare --poi " + dir + "/city/poi.csv --variant name_only"
                    " --out " + dir + "/prep",
                    log) == 0);
    std::string descriptions = geosem::read_text_file(dir + "/prep/descriptions.txt");
    std::string ids = geosem::read_text_file(dir + "/prep/ids.txt");
    CHECK(std::count(descriptions.begin(), descriptions.end(), '\n') == 48);
    CHECK(std::count(ids.begin(), ids.end(), '\n') == 48);
    CHECK(descriptions.find("A place named ") != std::string::npos);
    CHECK(ids.find(records[0].id) != std::string::npos);

    // --- train ---
    geosem::write_text_file(dir + "/config.json", kTinyConfig);
    REQUIRE(run_cli("train --config " + dir + "/config.json --poi " + dir +
                    "/city/poi.csv --fallback-dim 16 --out " + dir + "/run",
                    log) == 0);
    CHECK(geosem::read_text_file(log).find("best validation loss") !=
          std::string::npos);
    geosem::Checkpoint checkpoint =
        geosem::load_checkpoint(dir + "/run/checkpoint.gckp");
    CHECK(checkpoint.config.batch_size == 8);
    CHECK(checkpoint.epoch >= 1);
    std::string train_log = geosem::read_text_file(dir + "/run/train_log.csv");
    CHECK(train_log.find("epoch,train_loss,val_loss\n") == 0);
    auto split = geosem::load_split_json(dir + "/run/split.json");
    CHECK(split.train_ids.size() + split.val_ids.size() == 48);
    auto train_manifest =
        nlohmann::json::parse(geosem::read_text_file(dir + "/run/manifest.json"));
    CHECK(train_manifest.at("subcommand") == "train");
    CHECK(train_manifest.at("config_hash") == checkpoint.hash);
    CHECK(train_manifest.at("config").at("batch_size") == 8);
    CHECK(train_manifest.at("inputs").size() >= 1);

    // Re-running with the same inputs reproduces the checkpoint bit for bit.
    REQUIRE(run_cli("train --config " + dir + "/config.json --poi " + dir +
                    "/city/poi.csv --fallback-dim 16 --out " + dir + "/run2",
                    log) == 0);
    CHECK(geosem::read_text_file(dir + "/run/checkpoint.gckp") ==
          geosem::read_text_file(dir + "/run2/checkpoint.gckp"));

    // --seed overrides the config seed, changing the result.
    REQUIRE(run_cli("train --config " + dir + "/config.json --poi " + dir +
                    "/city/poi.csv --fallback-dim 16 --seed 5 --out " + dir + "/run3",
                    log) == 0);
    CHECK(geosem::read_text_file(dir + "/run/checkpoint.gckp") !=
          geosem::read_text_file(dir + "/run3/checkpoint.gckp"));

    // --- eval ---
    REQUIRE(run_cli("eval --checkpoint " + dir + "/run/checkpoint.gckp --task luc"
                    " --data " + dir + "/city/luc.csv --heads linear --seeds 2"
                    " --probe-steps 100 --out " + dir + "/eval",
                    log) == 0);
    auto report =
        nlohmann::json::parse(geosem::read_text_file(dir + "/eval/report.json"));
    CHECK(report.at("task") == "luc");
    CHECK(report.at("config_hash") == checkpoint.hash);
    CHECK(report.at("seeds").size() == 2);
    CHECK(report.at("heads")[0].at("metrics").size() == 3);
    std::string report_csv = geosem::read_text_file(dir + "/eval/report.csv");
    CHECK(report_csv.find("task,head,metric,mean,std,mean_x100,std_x100\n") == 0);

    REQUIRE(run_cli("eval --checkpoint " + dir + "/run/checkpoint.gckp --task sdm"
                    " --data " + dir + "/city/sdm.csv --heads mlp --seeds 1"
                    " --probe-steps 100 --out " + dir + "/eval_sdm",
                    log) == 0);
    auto sdm_report = nlohmann::json::parse(
        geosem::read_text_file(dir + "/eval_sdm/report.json"));
    CHECK(sdm_report.at("task") == "sdm");

    // --- retrieve ---
    REQUIRE(run_cli("retrieve --checkpoint " + dir + "/run/checkpoint.gckp"
                    " --query \"A place of Museums, a type of Attractions.\""
                    " --grid 6x5 --k 4 --svg --out " + dir + "/ret",
                    log) == 0);
    auto geo =
        nlohmann::json::parse(geosem::read_text_file(dir + "/ret/retrieval.geojson"));
    CHECK(geo.at("type") == "FeatureCollection");
    CHECK(geo.at("features").size() == 30);
    int ranked = 0;
    for (const auto& feature : geo.at("features")) {
        if (feature.at("properties").contains("rank")) ranked++;
    }
    CHECK(ranked == 4);
    std::string sim_csv = geosem::read_text_file(dir + "/ret/similarity.csv");
    CHECK(std::count(sim_csv.begin(), sim_csv.end(), '\n') == 31);  // header + cells
    CHECK(geosem::read_text_file(dir + "/ret/heatmap.svg").find("<svg") == 0);

    // --- ablate ---
    REQUIRE(run_cli("ablate --config " + dir + "/config.json --poi " + dir +
                    "/city/poi.csv --luc " + dir + "/city/luc.csv --heads linear"
                    " --seeds 1 --fallback-dim 16 --probe-steps 60 --out " + dir +
                    "/abl",
                    log) == 0);
    std::string ablation = geosem::read_text_file(dir + "/abl/ablation.csv");
    CHECK(ablation.find("variant,task,metric,mean,std\n") == 0);
    CHECK(ablation.find("name_and_type,luc,linear_f1,") != std::string::npos);
    CHECK(ablation.find("name_only,") != std::string::npos);
    CHECK(ablation.find("type_only,") != std::string::npos);
}

TEST_CASE("cli exit codes: 0 help, 1 user error") {
    const std::string dir = scratch_dir("cli_codes");
    const std::string log = dir + "/log.txt";
    CHECK(run_cli("--help", log) == 0);
    CHECK(run_cli("synth --help", log) == 0);

    // Unknown subcommand and unknown flag are argument errors.
    CHECK(run_cli("transmogrify", log) == 1);
    CHECK(run_cli("synth --bogus-flag 1 --out x", log) == 1);

    // Missing files and malformed configs are validation errors.
    CHECK(run_cli("train --config /nonexistent.json --poi /nonexistent.csv --out " +
                      dir + "/out",
                  log) == 1);
    geosem::write_text_file(dir + "/bad_config.json", "{\"batch_size\": -4}");
    CHECK(run_cli("train --config " + dir + "/bad_config.json --poi /nonexistent.csv"
                  " --out " + dir + "/out",
                  log) == 1);
    CHECK(run_cli("eval --checkpoint /nope.gckp --task luc --data /nope.csv --out " +
                      dir + "/out",
                  log) == 1);
    CHECK(run_cli("eval --checkpoint /nope.gckp --task walk --data /nope.csv --out " +
                      dir + "/out",
                  log) == 1);
}

TEST_CASE("cli trains from precomputed vectors") {
    const std::string dir = scratch_dir("cli_vectors");
    const std::string log = dir + "/log.txt";

    REQUIRE(run_cli("synth --preset quadrant --pois-per-zone 10 --luc-per-zone 4"
                    " --sdm-per-zone 2 --seed 1 --out " + dir + "/city",
                    log) == 0);
    auto records = geosem::load_poi_csv(dir + "/city/poi.csv");

    // External embeddings: hash descriptions ourselves into a GEMB pair.
    geosem::EmbeddingStore store(24, "external");
    for (const auto& rec : records) {
        auto desc =
            geosem::render_description(rec, geosem::DescriptionVariant::NameAndType);
        store.add(rec.id, geosem::fallback_encode(desc.text, 24, 42));
    }
    geosem::write_embeddings(store, dir + "/text.gemb", dir + "/text.ids");

    geosem::write_text_file(dir + "/config.json", kTinyConfig);
    REQUIRE(run_cli("train --config " + dir + "/config.json --poi " + dir +
                    "/city/poi.csv --vectors " + dir + "/text.gemb --ids " + dir +
                    "/text.ids --out " + dir + "/run",
                    log) == 0);
    geosem::Checkpoint checkpoint =
        geosem::load_checkpoint(dir + "/run/checkpoint.gckp");
    CHECK(checkpoint.text_projection.in_dim() == 24);
}
