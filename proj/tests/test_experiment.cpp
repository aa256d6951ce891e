#include <doctest.h>

#include <filesystem>
#include <string>

#include "fineprune/experiment.hpp"

using namespace fineprune;
namespace fs = std::filesystem;

namespace {

// Small enough that a full grid takes a few seconds.
const char* kTiny = R"({
  "schema_version": 1,
  "synth_per_class": 12,
  "synth_test_per_class": 4,
  "valid_fraction": 0.25,
  "conv1_filters": 2,
  "conv2_filters": 5,
  "hidden": 8,
  "epochs": 2,
  "tune_epochs": 2,
  "poison_fraction": 0.3,
  "min_backdoor": 0.0,
  "max_clean_drop": 1.0,
  "max_retries": 0,
  "record_runtime": false
})";

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("fineprune_exp_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "cfg.json");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config parsing names the offending key and line") {
    const std::string unknown = error_of("{\n  \"schema_version\": 1,\n  \"epoch\": 3\n}");
    CHECK(unknown.find("epoch") != std::string::npos);
    CHECK(unknown.find("cfg.json:3") != std::string::npos);

    const std::string typed = error_of("{\"schema_version\": 1,\n\"learning_rate\": \"fast\"}");
    CHECK(typed.find("learning_rate") != std::string::npos);
    CHECK(typed.find("cfg.json:2") != std::string::npos);

    CHECK(error_of("{\"epochs\": 3}").find("schema_version") != std::string::npos);
    CHECK(error_of("{\"schema_version\": 2}").find("schema_version") != std::string::npos);
    CHECK(error_of("{\"schema_version\": 1, \"epochs\": -1}").find("epochs") != std::string::npos);
    CHECK(error_of("{\"schema_version\": 1, \"attack\": \"magic\"}").find("attack") != std::string::npos);
    CHECK_FALSE(error_of("{\"schema_version\": 1,").empty());
    CHECK(error_of(kTiny).empty());
}

TEST_CASE("config json round-trips") {
    const ExperimentConfig cfg = parse_config(kTiny);
    CHECK(config_to_json(config_from_json(config_to_json(cfg))) == config_to_json(cfg));
}

TEST_CASE("experiment id is stable and tracks what shapes the artifacts") {
    const ExperimentConfig cfg = parse_config(kTiny);
    const std::string id = experiment_id(cfg, 0);
    CHECK(id.size() == 12);
    CHECK(experiment_id(parse_config(kTiny), 0) == id);
    CHECK(experiment_id(cfg, 1) != id);

    ExperimentConfig stage = cfg;
    stage.attack = "pruning-aware";
    stage.defense = "tune";
    CHECK(experiment_id(stage, 0) == id);

    ExperimentConfig other = cfg;
    other.epochs = 3;
    CHECK(experiment_id(other, 0) != id);
    CHECK(grid_id(other) != grid_id(cfg));
}

TEST_CASE("stages write artifacts and resume from them") {
    const fs::path out = scratch_dir("stages");
    ExperimentConfig cfg = parse_config(kTiny);
    Experiment e(cfg, out, 0);
    CHECK(e.dir() == out / e.id());

    CHECK_THROWS_AS(e.defend("baseline", "fine-prune"), MissingArtifact);
    try {
        e.defend("baseline", "fine-prune");
    } catch (const MissingArtifact& err) {
        CHECK(std::string(err.what()).find("attack-baseline.fpn") != std::string::npos);
    }

    const Checkpoint trained = e.train();
    CHECK(fs::exists(e.dir() / "train.fpn"));
    CHECK(e.attack("none").params == trained.params);

    const Checkpoint attacked = e.attack("baseline");
    CHECK(fs::exists(e.attack_path("baseline")));

    const DefenseArtifacts none = e.defend("baseline", "none");
    CHECK(read_text(e.defense_path("baseline", "none")) == read_text(e.attack_path("baseline")));
    CHECK(none.checkpoint.params == attacked.params);

    const DefenseArtifacts fp = e.defend("baseline", "fine-prune");
    CHECK(fp.checkpoint.mask.has_value());
    CHECK(!fp.sweep.empty());

    // A second runner over the same directory loads instead of retraining.
    Experiment again(cfg, out, 0);
    CHECK(again.defend("baseline", "fine-prune").checkpoint.params == fp.checkpoint.params);
    const ExperimentRecord r = again.eval("baseline", "fine-prune");
    CHECK(r.runtime_s == 0.0);
    CHECK(r.experiment_id == e.id());
    CHECK(fs::exists(e.dir() / "eval-baseline-fine-prune.json"));
    fs::remove_all(out);
}

TEST_CASE("validation against the data catches impossible budgets") {
    ExperimentConfig cfg = parse_config(kTiny);
    cfg.decoy_count = 5;
    CHECK_THROWS_AS(Experiment(cfg, scratch_dir("budget"), 0), ConfigError);
    cfg.decoy_count = 0;
    cfg.trigger_size = 40;
    CHECK_THROWS_AS(Experiment(cfg, scratch_dir("budget"), 0), ConfigError);
}

TEST_CASE("reproduce fills the grid and reruns byte-identically") {
    ExperimentConfig cfg = parse_config(kTiny);
    const fs::path a = scratch_dir("grid_a");
    const fs::path b = scratch_dir("grid_b");
    const auto records = reproduce(cfg, a);
    CHECK(records.size() == 8);
    reproduce(cfg, b);
    const fs::path ra = a / grid_id(cfg), rb = b / grid_id(cfg);
    for (const char* f : {"summary.json", "utility_matrix.csv", "config.json"})
        CHECK(read_text(ra / f) == read_text(rb / f));
    const std::string id = experiment_id(cfg, 0);
    for (const char* f : {"train.fpn", "attack-baseline.fpn", "attack-pruning-aware.fpn",
                          "defend-baseline-fine-prune.fpn", "defend-pruning-aware-prune.fpn"})
        CHECK(read_text(a / id / f) == read_text(b / id / f));
    fs::remove_all(a);
    fs::remove_all(b);
}
