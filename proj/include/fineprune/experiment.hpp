#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fineprune/attack.hpp"
#include "fineprune/checkpoint.hpp"
#include "fineprune/data.hpp"
#include "fineprune/defense.hpp"
#include "fineprune/network.hpp"
#include "fineprune/reports.hpp"

namespace fineprune {

/// Invalid configuration. `what()` names the offending key and, when the
/// config came from text, its line.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a stage needs an artifact an earlier stage has not written.
class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat, versioned experiment description. Every field has a default, so
/// "{}" plus a schema_version is a complete config.
struct ExperimentConfig {
    static constexpr int kSchemaVersion = 1;
    int schema_version = kSchemaVersion;

    // dataset: "synthetic" or "idx"
    std::string dataset = "synthetic";
    std::string data_root = ".";  // idx only; FINEPRUNE_DATA_ROOT overrides
    std::string train_images = "train-images-idx3-ubyte";
    std::string train_labels = "train-labels-idx1-ubyte";
    std::string test_images = "t10k-images-idx3-ubyte";
    std::string test_labels = "t10k-labels-idx1-ubyte";
    std::size_t synth_per_class = 300;
    std::size_t synth_test_per_class = 100;
    double synth_noise = 0.1;
    double valid_fraction = 0.1;

    // model: "two_conv_two_fc"
    std::string model = "two_conv_two_fc";
    std::size_t conv1_filters = 8;
    std::size_t conv2_filters = 32;
    std::size_t hidden = 64;

    // trigger
    std::size_t trigger_size = 3;
    double trigger_value = 1.0;
    std::string label_map = "shift";  // shift | targeted | untargeted
    int target_label = 0;

    // attack: none | baseline | pruning-aware
    std::string attack = "baseline";
    double poison_fraction = 0.1;
    std::size_t decoy_count = 0;  // 0 picks default_decoy_count
    double min_backdoor = 0.95;
    double max_clean_drop = 0.01;
    std::size_t max_retries = 3;

    // defense: none | prune | tune | fine-prune | perturb-tune
    std::string defense = "fine-prune";
    double drop_threshold = 0.04;
    double noise_scale = 0.5;
    std::size_t tune_epochs = 20;

    // training
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    std::vector<std::uint64_t> seeds{0};

    bool record_runtime = true;

    /// Checks every field that does not need the data; see validate_against
    /// for the rest.
    void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Parses JSON text; diagnostics carry `source` and a line number.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Short hash of the canonical config for one seed, ignoring the attack,
/// defense and reporting fields (they name stages inside the experiment).
std::string experiment_id(const ExperimentConfig& cfg, std::uint64_t seed);
/// Same, over the whole seed list; names a reproduce run.
std::string grid_id(const ExperimentConfig& cfg);

struct DataBundle {
    Dataset train;          // attacker's clean training data
    Dataset valid;          // defender's held-out clean data
    Dataset test;           // clean test set
    Dataset backdoor_test;  // test set with the trigger applied
    TriggerSpec trigger;
};

DataBundle load_data(const ExperimentConfig& cfg, std::uint64_t seed);
ModelSpec build_model(const ExperimentConfig& cfg, const DataBundle& data);
TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed);
TrainConfig tune_config(const ExperimentConfig& cfg, std::uint64_t seed);

/// Checks the cross-field rules that need the data (trigger fits, decoy
/// budget below the channel count, targeted class exists).
void validate_against(const ExperimentConfig& cfg, const DataBundle& data, const ModelSpec& spec);

struct DefenseArtifacts {
    Checkpoint checkpoint;
    std::vector<SweepPoint> sweep;
};

/// Stage runner for one (config, seed). Artifacts live in
/// <out>/<experiment_id>/<stage>.<ext>; a stage whose artifact already
/// exists loads it instead of recomputing.
class Experiment {
public:
    Experiment(ExperimentConfig cfg, std::filesystem::path out, std::uint64_t seed);

    const std::string& id() const noexcept { return id_; }
    const std::filesystem::path& dir() const noexcept { return dir_; }
    const DataBundle& data() const noexcept { return data_; }
    const ModelSpec& spec() const noexcept { return spec_; }
    const ExperimentConfig& config() const noexcept { return cfg_; }

    std::filesystem::path attack_path(const std::string& attack) const;
    std::filesystem::path defense_path(const std::string& attack, const std::string& defense) const;

    /// train.fpn: the honestly trained model.
    Checkpoint train();
    /// attack-<attack>.fpn plus attack-<attack>.json ("none" is train.fpn).
    Checkpoint attack(const std::string& attack);
    /// defend-<attack>-<defense>.fpn (+ .json, + sweep CSV for pruning).
    /// Reads only the attack checkpoint, D_valid and the test sets.
    DefenseArtifacts defend(const std::string& attack, const std::string& defense);
    /// eval-<attack>-<defense>.json in the summary schema.
    ExperimentRecord eval(const std::string& attack, const std::string& defense);

    /// Both attacks x {none, prune, tune, fine-prune}; failed cells are
    /// recorded and the grid continues.
    std::vector<ExperimentRecord> grid();

private:
    Checkpoint load_stage(const std::filesystem::path& path, const char* stage) const;
    double seconds_since(double start) const;

    ExperimentConfig cfg_;
    std::uint64_t seed_;
    std::string id_;
    std::filesystem::path dir_;
    DataBundle data_;
    ModelSpec spec_;
};

/// Runs Experiment::grid for every configured seed and writes the report set
/// to <out>/<grid_id>/. Returns all records.
std::vector<ExperimentRecord> reproduce(const ExperimentConfig& cfg, const std::filesystem::path& out);

}  // namespace fineprune
