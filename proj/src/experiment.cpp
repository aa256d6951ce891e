#include "fineprune/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>

#include "fineprune/metrics.hpp"
#include "fineprune/rng.hpp"

namespace fineprune {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kAttacks{"none", "baseline", "pruning-aware"};
const std::vector<std::string> kDefenses{"none", "prune", "tune", "fine-prune", "perturb-tune"};
const std::vector<std::string> kGridAttacks{"baseline", "pruning-aware"};
const std::vector<std::string> kGridDefenses{"none", "prune", "tune", "fine-prune"};

// Keys that name stages or reporting, not the trained artifacts.
const std::vector<std::string> kStageKeys{"attack", "defense", "drop_threshold", "noise_scale",
                                          "tune_epochs", "record_runtime"};

bool one_of(const std::string& v, const std::vector<std::string>& options) {
    return std::find(options.begin(), options.end(), v) != options.end();
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
    return out;
}

std::string short_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf, 12);
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

json sweep_to_json(const std::vector<SweepPoint>& sweep) {
    json out = json::array();
    for (const SweepPoint& p : sweep) {
        out.push_back({{"pruned", p.pruned},
                       {"fraction_pruned", p.fraction_pruned},
                       {"valid_accuracy", p.valid_accuracy},
                       {"clean_accuracy", p.clean_accuracy},
                       {"backdoor_success", p.backdoor_success}});
    }
    return out;
}

std::vector<SweepPoint> sweep_from_json(const json& j) {
    std::vector<SweepPoint> out;
    for (const json& p : j) {
        out.push_back({p.at("pruned").get<std::size_t>(), p.at("fraction_pruned").get<double>(),
                       p.at("valid_accuracy").get<double>(), p.at("clean_accuracy").get<double>(),
                       p.at("backdoor_success").get<double>()});
    }
    return out;
}

json metrics_json(const MetricsReport& m) {
    return {{"clean_accuracy", m.clean_accuracy},
            {"backdoor_accuracy", m.backdoor_accuracy},
            {"targeted_success", m.targeted_success},
            {"untargeted_success", m.untargeted_success},
            {"backdoor_success", m.backdoor_success()}};
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Reads one field, naming the key on a type error.
template <class T>
T field(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type (got " + std::string(v.type_name()) + ")");
    }
}

using Setter = std::function<void(ExperimentConfig&, const json&, const std::string&)>;

template <class T>
Setter setter(T ExperimentConfig::*member) {
    return [member](ExperimentConfig& c, const json& v, const std::string& key) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) {
                throw ConfigError("config key '" + key + "' must be a non-negative integer");
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
        }
        c.*member = field<T>(v, key);
    };
}

const std::map<std::string, Setter>& setters() {
    using C = ExperimentConfig;
    static const std::map<std::string, Setter> table{
        {"schema_version", setter(&C::schema_version)},
        {"dataset", setter(&C::dataset)},
        {"data_root", setter(&C::data_root)},
        {"train_images", setter(&C::train_images)},
        {"train_labels", setter(&C::train_labels)},
        {"test_images", setter(&C::test_images)},
        {"test_labels", setter(&C::test_labels)},
        {"synth_per_class", setter(&C::synth_per_class)},
        {"synth_test_per_class", setter(&C::synth_test_per_class)},
        {"synth_noise", setter(&C::synth_noise)},
        {"valid_fraction", setter(&C::valid_fraction)},
        {"model", setter(&C::model)},
        {"conv1_filters", setter(&C::conv1_filters)},
        {"conv2_filters", setter(&C::conv2_filters)},
        {"hidden", setter(&C::hidden)},
        {"trigger_size", setter(&C::trigger_size)},
        {"trigger_value", setter(&C::trigger_value)},
        {"label_map", setter(&C::label_map)},
        {"target_label", setter(&C::target_label)},
        {"attack", setter(&C::attack)},
        {"poison_fraction", setter(&C::poison_fraction)},
        {"decoy_count", setter(&C::decoy_count)},
        {"min_backdoor", setter(&C::min_backdoor)},
        {"max_clean_drop", setter(&C::max_clean_drop)},
        {"max_retries", setter(&C::max_retries)},
        {"defense", setter(&C::defense)},
        {"drop_threshold", setter(&C::drop_threshold)},
        {"noise_scale", setter(&C::noise_scale)},
        {"tune_epochs", setter(&C::tune_epochs)},
        {"epochs", setter(&C::epochs)},
        {"batch_size", setter(&C::batch_size)},
        {"learning_rate", setter(&C::learning_rate)},
        {"seeds", setter(&C::seeds)},
        {"record_runtime", setter(&C::record_runtime)},
    };
    return table;
}

// 1-based line of the first occurrence of "key" in the config text.
std::size_t line_of(const std::string& text, const std::string& key) {
    const auto pos = text.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) + 1;
}

ExperimentConfig from_json_impl(const json& j, const std::function<std::string(const std::string&)>& where) {
    if (!j.is_object()) throw ConfigError(where("") + "config must be a JSON object");
    if (!j.contains("schema_version")) throw ConfigError(where("") + "config is missing 'schema_version'");
    ExperimentConfig cfg;
    const auto& table = setters();
    for (const auto& [key, value] : j.items()) {
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError(where(key) + "unknown config key '" + key + "'");
        try {
            it->second(cfg, value, key);
        } catch (const ConfigError& e) {
            throw ConfigError(where(key) + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(where("") + e.what());
    }
    return cfg;
}

}  // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (schema_version != kSchemaVersion) {
        fail("schema_version " + std::to_string(schema_version) + " is not supported (expected " +
             std::to_string(kSchemaVersion) + ")");
    }
    if (dataset != "synthetic" && dataset != "idx") fail("dataset must be 'synthetic' or 'idx', got '" + dataset + "'");
    if (dataset == "synthetic" && (synth_per_class == 0 || synth_test_per_class == 0)) {
        fail("synth_per_class and synth_test_per_class must be positive");
    }
    if (!(synth_noise >= 0.0)) fail("synth_noise must be >= 0");
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0)) fail("valid_fraction must lie in (0,1)");
    if (model != "two_conv_two_fc") fail("model must be 'two_conv_two_fc', got '" + model + "'");
    if (conv1_filters == 0 || conv2_filters < 2 || hidden == 0) {
        fail("conv1_filters and hidden must be positive and conv2_filters at least 2");
    }
    if (trigger_size == 0) fail("trigger_size must be positive");
    if (!(trigger_value >= 0.0 && trigger_value <= 1.0)) fail("trigger_value must lie in [0,1]");
    if (!one_of(label_map, {"shift", "targeted", "untargeted"})) {
        fail("label_map must be one of shift, targeted, untargeted; got '" + label_map + "'");
    }
    if (!one_of(attack, kAttacks)) fail("attack must be one of " + join(kAttacks) + "; got '" + attack + "'");
    if (!one_of(defense, kDefenses)) fail("defense must be one of " + join(kDefenses) + "; got '" + defense + "'");
    if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) fail("poison_fraction must lie in [0,1]");
    if (!(min_backdoor >= 0.0 && min_backdoor <= 1.0)) fail("min_backdoor must lie in [0,1]");
    if (!(max_clean_drop >= 0.0 && max_clean_drop <= 1.0)) fail("max_clean_drop must lie in [0,1]");
    if (!(drop_threshold > 0.0 && drop_threshold < 1.0)) fail("drop_threshold must lie in (0,1)");
    if (!(noise_scale >= 0.0)) fail("noise_scale must be >= 0");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (seeds.empty()) fail("seeds must list at least one seed");
}

json config_to_json(const ExperimentConfig& c) {
    return {{"schema_version", c.schema_version},
            {"dataset", c.dataset},
            {"data_root", c.data_root},
            {"train_images", c.train_images},
            {"train_labels", c.train_labels},
            {"test_images", c.test_images},
            {"test_labels", c.test_labels},
            {"synth_per_class", c.synth_per_class},
            {"synth_test_per_class", c.synth_test_per_class},
            {"synth_noise", c.synth_noise},
            {"valid_fraction", c.valid_fraction},
            {"model", c.model},
            {"conv1_filters", c.conv1_filters},
            {"conv2_filters", c.conv2_filters},
            {"hidden", c.hidden},
            {"trigger_size", c.trigger_size},
            {"trigger_value", c.trigger_value},
            {"label_map", c.label_map},
            {"target_label", c.target_label},
            {"attack", c.attack},
            {"poison_fraction", c.poison_fraction},
            {"decoy_count", c.decoy_count},
            {"min_backdoor", c.min_backdoor},
            {"max_clean_drop", c.max_clean_drop},
            {"max_retries", c.max_retries},
            {"defense", c.defense},
            {"drop_threshold", c.drop_threshold},
            {"noise_scale", c.noise_scale},
            {"tune_epochs", c.tune_epochs},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"seeds", c.seeds},
            {"record_runtime", c.record_runtime}};
}

ExperimentConfig config_from_json(const json& j) {
    return from_json_impl(j, [](const std::string&) { return std::string(); });
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return from_json_impl(j, [&](const std::string& key) {
        const std::size_t line = key.empty() ? 0 : line_of(text, key);
        return source + (line ? ":" + std::to_string(line) : std::string()) + ": ";
    });
}

ExperimentConfig load_config(const fs::path& path) {
    std::string text;
    try {
        text = read_text(path);
    } catch (const std::exception&) {
        throw ConfigError("cannot read config " + path.string());
    }
    return parse_config(text, path.string());
}

std::string experiment_id(const ExperimentConfig& cfg, std::uint64_t seed) {
    json j = config_to_json(cfg);
    for (const auto& k : kStageKeys) j.erase(k);
    j["seeds"] = json::array({seed});
    return short_hash(j.dump());
}

std::string grid_id(const ExperimentConfig& cfg) {
    json j = config_to_json(cfg);
    for (const auto& k : kStageKeys) {
        if (k != "drop_threshold" && k != "tune_epochs") j.erase(k);
    }
    return short_hash(j.dump());
}

DataBundle load_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    DataBundle b;
    Dataset all;
    if (cfg.dataset == "synthetic") {
        all = synth_digits(10, cfg.synth_per_class, cfg.synth_noise, derive_seed(seed, 1));
        b.test = synth_digits(10, cfg.synth_test_per_class, cfg.synth_noise, derive_seed(seed, 2));
    } else {
        fs::path root = cfg.data_root;
        if (const char* env = std::getenv("FINEPRUNE_DATA_ROOT")) root = env;
        all = load_idx(root / cfg.train_images, root / cfg.train_labels);
        b.test = load_idx(root / cfg.test_images, root / cfg.test_labels);
    }
    b.test.role = DatasetRole::Test;
    Split split = split_holdout(all, cfg.valid_fraction, derive_seed(seed, 3));
    b.train = std::move(split.train);
    b.valid = std::move(split.valid);

    LabelMap map = LabelMap::shift();
    if (cfg.label_map == "targeted") map = LabelMap::targeted(cfg.target_label);
    if (cfg.label_map == "untargeted") map = LabelMap::untargeted(derive_seed(seed, 4));
    if (cfg.trigger_size > b.train.height || cfg.trigger_size > b.train.width) {
        throw ConfigError("trigger_size " + std::to_string(cfg.trigger_size) + " does not fit " +
                          std::to_string(b.train.height) + "x" + std::to_string(b.train.width) + " images");
    }
    b.trigger = TriggerSpec::bottom_right(b.train.height, b.train.width, cfg.trigger_size,
                                          cfg.trigger_value, map);
    b.backdoor_test = backdoored_testset(b.test, b.trigger);
    return b;
}

ModelSpec build_model(const ExperimentConfig& cfg, const DataBundle& data) {
    return ModelSpec::two_conv_two_fc(data.train.height, data.train.width, data.train.classes,
                                      cfg.conv1_filters, cfg.conv2_filters, cfg.hidden);
}

TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
    TrainConfig t;
    t.epochs = cfg.epochs;
    t.batch_size = cfg.batch_size;
    t.learning_rate = cfg.learning_rate;
    t.seed = seed;
    return t;
}

TrainConfig tune_config(const ExperimentConfig& cfg, std::uint64_t seed) {
    TrainConfig t = train_config(cfg, derive_seed(seed, 5));
    t.epochs = cfg.tune_epochs;
    return t;
}

void validate_against(const ExperimentConfig& cfg, const DataBundle& data, const ModelSpec& spec) {
    try {
        data.trigger.validate(data.train.height, data.train.width, data.train.classes);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("trigger: ") + e.what());
    }
    const std::size_t channels = spec.channel_count(*spec.last_conv_layer());
    if (cfg.decoy_count >= channels) {
        throw ConfigError("decoy_count " + std::to_string(cfg.decoy_count) + " must be below the " +
                          std::to_string(channels) + " channels of the last conv layer");
    }
    if (data.valid.empty()) throw ConfigError("valid_fraction leaves an empty validation set");
}

Experiment::Experiment(ExperimentConfig cfg, fs::path out, std::uint64_t seed)
    : cfg_(std::move(cfg)), seed_(seed), id_(experiment_id(cfg_, seed)), dir_(std::move(out) / id_) {
    cfg_.validate();
    data_ = load_data(cfg_, seed_);
    spec_ = build_model(cfg_, data_);
    validate_against(cfg_, data_, spec_);
    fs::create_directories(dir_);
}

fs::path Experiment::attack_path(const std::string& attack) const {
    return attack == "none" ? dir_ / "train.fpn" : dir_ / ("attack-" + attack + ".fpn");
}

fs::path Experiment::defense_path(const std::string& attack, const std::string& defense) const {
    return dir_ / ("defend-" + attack + "-" + defense + ".fpn");
}

double Experiment::seconds_since(double start) const {
    return cfg_.record_runtime ? now_seconds() - start : 0.0;
}

Checkpoint Experiment::load_stage(const fs::path& path, const char* stage) const {
    if (!fs::exists(path)) {
        throw MissingArtifact(std::string(stage) + " needs " + path.string() + ", which has not been written");
    }
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.spec == spec_)) throw MissingArtifact(path.string() + " was written for a different model");
    return ck;
}

Checkpoint Experiment::train() {
    const fs::path path = dir_ / "train.fpn";
    if (fs::exists(path)) return load_stage(path, "train");
    const double t0 = now_seconds();
    const Parameters params = train_honest(spec_, data_.train, train_config(cfg_, seed_));
    save_checkpoint(path, spec_, params);
    const MetricsReport m = evaluate(spec_, params, data_.test, data_.backdoor_test, data_.trigger.map.kind);
    json side = {{"experiment_id", id_}, {"stage", "train"}, {"seed", seed_}, {"metrics", metrics_json(m)}};
    if (cfg_.record_runtime) side["runtime_s"] = round3(seconds_since(t0));
    write_json(dir_ / "train.json", side);
    return {spec_, params, std::nullopt};
}

Checkpoint Experiment::attack(const std::string& attack) {
    if (!one_of(attack, kAttacks)) throw ConfigError("unknown attack '" + attack + "'");
    if (attack == "none") return train();
    const fs::path path = attack_path(attack);
    if (fs::exists(path)) return load_stage(path, "attack");

    const Checkpoint honest = train();
    const double t0 = now_seconds();
    const TrainConfig tc = train_config(cfg_, seed_);
    AttackGoals goals{cfg_.max_clean_drop, cfg_.min_backdoor, cfg_.max_retries};
    AttackResult r;
    if (attack == "baseline") {
        const double honest_acc = attacker_scores(spec_, honest.params, data_.train, data_.trigger).first;
        r = baseline_attack(spec_, data_.train, data_.trigger, cfg_.poison_fraction, tc, goals, honest_acc);
    } else {
        const std::size_t channels = spec_.channel_count(*spec_.last_conv_layer());
        const std::size_t decoys = cfg_.decoy_count ? cfg_.decoy_count : default_decoy_count(channels);
        r = pruning_aware_attack(spec_, data_.train, data_.trigger, cfg_.poison_fraction, decoys, tc,
                                 goals, &honest.params);
    }
    save_checkpoint(path, spec_, r.params);

    json log = json::array();
    for (const AttackStep& s : r.log) {
        log.push_back({{"step", s.step}, {"live_channels", s.live_channels},
                       {"clean_accuracy", s.clean_accuracy}, {"backdoor_success", s.backdoor_success}});
    }
    const TriggerSpec& t = r.trigger;
    json side = {{"experiment_id", id_},
                 {"stage", "attack"},
                 {"attack", attack},
                 {"seed", seed_},
                 {"training_seed", r.seed},
                 {"poison_fraction", r.poison_fraction},
                 {"honest_accuracy", r.honest_accuracy},
                 {"trigger",
                  {{"row", t.row}, {"col", t.col}, {"height", t.height}, {"width", t.width},
                   {"value", t.value}, {"map", to_string(t.map.kind)}, {"target", t.map.target},
                   {"map_seed", t.map.seed}}},
                 {"decoys", r.decoys},
                 {"log", log}};
    if (r.layer) {
        side["layer"] = *r.layer;
        // Dormancy audit: decoy activations on the defender's clean data and
        // on the triggered training distribution. Reported, not enforced.
        const Dataset triggered = backdoored_testset(data_.train, data_.trigger);
        const ActivationProfile clean = profile(spec_, r.params, data_.valid, *r.layer);
        const ActivationProfile trig = profile(spec_, r.params, triggered, *r.layer);
        json audit = json::array();
        for (std::size_t c : r.decoys) {
            audit.push_back({{"channel", c}, {"mean_clean_activation", clean.mean[c]},
                             {"mean_triggered_activation", trig.mean[c]}});
        }
        side["decoy_audit"] = audit;
    }
    if (cfg_.record_runtime) side["runtime_s"] = round3(seconds_since(t0));
    write_json(dir_ / ("attack-" + attack + ".json"), side);
    return {spec_, r.params, std::nullopt};
}

DefenseArtifacts Experiment::defend(const std::string& attack, const std::string& defense) {
    if (!one_of(defense, kDefenses)) throw ConfigError("unknown defense '" + defense + "'");
    const fs::path out = defense_path(attack, defense);
    const fs::path side_path = fs::path(out).replace_extension(".json");
    if (fs::exists(out) && fs::exists(side_path)) {
        DefenseArtifacts a{load_stage(out, "defend"), {}};
        const json side = json::parse(read_text(side_path));
        if (side.contains("sweep")) a.sweep = sweep_from_json(side["sweep"]);
        return a;
    }
    const fs::path in = attack_path(attack);
    const Checkpoint input = load_stage(in, "defend");
    const double t0 = now_seconds();
    const std::size_t layer = *spec_.last_conv_layer();
    const EvalSets sets{data_.test, data_.backdoor_test, data_.trigger.map.kind};
    const TrainConfig tc = tune_config(cfg_, seed_);

    DefenseArtifacts a{{spec_, input.params, input.mask}, {}};
    if (defense == "none") {
        write_text(out, read_text(in));
    } else {
        if (defense == "prune" || defense == "fine-prune") {
            DefenseOutcome o = defense == "prune"
                                   ? pruning_defense(spec_, input.params, data_.valid, sets, layer, cfg_.drop_threshold)
                                   : fine_prune(spec_, input.params, data_.valid, sets, layer, cfg_.drop_threshold, tc);
            a.checkpoint.params = std::move(o.params);
            a.checkpoint.mask = std::move(o.mask);
            a.sweep = std::move(o.sweep);
        } else if (defense == "tune") {
            a.checkpoint.params = fine_tune(spec_, input.params, data_.valid, tc);
        } else {
            a.checkpoint.params = perturb_then_tune(spec_, input.params, data_.valid, cfg_.noise_scale,
                                                    derive_seed(seed_, 6), tc);
        }
        save_checkpoint(out, spec_, a.checkpoint.params, a.checkpoint.mask ? &*a.checkpoint.mask : nullptr);
        if (!a.sweep.empty()) write_text(fs::path(out).replace_extension(".sweep.csv"), sweep_csv(a.sweep));
    }
    json side = {{"experiment_id", id_}, {"stage", "defend"}, {"attack", attack},
                 {"defense", defense}, {"seed", seed_}};
    if (!a.sweep.empty()) side["sweep"] = sweep_to_json(a.sweep);
    if (a.checkpoint.mask) side["pruned_channels"] = a.checkpoint.mask->dead_count();
    if (cfg_.record_runtime) side["runtime_s"] = round3(seconds_since(t0));
    write_json(side_path, side);
    return a;
}

ExperimentRecord Experiment::eval(const std::string& attack, const std::string& defense) {
    const double t0 = now_seconds();
    const Checkpoint ck = load_stage(defense_path(attack, defense), "eval");
    const MetricsReport m = evaluate(spec_, ck.params, data_.test, data_.backdoor_test,
                                     data_.trigger.map.kind, ck.mask ? &*ck.mask : nullptr);
    ExperimentRecord r = make_record(id_, attack, defense, seed_, m, seconds_since(t0));
    const json summary = summary_to_json({r});
    write_json(dir_ / ("eval-" + attack + "-" + defense + ".json"), summary["experiments"][0]);
    return r;
}

std::vector<ExperimentRecord> Experiment::grid() {
    std::vector<ExperimentRecord> records;
    for (const std::string& a : kGridAttacks) {
        try {
            attack(a);
        } catch (const std::exception& e) {
            for (const std::string& d : kGridDefenses) {
                records.push_back(failed_record(id_, a, d, seed_, std::string("attack failed: ") + e.what()));
            }
            continue;
        }
        for (const std::string& d : kGridDefenses) {
            const double t0 = now_seconds();
            try {
                DefenseArtifacts art = defend(a, d);
                ExperimentRecord r = eval(a, d);
                r.runtime_s = round3(seconds_since(t0));
                r.sweep = std::move(art.sweep);
                records.push_back(std::move(r));
            } catch (const std::exception& e) {
                records.push_back(failed_record(id_, a, d, seed_, e.what()));
            }
        }
    }
    return records;
}

std::vector<ExperimentRecord> reproduce(const ExperimentConfig& cfg, const fs::path& out) {
    cfg.validate();
    std::vector<ExperimentRecord> records;
    for (std::uint64_t seed : cfg.seeds) {
        Experiment e(cfg, out, seed);
        auto cell = e.grid();
        records.insert(records.end(), cell.begin(), cell.end());
    }
    const fs::path dir = out / grid_id(cfg);
    write_json(dir / "config.json", config_to_json(cfg));
    build_reports(records, dir);
    return records;
}

}  // namespace fineprune
