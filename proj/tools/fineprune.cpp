// fineprune: batch runner for the backdoor / fine-pruning lab.
//
//   fineprune train|attack|defend|eval|reproduce --config <path> [--out <dir>] [--seed <u64>]
//
// FINEPRUNE_DATA_ROOT overrides the config's data_root for idx datasets.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fineprune/experiment.hpp"
#include "fineprune/metrics.hpp"

using namespace fineprune;

namespace {

struct Options {
    std::string config;
    std::string out = "runs";
    std::optional<std::uint64_t> seed;
};

void print_record(const ExperimentRecord& r) {
    if (r.error) {
        std::printf("%s seed %llu %-13s %-12s FAILED: %s\n", r.experiment_id.c_str(),
                    static_cast<unsigned long long>(r.seed), r.attack.c_str(), r.defense.c_str(), r.error->c_str());
        return;
    }
    std::printf("%s seed %llu %-13s %-12s cl %s bd %s utility %s\n", r.experiment_id.c_str(),
                static_cast<unsigned long long>(r.seed), r.attack.c_str(), r.defense.c_str(),
                format3(r.cl).c_str(), format3(r.bd).c_str(), format3(r.utility).c_str());
}

int run(const std::string& command, const Options& opt) {
    ExperimentConfig cfg = load_config(opt.config);
    if (opt.seed) cfg.seeds = {*opt.seed};

    if (command == "reproduce") {
        const auto records = reproduce(cfg, opt.out);
        for (const auto& r : records) print_record(r);
        std::printf("reports: %s\n", (std::filesystem::path(opt.out) / grid_id(cfg)).string().c_str());
        return 0;
    }

    for (std::uint64_t seed : cfg.seeds) {
        Experiment e(cfg, opt.out, seed);
        if (command == "train") {
            e.train();
            std::printf("%s\n", (e.dir() / "train.fpn").string().c_str());
        } else if (command == "attack") {
            e.attack(cfg.attack);
            std::printf("%s\n", e.attack_path(cfg.attack).string().c_str());
        } else if (command == "defend") {
            e.defend(cfg.attack, cfg.defense);
            std::printf("%s\n", e.defense_path(cfg.attack, cfg.defense).string().c_str());
        } else {
            print_record(e.eval(cfg.attack, cfg.defense));
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Backdoor attacks and the fine-pruning defense at desk scale"};
    app.require_subcommand(1);
    Options opt;
    for (const char* name : {"train", "attack", "defend", "eval", "reproduce"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", opt.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "artifact root directory")->capture_default_str();
        sub->add_option("--seed", opt.seed, "run this seed instead of the configured list");
    }
    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, opt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << command << " failed: " << e.what() << "\n";
        return 1;
    }
}
