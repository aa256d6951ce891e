// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance --tensor-suite <bin> --network-suite <bin> [--out <dir>]
//
// Runs the full default grid on seeds 0, 1, 2 twice (the second run checks
// determinism), so expect it to take about 12 minutes on one core.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fineprune/experiment.hpp"
#include "fineprune/metrics.hpp"

using namespace fineprune;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds(Clock::time_point since) {
    return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        detail << (detail.tellp() > 0 ? "; " : "") << (ok ? "" : "FAILED ") << what;
    }
};

int failures = 0;

void report(int n, const std::function<void(Verdict&)>& body) {
    Verdict v;
    try {
        body(v);
    } catch (const std::exception& e) {
        v.require(false, std::string("error: ") + e.what());
    }
    if (!v.pass) ++failures;
    std::printf("criterion %d: %s  %s\n", n, v.pass ? "PASS" : "FAIL", v.detail.str().c_str());
    std::fflush(stdout);
}

std::string f3(double x) { return format3(x); }

// Unrounded metrics of a stored defense artifact.
MetricsReport measure(const Experiment& e, const std::string& attack, const std::string& defense) {
    const Checkpoint ck = load_checkpoint(e.defense_path(attack, defense));
    return evaluate(e.spec(), ck.params, e.data().test, e.data().backdoor_test,
                    e.data().trigger.map.kind, ck.mask ? &*ck.mask : nullptr);
}

const ExperimentRecord& find(const std::vector<ExperimentRecord>& records, std::uint64_t seed,
                             const std::string& attack, const std::string& defense) {
    for (const auto& r : records) {
        if (r.seed == seed && r.attack == attack && r.defense == defense) {
            if (r.error) throw std::runtime_error(attack + "/" + defense + " failed: " + *r.error);
            return r;
        }
    }
    throw std::runtime_error("no record for " + attack + "/" + defense);
}

std::map<fs::path, std::string> snapshot(const fs::path& root) {
    std::map<fs::path, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (entry.is_regular_file()) files[fs::relative(entry.path(), root)] = read_text(entry.path());
    }
    return files;
}

void put_be32(std::string& s, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

bool idx_fixture_exact(const fs::path& dir) {
    std::string images, labels;
    put_be32(images, 0x803);
    put_be32(images, 2);
    put_be32(images, 2);
    put_be32(images, 2);
    for (unsigned char b : {0, 255, 128, 1, 7, 254, 64, 32}) images.push_back(static_cast<char>(b));
    put_be32(labels, 0x801);
    put_be32(labels, 2);
    labels.push_back(3);
    labels.push_back(9);
    write_text(dir / "img", images);
    write_text(dir / "lab", labels);
    const Dataset d = load_idx(dir / "img", dir / "lab");
    const std::vector<double> expect{0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0,
                                     7.0 / 255.0, 254.0 / 255.0, 64.0 / 255.0, 32.0 / 255.0};
    return d.pixels == expect && d.labels == std::vector<int>{3, 9} && d.height == 2 && d.width == 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fine-pruning acceptance run"};
    std::string tensor_suite, network_suite, out = "acceptance_runs";
    app.add_option("--tensor-suite", tensor_suite)->required()->check(CLI::ExistingFile);
    app.add_option("--network-suite", network_suite)->required()->check(CLI::ExistingFile);
    app.add_option("--out", out);
    CLI11_PARSE(app, argc, argv);

    const fs::path root(out);
    fs::remove_all(root);

    report(1, [&](Verdict& v) {
        const auto t0 = Clock::now();
        for (const std::string& suite : {tensor_suite, network_suite}) {
            const int rc = std::system((suite + " > /dev/null 2>&1").c_str());
            v.require(rc == 0, fs::path(suite).filename().string() + (rc == 0 ? " passed" : " failed"));
        }
        const double t = seconds(t0);
        v.require(t < 120.0, "runtime " + f3(t) + " s (limit 120)");
    });

    ExperimentConfig cfg;
    cfg.seeds = {0, 1, 2};
    cfg.record_runtime = false;

    const auto t0 = Clock::now();
    std::vector<ExperimentRecord> records;
    try {
        records = reproduce(cfg, root / "a");
    } catch (const std::exception& e) {
        std::printf("reproduce failed: %s\n", e.what());
        return 1;
    }
    const double grid_seconds = seconds(t0);
    std::printf("grid: %zu records in %.1f s\n", records.size(), grid_seconds);

    std::vector<Experiment> runs;
    for (std::uint64_t seed : cfg.seeds) runs.emplace_back(cfg, root / "a", seed);

    report(2, [&](Verdict& v) {
        for (std::size_t k = 0; k < runs.size(); ++k) {
            const MetricsReport m = measure(runs[k], "baseline", "none");
            v.require(m.clean_accuracy >= 0.99 && m.backdoor_success() >= 0.95,
                      "seed " + std::to_string(cfg.seeds[k]) + " cl " + f3(m.clean_accuracy) + " bd " +
                          f3(m.backdoor_success()));
        }
        v.require(grid_seconds <= 1800.0, "grid runtime " + f3(grid_seconds) + " s (limit 1800)");
    });

    report(3, [&](Verdict& v) {
        for (std::uint64_t seed : cfg.seeds) {
            const auto& sweep = find(records, seed, "baseline", "prune").sweep;
            const double base = sweep.at(0).clean_accuracy;
            double best = 1.0;
            for (const SweepPoint& p : sweep)
                if (base - p.clean_accuracy <= 0.04) best = std::min(best, p.backdoor_success);
            v.require(best <= 0.15, "seed " + std::to_string(seed) + " min bd within 4 pts " + f3(best));
        }
    });

    report(4, [&](Verdict& v) {
        for (std::size_t k = 0; k < runs.size(); ++k) {
            const std::uint64_t seed = cfg.seeds[k];
            const auto& sweep = find(records, seed, "pruning-aware", "prune").sweep;
            const double base = sweep.at(0).clean_accuracy;
            double worst = 1.0;
            for (const SweepPoint& p : sweep)
                if (base - p.clean_accuracy <= 0.04) worst = std::min(worst, p.backdoor_success);
            v.require(worst >= 0.80, "seed " + std::to_string(seed) + " min bd within 4 pts " + f3(worst));

            const Experiment& e = runs[k];
            const Checkpoint ck = load_checkpoint(e.attack_path("pruning-aware"));
            const auto side = nlohmann::json::parse(read_text(e.dir() / "attack-pruning-aware.json"));
            const auto decoys = side.at("decoys").get<std::vector<std::size_t>>();
            const std::size_t layer = side.at("layer").get<std::size_t>();
            std::vector<std::size_t> all(e.data().valid.size());
            std::iota(all.begin(), all.end(), 0);
            const ForwardResult fr = forward(e.spec(), ck.params, e.data().valid.batch(all), nullptr, {{layer}, {}});
            const Tensor& act = fr.trace.at(layer);
            const std::size_t channels = act.dim(1), plane = act.dim(2) * act.dim(3);
            std::size_t nonzero = 0;
            for (std::size_t b = 0; b < act.dim(0); ++b)
                for (std::size_t c : decoys)
                    for (std::size_t i = 0; i < plane; ++i) nonzero += act[(b * channels + c) * plane + i] != 0.0;
            v.require(nonzero == 0 && !decoys.empty(),
                      std::to_string(decoys.size()) + " decoys, " + std::to_string(nonzero) + " nonzero activations");
        }
    });

    report(5, [&](Verdict& v) {
        for (std::size_t k = 0; k < runs.size(); ++k) {
            const Experiment& e = runs[k];
            const std::string seed = "seed " + std::to_string(cfg.seeds[k]);
            for (const std::string a : {"baseline", "pruning-aware"}) {
                const MetricsReport none = measure(e, a, "none");
                const MetricsReport fp = measure(e, a, "fine-prune");
                const double drop = none.clean_accuracy - fp.clean_accuracy;
                v.require(fp.backdoor_success() <= 0.05 && drop <= 0.01,
                          seed + " " + a + " bd " + f3(fp.backdoor_success()) + " drop " + f3(drop));
            }
            const double tune = measure(e, "baseline", "tune").backdoor_success();
            const double fp = measure(e, "baseline", "fine-prune").backdoor_success();
            v.require(tune >= 3.0 * fp, seed + " tune " + f3(tune) + " vs fine-prune " + f3(fp));
        }
    });

    report(6, [&](Verdict& v) {
        for (std::uint64_t seed : cfg.seeds) {
            const UtilityMatrix u = UtilityMatrix::from_records(records, seed);
            v.require(u.complete() && u.fine_pruning_dominates(), "seed " + std::to_string(seed));
        }
    });

    report(7, [&](Verdict& v) {
        reproduce(cfg, root / "b");
        const auto a = snapshot(root / "a"), b = snapshot(root / "b");
        std::size_t differing = a.size() == b.size() ? 0 : 1;
        std::size_t checkpoints = 0, round_trips = 0;
        for (const auto& [path, bytes] : a) {
            const auto it = b.find(path);
            if (it == b.end() || it->second != bytes) ++differing;
            if (path.extension() == ".fpn") {
                ++checkpoints;
                const Checkpoint ck = decode_checkpoint(bytes);
                round_trips += encode_checkpoint(ck.spec, ck.params, ck.mask ? &*ck.mask : nullptr) == bytes;
            }
        }
        v.require(differing == 0, std::to_string(a.size()) + " files compared, " + std::to_string(differing) + " differ");
        v.require(round_trips == checkpoints && checkpoints > 0,
                  std::to_string(round_trips) + "/" + std::to_string(checkpoints) + " checkpoints round-trip");
        v.require(idx_fixture_exact(root), "IDX fixture");
    });

    report(8, [&](Verdict& v) {
        const double a = round3(utility(0.990, 0.435));
        const double b = round3(utility(0.988, 0.020));
        const double c = round3(untargeted_success(0.85, 0.0068));
        v.require(a == 0.555, f3(a));
        v.require(b == 0.968, f3(b));
        v.require(c == 0.992, f3(c));
    });

    return failures == 0 ? 0 : 1;
}
