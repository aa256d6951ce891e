#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fineprune/defense.hpp"

namespace fineprune {

/// One (attack, defense) cell of an experiment grid.
struct ExperimentRecord {
    std::string experiment_id;
    std::string attack;    // "baseline" | "pruning-aware"
    std::string defense;   // "none" | "prune" | "tune" | "fine-prune" | "perturb-tune"
    std::uint64_t seed = 0;
    std::string semantics = "targeted";  // how `bd` is defined for this row
    double cl = 0.0;
    double bd = 0.0;
    double utility = 0.0;
    double runtime_s = 0.0;
    std::optional<std::string> error;    // set when the cell failed; rates are then meaningless
    std::vector<SweepPoint> sweep;       // pruning-based defenses only

    friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

/// Fills cl, bd (rounded to three decimals) and utility from a report.
ExperimentRecord make_record(std::string experiment_id, std::string attack, std::string defense,
                             std::uint64_t seed, const MetricsReport& m, double runtime_s);

ExperimentRecord failed_record(std::string experiment_id, std::string attack, std::string defense,
                               std::uint64_t seed, std::string error);

/// Defender utility for {fine-tuning, fine-pruning} x {baseline, pruning-aware}.
struct UtilityMatrix {
    static constexpr std::array<const char*, 2> kDefenses{"tune", "fine-prune"};
    static constexpr std::array<const char*, 2> kAttacks{"baseline", "pruning-aware"};

    std::uint64_t seed = 0;
    std::array<std::array<std::optional<double>, 2>, 2> cell{};  // [defense][attack]

    static UtilityMatrix from_records(const std::vector<ExperimentRecord>& records, std::uint64_t seed);

    /// Fine-pruning >= fine-tuning in every column that has both cells.
    bool fine_pruning_dominates() const;
    bool complete() const;
};

nlohmann::json summary_to_json(const std::vector<ExperimentRecord>& records);
std::vector<ExperimentRecord> summary_from_json(const nlohmann::json& j);

/// CSV columns fraction_pruned,clean_accuracy,backdoor_success.
std::string sweep_csv(const std::vector<SweepPoint>& sweep);
std::string utility_csv(const std::vector<UtilityMatrix>& matrices);

/// Writes summary.json, utility_matrix.csv and one sweep_<attack>_<defense>_seed<k>.csv
/// per record with a sweep into `dir`. Returns the paths written.
std::vector<std::filesystem::path> build_reports(const std::vector<ExperimentRecord>& records,
                                                 const std::filesystem::path& dir);

/// Writes `text` to `path` verbatim, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Fixed-point decimal with three places ("0.968").
std::string format3(double value);

}  // namespace fineprune
