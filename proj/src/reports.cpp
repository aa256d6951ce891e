#include "fineprune/reports.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fineprune/metrics.hpp"

namespace fineprune {

using nlohmann::json;

ExperimentRecord make_record(std::string experiment_id, std::string attack, std::string defense,
                             std::uint64_t seed, const MetricsReport& m, double runtime_s) {
    ExperimentRecord r;
    r.experiment_id = std::move(experiment_id);
    r.attack = std::move(attack);
    r.defense = std::move(defense);
    r.seed = seed;
    r.semantics = m.map_kind == LabelMap::Kind::Untargeted ? "untargeted" : "targeted";
    r.cl = round3(m.clean_accuracy);
    r.bd = round3(m.backdoor_success());
    r.utility = round3(utility(r.cl, r.bd));
    r.runtime_s = round3(runtime_s);
    return r;
}

ExperimentRecord failed_record(std::string experiment_id, std::string attack, std::string defense,
                               std::uint64_t seed, std::string error) {
    ExperimentRecord r;
    r.experiment_id = std::move(experiment_id);
    r.attack = std::move(attack);
    r.defense = std::move(defense);
    r.seed = seed;
    r.error = std::move(error);
    return r;
}

UtilityMatrix UtilityMatrix::from_records(const std::vector<ExperimentRecord>& records,
                                          std::uint64_t seed) {
    UtilityMatrix m;
    m.seed = seed;
    for (const ExperimentRecord& r : records) {
        if (r.seed != seed || r.error) continue;
        for (std::size_t d = 0; d < kDefenses.size(); ++d) {
            for (std::size_t a = 0; a < kAttacks.size(); ++a) {
                if (r.defense == kDefenses[d] && r.attack == kAttacks[a]) m.cell[d][a] = r.utility;
            }
        }
    }
    return m;
}

bool UtilityMatrix::fine_pruning_dominates() const {
    for (std::size_t a = 0; a < kAttacks.size(); ++a) {
        if (cell[0][a] && cell[1][a] && *cell[1][a] < *cell[0][a]) return false;
    }
    return true;
}

bool UtilityMatrix::complete() const {
    for (const auto& row : cell)
        for (const auto& c : row)
            if (!c) return false;
    return true;
}

json summary_to_json(const std::vector<ExperimentRecord>& records) {
    json experiments = json::array();
    json gaps = json::array();
    for (const ExperimentRecord& r : records) {
        json e = {{"experiment_id", r.experiment_id}, {"attack", r.attack}, {"defense", r.defense},
                  {"seed", r.seed}, {"semantics", r.semantics}, {"runtime_s", r.runtime_s}};
        if (r.error) {
            e["cl"] = nullptr;
            e["bd"] = nullptr;
            e["utility"] = nullptr;
            e["error"] = *r.error;
            gaps.push_back(r.attack + "/" + r.defense + "/seed" + std::to_string(r.seed));
        } else {
            e["cl"] = r.cl;
            e["bd"] = r.bd;
            e["utility"] = r.utility;
        }
        experiments.push_back(std::move(e));
    }
    std::string status = "complete";
    if (records.empty()) status = "no experiments";
    else if (!gaps.empty()) status = "partial";
    return {{"schema_version", 1}, {"status", status}, {"experiments", experiments}, {"gaps", gaps}};
}

std::vector<ExperimentRecord> summary_from_json(const json& j) {
    std::vector<ExperimentRecord> out;
    for (const json& e : j.at("experiments")) {
        ExperimentRecord r;
        r.experiment_id = e.at("experiment_id").get<std::string>();
        r.attack = e.at("attack").get<std::string>();
        r.defense = e.at("defense").get<std::string>();
        r.seed = e.at("seed").get<std::uint64_t>();
        r.semantics = e.at("semantics").get<std::string>();
        r.runtime_s = e.at("runtime_s").get<double>();
        if (e.contains("error")) {
            r.error = e["error"].get<std::string>();
        } else {
            r.cl = e.at("cl").get<double>();
            r.bd = e.at("bd").get<double>();
            r.utility = e.at("utility").get<double>();
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string format3(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", round3(value));
    return buf;
}

std::string sweep_csv(const std::vector<SweepPoint>& sweep) {
    std::string out = "fraction_pruned,clean_accuracy,backdoor_success\n";
    for (const SweepPoint& p : sweep) {
        out += format3(p.fraction_pruned) + "," + format3(p.clean_accuracy) + "," +
               format3(p.backdoor_success) + "\n";
    }
    return out;
}

std::string utility_csv(const std::vector<UtilityMatrix>& matrices) {
    std::string out = "seed,defense";
    for (const char* a : UtilityMatrix::kAttacks) out += std::string(",") + a;
    out += "\n";
    for (const UtilityMatrix& m : matrices) {
        for (std::size_t d = 0; d < UtilityMatrix::kDefenses.size(); ++d) {
            out += std::to_string(m.seed) + "," + UtilityMatrix::kDefenses[d];
            for (const auto& c : m.cell[d]) out += "," + (c ? format3(*c) : std::string("NA"));
            out += "\n";
        }
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::filesystem::path> build_reports(const std::vector<ExperimentRecord>& records,
                                                 const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> written;
    const auto summary = dir / "summary.json";
    write_text(summary, summary_to_json(records).dump(2) + "\n");
    written.push_back(summary);

    std::set<std::uint64_t> seeds;
    for (const ExperimentRecord& r : records) seeds.insert(r.seed);
    std::vector<UtilityMatrix> matrices;
    for (std::uint64_t s : seeds) matrices.push_back(UtilityMatrix::from_records(records, s));
    const auto matrix = dir / "utility_matrix.csv";
    write_text(matrix, utility_csv(matrices));
    written.push_back(matrix);

    for (const ExperimentRecord& r : records) {
        if (r.sweep.empty()) continue;
        const auto path = dir / ("sweep_" + r.attack + "_" + r.defense + "_seed" + std::to_string(r.seed) + ".csv");
        write_text(path, sweep_csv(r.sweep));
        written.push_back(path);
    }
    return written;
}

}  // namespace fineprune
