#pragma once

#include <vector>

#include "fineprune/data.hpp"
#include "fineprune/network.hpp"

namespace fineprune {

/// Clean and triggered-input quality of one model on one held-out split.
struct MetricsReport {
    double clean_accuracy = 0.0;     // A_clean
    double backdoor_accuracy = 0.0;  // A_backdoor: original labels on triggered inputs
    double targeted_success = 0.0;
    double untargeted_success = 0.0;
    LabelMap::Kind map_kind = LabelMap::Kind::Shift;
    std::vector<std::size_t> clean_correct_per_class;
    std::vector<std::size_t> clean_total_per_class;
    std::vector<std::size_t> hits_per_class;      // triggered samples hitting the attack label
    std::vector<std::size_t> eligible_per_class;  // triggered samples counted for success

    /// The rate that counts as "backdoor success" for this label map:
    /// untargeted maps use 1 - A_backdoor/A_clean, the others targeted success.
    double backdoor_success() const;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Fraction of samples whose prediction equals `labels`.
double accuracy(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                const PruneMask* mask = nullptr);

/// Fraction of triggered samples predicted as their attack label. Samples
/// whose ground truth already equals the attack label are left out of the
/// denominator. Throws std::invalid_argument when nothing is left to count.
double targeted_success(const ModelSpec& spec, const Parameters& params, const Dataset& bd_test,
                        const PruneMask* mask = nullptr);

/// 1 - a_backdoor / a_clean clamped to [0,1]; a_clean must be positive.
double untargeted_success(double a_clean, double a_backdoor);

/// Defender utility: clean accuracy minus backdoor success.
double utility(double clean_accuracy, double backdoor_success);

/// Round half away from zero to three decimals, the reporting precision.
double round3(double value);

MetricsReport evaluate(const ModelSpec& spec, const Parameters& params, const Dataset& clean_test,
                       const Dataset& bd_test, LabelMap::Kind map_kind,
                       const PruneMask* mask = nullptr);

}  // namespace fineprune
