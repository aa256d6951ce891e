#include "fineprune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fineprune {

double MetricsReport::backdoor_success() const {
    return map_kind == LabelMap::Kind::Untargeted ? untargeted_success : targeted_success;
}

double accuracy(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                const PruneMask* mask) {
    if (data.empty()) throw std::invalid_argument("accuracy: empty dataset");
    const auto pred = predict(spec, params, data, mask);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

namespace {

struct SuccessCounts {
    std::size_t hits = 0;
    std::size_t eligible = 0;
};

SuccessCounts count_success(const std::vector<int>& pred, const Dataset& bd_test,
                            std::vector<std::size_t>* hits_per_class,
                            std::vector<std::size_t>* eligible_per_class) {
    SuccessCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int truth = bd_test.original_labels[i];
        if (bd_test.labels[i] == truth) continue;
        ++c.eligible;
        const bool hit = pred[i] == bd_test.labels[i];
        c.hits += hit;
        if (eligible_per_class) ++(*eligible_per_class)[static_cast<std::size_t>(truth)];
        if (hits_per_class && hit) ++(*hits_per_class)[static_cast<std::size_t>(truth)];
    }
    return c;
}

}  // namespace

double targeted_success(const ModelSpec& spec, const Parameters& params, const Dataset& bd_test,
                        const PruneMask* mask) {
    if (bd_test.empty()) throw std::invalid_argument("targeted_success: empty backdoor test set");
    const auto pred = predict(spec, params, bd_test, mask);
    const SuccessCounts c = count_success(pred, bd_test, nullptr, nullptr);
    if (c.eligible == 0) {
        throw std::invalid_argument("targeted_success: every sample already carries the target label");
    }
    return static_cast<double>(c.hits) / static_cast<double>(c.eligible);
}

double untargeted_success(double a_clean, double a_backdoor) {
    if (!(a_clean > 0.0)) {
        throw std::invalid_argument("untargeted_success: clean accuracy must be positive");
    }
    return std::clamp(1.0 - a_backdoor / a_clean, 0.0, 1.0);
}

double utility(double clean_accuracy, double backdoor_success) {
    return clean_accuracy - backdoor_success;
}

double round3(double value) { return std::round(value * 1000.0) / 1000.0; }

MetricsReport evaluate(const ModelSpec& spec, const Parameters& params, const Dataset& clean_test,
                       const Dataset& bd_test, LabelMap::Kind map_kind, const PruneMask* mask) {
    if (clean_test.empty() || bd_test.empty()) {
        throw std::invalid_argument("evaluate: clean and backdoor test sets must be non-empty");
    }
    const std::size_t m = clean_test.classes;
    MetricsReport r;
    r.map_kind = map_kind;
    r.clean_correct_per_class.assign(m, 0);
    r.clean_total_per_class.assign(m, 0);
    r.hits_per_class.assign(m, 0);
    r.eligible_per_class.assign(m, 0);

    const auto clean_pred = predict(spec, params, clean_test, mask);
    std::size_t clean_hits = 0;
    for (std::size_t i = 0; i < clean_pred.size(); ++i) {
        const auto truth = static_cast<std::size_t>(clean_test.labels[i]);
        ++r.clean_total_per_class[truth];
        if (clean_pred[i] == clean_test.labels[i]) {
            ++clean_hits;
            ++r.clean_correct_per_class[truth];
        }
    }
    r.clean_accuracy = static_cast<double>(clean_hits) / static_cast<double>(clean_test.size());

    const auto bd_pred = predict(spec, params, bd_test, mask);
    std::size_t bd_correct = 0;
    for (std::size_t i = 0; i < bd_pred.size(); ++i) bd_correct += bd_pred[i] == bd_test.original_labels[i];
    r.backdoor_accuracy = static_cast<double>(bd_correct) / static_cast<double>(bd_test.size());

    const SuccessCounts c = count_success(bd_pred, bd_test, &r.hits_per_class, &r.eligible_per_class);
    r.targeted_success = c.eligible ? static_cast<double>(c.hits) / static_cast<double>(c.eligible) : 0.0;
    r.untargeted_success =
        r.clean_accuracy > 0.0 ? untargeted_success(r.clean_accuracy, r.backdoor_accuracy) : 0.0;
    return r;
}

}  // namespace fineprune
