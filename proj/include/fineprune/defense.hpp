#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fineprune/data.hpp"
#include "fineprune/metrics.hpp"
#include "fineprune/network.hpp"

namespace fineprune {

/// Mean post-activation output of every channel of one layer over a clean
/// dataset, averaged across spatial positions and samples.
struct ActivationProfile {
    std::size_t layer = 0;
    std::vector<double> mean;
};

ActivationProfile profile(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                          std::size_t layer, const PruneMask* mask = nullptr);

/// Channel indices sorted by increasing mean activation, ties to the lower
/// index.
std::vector<std::size_t> pruning_order(const ActivationProfile& profile);

/// Held-out sets the defense reports on. The defender never sees poisoned
/// training data; these are scored, not trained on.
struct EvalSets {
    const Dataset& clean_test;
    const Dataset& backdoor_test;
    LabelMap::Kind map_kind;
};

struct SweepPoint {
    std::size_t pruned = 0;
    double fraction_pruned = 0.0;
    double valid_accuracy = 0.0;
    double clean_accuracy = 0.0;
    double backdoor_success = 0.0;
    friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

struct DefenseOutcome {
    Parameters params;
    std::optional<PruneMask> mask;
    MetricsReport before;
    MetricsReport after;
    std::vector<SweepPoint> sweep;
};

/// Prunes the layer one channel at a time in `pruning_order`, recording a
/// sweep point per step (point 0 is the unpruned model). Stops at the first
/// step whose validation accuracy falls below baseline - drop_threshold, or
/// when one channel is left, and returns the last mask that stayed at or
/// above that floor.
DefenseOutcome pruning_defense(const ModelSpec& spec, const Parameters& params,
                               const Dataset& valid, const EvalSets& eval, std::size_t layer,
                               double drop_threshold);

struct FineTuneOptions {
    double lr_scale = 0.1;
    std::size_t patience = 3;
    double min_improvement = 0.001;  // validation accuracy, absolute
};

/// SGD from `params` on the defender's clean data at lr_scale x cfg's rate
/// for up to cfg.epochs. Stops once validation accuracy has improved by less
/// than min_improvement over the last `patience` epochs. cfg.mask, when set,
/// keeps pruned channels dead and frozen.
Parameters fine_tune(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                     const TrainConfig& cfg, const FineTuneOptions& opts = {});

/// pruning_defense followed by fine_tune of the pruned network.
DefenseOutcome fine_prune(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                          const EvalSets& eval, std::size_t layer, double drop_threshold,
                          const TrainConfig& cfg, const FineTuneOptions& opts = {});

/// Adds zero-mean Gaussian noise with std = noise_scale x (std of that
/// tensor) to every parameter tensor, drawing from Rng(noise_seed), then
/// runs fine_tune.
Parameters perturb_then_tune(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                             double noise_scale, std::uint64_t noise_seed, const TrainConfig& cfg,
                             const FineTuneOptions& opts = {});

}  // namespace fineprune
