#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fineprune/data.hpp"
#include "fineprune/network.hpp"

namespace fineprune {

/// What the attacker insists on before delivering a model. Both rates are
/// measured on the attacker's own clean training data and its triggered copy.
struct AttackGoals {
    double max_clean_drop = 0.01;  // relative to an honestly trained model
    double min_backdoor = 0.95;
    std::size_t max_retries = 3;   // baseline attack: extra seeds to try
};

struct AttackStep {
    std::string step;
    std::size_t live_channels = 0;
    double clean_accuracy = 0.0;
    double backdoor_success = 0.0;
};

struct AttackResult {
    Parameters params;
    TriggerSpec trigger;
    double poison_fraction = 0.0;
    std::uint64_t seed = 0;          // training seed of the delivered model
    double honest_accuracy = 0.0;    // attacker-side clean reference
    std::optional<std::size_t> layer;    // pruning-aware only
    std::vector<std::size_t> decoys;     // pruning-aware only
    std::vector<AttackStep> log;
};

class AttackFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Clean accuracy and backdoor success of a model on the attacker's data.
std::pair<double, double> attacker_scores(const ModelSpec& spec, const Parameters& params,
                                          const Dataset& clean_train, const TriggerSpec& trig,
                                          const PruneMask* mask = nullptr);

/// Trains from init_params(cfg.seed) on poison(clean_train, trig, fraction,
/// Append, cfg.seed). When `honest_accuracy` is absent an honest model is
/// trained with the same config to set the clean-accuracy bar. Retries with
/// derived seeds up to goals.max_retries times; throws AttackFailure after.
AttackResult baseline_attack(const ModelSpec& spec, const Dataset& clean_train,
                             const TriggerSpec& trig, double fraction, const TrainConfig& cfg,
                             const AttackGoals& goals = {},
                             std::optional<double> honest_accuracy = std::nullopt);

/// Marks `channels` of `layer` dead. Parameters are returned unchanged; the
/// mask alone removes the channels from the forward pass.
std::pair<Parameters, PruneMask> prune_channels(const ModelSpec& spec, const Parameters& params,
                                                std::size_t layer,
                                                const std::vector<std::size_t>& channels);

/// Decoy bias margin below the largest clean-training response.
constexpr double kDecoyMargin = 1.0;

/// Four-step attack against the last conv layer:
///  1. honest training on clean_train;
///  2. prune the `decoy_count` channels with the lowest mean clean activation;
///  3. retrain the pruned network on the poisoned set, reinstating pruned
///     channels one at a time (highest honest activation first) until the
///     goals hold;
///  4. un-prune: decoys keep their honest weights and get bias
///     -(m_k + kDecoyMargin), m_k being the channel's largest bias-free
///     response over the clean training set under the delivered network.
/// The returned Parameters carry no mask. `honest`, when given, stands in
/// for the step-1 model.
AttackResult pruning_aware_attack(const ModelSpec& spec, const Dataset& clean_train,
                                  const TriggerSpec& trig, double fraction,
                                  std::size_t decoy_count, const TrainConfig& cfg,
                                  const AttackGoals& goals = {},
                                  const Parameters* honest = nullptr);

/// Trained honest model used by step 1; exposed so callers can share it.
Parameters train_honest(const ModelSpec& spec, const Dataset& clean_train, const TrainConfig& cfg);

/// 80% of the channels, the default decoy budget.
std::size_t default_decoy_count(std::size_t channels);

}  // namespace fineprune
