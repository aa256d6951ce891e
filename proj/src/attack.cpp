#include "fineprune/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fineprune/defense.hpp"
#include "fineprune/metrics.hpp"
#include "fineprune/reports.hpp"
#include "fineprune/rng.hpp"

namespace fineprune {

std::pair<double, double> attacker_scores(const ModelSpec& spec, const Parameters& params,
                                          const Dataset& clean_train, const TriggerSpec& trig,
                                          const PruneMask* mask) {
    const Dataset triggered = backdoored_testset(clean_train, trig);
    const MetricsReport r = evaluate(spec, params, clean_train, triggered, trig.map.kind, mask);
    return {r.clean_accuracy, r.backdoor_success()};
}

Parameters train_honest(const ModelSpec& spec, const Dataset& clean_train, const TrainConfig& cfg) {
    TrainConfig honest = cfg;
    honest.mask.reset();
    return train(spec, init_params(spec, cfg.seed), clean_train, honest);
}

std::size_t default_decoy_count(std::size_t channels) {
    const auto n = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(channels)));
    return std::min(n, channels - 1);
}

AttackResult baseline_attack(const ModelSpec& spec, const Dataset& clean_train,
                             const TriggerSpec& trig, double fraction, const TrainConfig& cfg,
                             const AttackGoals& goals, std::optional<double> honest_accuracy) {
    trig.validate(clean_train.height, clean_train.width, clean_train.classes);
    AttackResult result;
    result.trigger = trig;
    result.poison_fraction = fraction;
    if (!honest_accuracy) {
        honest_accuracy = attacker_scores(spec, train_honest(spec, clean_train, cfg), clean_train, trig).first;
    }
    result.honest_accuracy = *honest_accuracy;

    const Dataset poisoned = poison(clean_train, trig, fraction, PoisonMode::Append, cfg.seed);
    for (std::size_t attempt = 0; attempt <= goals.max_retries; ++attempt) {
        TrainConfig run = cfg;
        run.mask.reset();
        run.seed = attempt == 0 ? cfg.seed : derive_seed(cfg.seed, 1000 + attempt);
        Parameters params = train(spec, init_params(spec, run.seed), poisoned, run);
        const auto [clean, bd] = attacker_scores(spec, params, clean_train, trig);
        result.log.push_back({"baseline attempt " + std::to_string(attempt), 0, clean, bd});
        if (clean >= *honest_accuracy - goals.max_clean_drop && bd >= goals.min_backdoor) {
            result.params = std::move(params);
            result.seed = run.seed;
            return result;
        }
    }
    throw AttackFailure("baseline attack missed its goals after " +
                        std::to_string(goals.max_retries + 1) + " attempts (last clean " +
                        format3(result.log.back().clean_accuracy) + ", backdoor " +
                        format3(result.log.back().backdoor_success) + ")");
}

std::pair<Parameters, PruneMask> prune_channels(const ModelSpec& spec, const Parameters& params,
                                                std::size_t layer,
                                                const std::vector<std::size_t>& channels) {
    PruneMask mask = PruneMask::all_live(spec, layer);
    for (std::size_t c : channels) {
        if (c >= mask.live.size()) {
            throw std::out_of_range("prune_channels: channel " + std::to_string(c) +
                                    " outside layer with " + std::to_string(mask.live.size()) +
                                    " channels");
        }
        mask.live[c] = false;
    }
    if (mask.live_count() == 0) {
        throw std::invalid_argument("prune_channels: cannot prune every channel of layer " +
                                    std::to_string(layer));
    }
    return {params, std::move(mask)};
}

namespace {

/// Largest bias-free response of each listed channel over `data`.
std::vector<double> max_responses(const ModelSpec& spec, const Parameters& params,
                                  const Dataset& data, std::size_t layer,
                                  const std::vector<std::size_t>& channels) {
    Parameters probe = params;
    for (std::size_t c : channels) probe.layers[layer].bias[c] = 0.0;
    const std::size_t nch = spec.channel_count(layer);
    std::vector<double> best(channels.size(), -std::numeric_limits<double>::infinity());
    constexpr std::size_t chunk = 256;
    for (std::size_t first = 0; first < data.size(); first += chunk) {
        const std::size_t n = std::min(chunk, data.size() - first);
        ForwardResult r = forward(spec, probe, data.batch_range(first, n), nullptr, {{}, {layer}});
        const Tensor& pre = r.pre_trace.at(layer);
        const std::size_t inner = pre.size() / (n * nch);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t k = 0; k < channels.size(); ++k) {
                const auto plane = pre.data().subspan((b * nch + channels[k]) * inner, inner);
                best[k] = std::max(best[k], *std::max_element(plane.begin(), plane.end()));
            }
        }
    }
    return best;
}

}  // namespace

AttackResult pruning_aware_attack(const ModelSpec& spec, const Dataset& clean_train,
                                  const TriggerSpec& trig, double fraction,
                                  std::size_t decoy_count, const TrainConfig& cfg,
                                  const AttackGoals& goals, const Parameters* honest_in) {
    trig.validate(clean_train.height, clean_train.width, clean_train.classes);
    const auto layer = spec.last_conv_layer();
    if (!layer) throw std::invalid_argument("pruning_aware_attack: model has no conv layer");
    const std::size_t channels = spec.channel_count(*layer);
    if (decoy_count >= channels) {
        throw std::invalid_argument("pruning_aware_attack: decoy_count " + std::to_string(decoy_count) +
                                    " must be below the layer's " + std::to_string(channels) +
                                    " channels");
    }

    AttackResult result;
    result.trigger = trig;
    result.poison_fraction = fraction;
    result.seed = cfg.seed;
    result.layer = layer;

    // Step 1: honest training.
    const Parameters honest = honest_in ? *honest_in : train_honest(spec, clean_train, cfg);
    honest.check_against(spec);
    const auto [honest_clean, honest_bd] = attacker_scores(spec, honest, clean_train, trig);
    result.honest_accuracy = honest_clean;
    result.log.push_back({"honest", channels, honest_clean, honest_bd});

    // Step 2: prune the most dormant channels.
    const ActivationProfile prof = profile(spec, honest, clean_train, *layer);
    const std::vector<std::size_t> order = pruning_order(prof);
    std::vector<std::size_t> pruned(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(decoy_count));
    auto [params, mask] = prune_channels(spec, honest, *layer, pruned);

    // Step 3: retrain on poisoned data; reinstate the most active pruned
    // channel whenever the goals are missed.
    const Dataset poisoned = poison(clean_train, trig, fraction, PoisonMode::Append, cfg.seed);
    std::vector<std::size_t> reinstate(pruned.rbegin(), pruned.rend());
    std::size_t next = 0;
    for (;;) {
        TrainConfig run = cfg;
        run.mask = mask;
        params = train(spec, params, poisoned, run);
        const auto [clean, bd] = attacker_scores(spec, params, clean_train, trig, &mask);
        result.log.push_back({"pruned retrain", mask.live_count(), clean, bd});
        if (clean >= honest_clean - goals.max_clean_drop && bd >= goals.min_backdoor) break;
        if (next == reinstate.size()) {
            throw AttackFailure("pruning-aware attack: goals unmet with every channel reinstated");
        }
        mask.live[reinstate[next++]] = true;
    }

    // Step 4: de-prune. Decoys were frozen during step 3, so their filters
    // still hold the honest weights; copy them anyway and suppress the bias.
    for (std::size_t c = 0; c < channels; ++c) {
        if (!mask.live[c]) result.decoys.push_back(c);
    }
    LayerParams& target = params.layers[*layer];
    const LayerParams& honest_layer = honest.layers[*layer];
    const std::size_t filter = target.weight.size() / channels;
    for (std::size_t c : result.decoys) {
        std::copy_n(honest_layer.weight.data().begin() + static_cast<std::ptrdiff_t>(c * filter), filter,
                    target.weight.data().begin() + static_cast<std::ptrdiff_t>(c * filter));
    }
    const std::vector<double> peaks = max_responses(spec, params, clean_train, *layer, result.decoys);
    for (std::size_t k = 0; k < result.decoys.size(); ++k) {
        target.bias[result.decoys[k]] = -(peaks[k] + kDecoyMargin);
    }

    const auto [clean, bd] = attacker_scores(spec, params, clean_train, trig);
    result.log.push_back({"de-pruned", channels, clean, bd});
    result.params = std::move(params);
    return result;
}

}  // namespace fineprune
