#include "fineprune/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fineprune/rng.hpp"

namespace fineprune {

ActivationProfile profile(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                          std::size_t layer, const PruneMask* mask) {
    if (valid.empty()) throw std::invalid_argument("profile: validation set is empty");
    const std::size_t channels = spec.channel_count(layer);
    ActivationProfile prof{layer, std::vector<double>(channels, 0.0)};
    constexpr std::size_t chunk = 256;
    for (std::size_t first = 0; first < valid.size(); first += chunk) {
        const std::size_t n = std::min(chunk, valid.size() - first);
        ForwardResult r = forward(spec, params, valid.batch_range(first, n), mask, {{layer}, {}});
        const Tensor& act = r.trace.at(layer);
        const std::size_t inner = act.size() / (n * channels);
        for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t c = 0; c < channels; ++c) {
                const auto plane = act.data().subspan((b * channels + c) * inner, inner);
                prof.mean[c] += std::accumulate(plane.begin(), plane.end(), 0.0);
            }
        }
    }
    const std::size_t inner = element_count(spec.output_shape(layer)) / channels;
    const double denom = static_cast<double>(valid.size() * inner);
    for (double& m : prof.mean) m /= denom;
    return prof;
}

std::vector<std::size_t> pruning_order(const ActivationProfile& profile) {
    std::vector<std::size_t> order(profile.mean.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return profile.mean[a] < profile.mean[b];
    });
    return order;
}

namespace {

SweepPoint sweep_point(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                       const EvalSets& eval, const PruneMask& mask) {
    SweepPoint p;
    p.pruned = mask.dead_count();
    p.fraction_pruned = static_cast<double>(p.pruned) / static_cast<double>(mask.live.size());
    p.valid_accuracy = accuracy(spec, params, valid, &mask);
    const MetricsReport m = evaluate(spec, params, eval.clean_test, eval.backdoor_test, eval.map_kind, &mask);
    p.clean_accuracy = m.clean_accuracy;
    p.backdoor_success = m.backdoor_success();
    return p;
}

}  // namespace

DefenseOutcome pruning_defense(const ModelSpec& spec, const Parameters& params,
                               const Dataset& valid, const EvalSets& eval, std::size_t layer,
                               double drop_threshold) {
    if (!(drop_threshold > 0.0 && drop_threshold < 1.0)) {
        throw std::invalid_argument("pruning_defense: drop_threshold must lie in (0,1)");
    }
    DefenseOutcome out;
    out.params = params;
    out.before = evaluate(spec, params, eval.clean_test, eval.backdoor_test, eval.map_kind);

    const std::vector<std::size_t> order = pruning_order(profile(spec, params, valid, layer));
    PruneMask mask = PruneMask::all_live(spec, layer);
    PruneMask accepted = mask;
    out.sweep.push_back(sweep_point(spec, params, valid, eval, mask));
    const double floor = out.sweep.front().valid_accuracy - drop_threshold;

    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        mask.live[order[k]] = false;
        out.sweep.push_back(sweep_point(spec, params, valid, eval, mask));
        if (out.sweep.back().valid_accuracy < floor) break;
        accepted = mask;
    }
    out.after = evaluate(spec, params, eval.clean_test, eval.backdoor_test, eval.map_kind, &accepted);
    out.mask = std::move(accepted);
    return out;
}

Parameters fine_tune(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                     const TrainConfig& cfg, const FineTuneOptions& opts) {
    if (valid.empty()) throw std::invalid_argument("fine_tune: validation set is empty");
    if (cfg.epochs == 0) return params;
    TrainConfig tune = cfg;
    tune.learning_rate = cfg.learning_rate * opts.lr_scale;
    const PruneMask* mask = cfg.mask ? &*cfg.mask : nullptr;

    std::vector<double> history{accuracy(spec, params, valid, mask)};
    auto plateaued = [&](std::size_t epoch, const Parameters& current, double) {
        history.push_back(accuracy(spec, current, valid, mask));
        (void)epoch;
        if (history.size() <= opts.patience) return true;
        const double gain = history.back() - history[history.size() - 1 - opts.patience];
        return gain >= opts.min_improvement;
    };
    return train(spec, params, valid, tune, plateaued);
}

DefenseOutcome fine_prune(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                          const EvalSets& eval, std::size_t layer, double drop_threshold,
                          const TrainConfig& cfg, const FineTuneOptions& opts) {
    DefenseOutcome out = pruning_defense(spec, params, valid, eval, layer, drop_threshold);
    TrainConfig tune = cfg;
    tune.mask = out.mask;
    out.params = fine_tune(spec, params, valid, tune, opts);
    out.after = evaluate(spec, out.params, eval.clean_test, eval.backdoor_test, eval.map_kind,
                         out.mask ? &*out.mask : nullptr);
    return out;
}

Parameters perturb_then_tune(const ModelSpec& spec, const Parameters& params, const Dataset& valid,
                             double noise_scale, std::uint64_t noise_seed, const TrainConfig& cfg,
                             const FineTuneOptions& opts) {
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("perturb_then_tune: noise_scale must be >= 0");
    Parameters noisy = params;
    if (noise_scale > 0.0) {
        Rng rng(noise_seed);
        for (LayerParams& lp : noisy.layers) {
            for (Tensor* t : {&lp.weight, &lp.bias}) {
                if (t->empty()) continue;
                const auto d = t->data();
                const double n = static_cast<double>(d.size());
                const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
                double var = 0.0;
                for (double v : d) var += (v - mean) * (v - mean);
                const double sd = noise_scale * std::sqrt(var / n);
                for (double& v : d) v += sd * rng.normal();
            }
        }
    }
    return fine_tune(spec, noisy, valid, cfg, opts);
}

}  // namespace fineprune
