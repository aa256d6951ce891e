#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "fineprune/data.hpp"
#include "fineprune/defense.hpp"
#include "fineprune/metrics.hpp"
#include "fineprune/rng.hpp"
#include "test_util.hpp"

using namespace fineprune;
using namespace fineprune::testing;

namespace {

struct Trained {
    ModelSpec spec = ModelSpec::two_conv_two_fc(kSynthSide, kSynthSide, 10, 4, 8, 16);
    Dataset train_set;
    Dataset valid;
    Dataset test;
    Dataset bd_test;
    TriggerSpec trig = TriggerSpec::bottom_right(kSynthSide, kSynthSide, 3, 1.0, LabelMap::shift());
    Parameters params;
    TrainConfig cfg;

    Trained() {
        Split s = split_holdout(synth_digits(10, 40, 0.2, 1), 0.25, 2);
        train_set = poison(s.train, trig, 0.2, PoisonMode::Append, 3);
        valid = s.valid;
        test = synth_digits(10, 10, 0.2, 4);
        bd_test = backdoored_testset(test, trig);
        cfg.epochs = 6;
        params = train(spec, init_params(spec, 5), train_set, cfg);
    }
};

const Trained& trained() {
    static const Trained t;
    return t;
}

}  // namespace

TEST_CASE("profile averages post-activation output") {
    const ModelSpec spec = ModelSpec::make({1, 1, 1}, {ConvLayer{1, 1, 1, 1}, FlattenLayer{}, OutputLayer{1, 2}});
    Parameters p = init_params(spec, 0);
    p.layers[0].weight[0] = 1.0;
    Dataset d;
    d.height = d.width = 1;
    d.push_back(std::vector<double>{0.2}, 0, 0, false);
    d.push_back(std::vector<double>{0.4}, 1, 1, false);
    const ActivationProfile prof = profile(spec, p, d, 0);
    REQUIRE(prof.mean.size() == 1);
    CHECK(std::abs(prof.mean[0] - 0.3) <= 1e-15);
    CHECK_THROWS(profile(spec, p, Dataset{}, 0));
}

TEST_CASE("profile matches a recomputation from raw traces") {
    const Trained& t = trained();
    const std::size_t layer = *t.spec.last_conv_layer();
    const ActivationProfile prof = profile(t.spec, t.params, t.valid, layer);

    std::vector<std::size_t> all(t.valid.size());
    std::iota(all.begin(), all.end(), 0);
    const ForwardResult r = forward(t.spec, t.params, t.valid.batch(all), nullptr, {{layer}, {}});
    const Tensor& act = r.trace.at(layer);
    const std::size_t c_count = act.dim(1), plane = act.dim(2) * act.dim(3);
    for (std::size_t c = 0; c < c_count; ++c) {
        double s = 0.0;
        for (std::size_t b = 0; b < act.dim(0); ++b)
            for (std::size_t i = 0; i < plane; ++i) s += act[(b * c_count + c) * plane + i];
        const double mean = s / static_cast<double>(act.dim(0) * plane);
        CHECK(std::abs(prof.mean[c] - mean) <= 1e-12);
        CHECK(prof.mean[c] >= 0.0);
    }

    PruneMask m = PruneMask::all_live(t.spec, layer);
    m.live[2] = false;
    CHECK(profile(t.spec, t.params, t.valid, layer, &m).mean[2] == 0.0);
}

TEST_CASE("pruning order sorts ascending with index tie-break") {
    CHECK(pruning_order({0, {0.0, 0.5, 0.2}}) == std::vector<std::size_t>{0, 2, 1});
    CHECK(pruning_order({0, {0.3, 0.1, 0.3, 0.1}}) == std::vector<std::size_t>{1, 3, 0, 2});
}

TEST_CASE("pruning defense sweep contract") {
    const Trained& t = trained();
    const std::size_t layer = *t.spec.last_conv_layer();
    const EvalSets sets{t.test, t.bd_test, LabelMap::Kind::Shift};
    CHECK_THROWS(pruning_defense(t.spec, t.params, t.valid, sets, layer, 0.0));
    CHECK_THROWS(pruning_defense(t.spec, t.params, t.valid, sets, layer, 1.0));

    const DefenseOutcome o = pruning_defense(t.spec, t.params, t.valid, sets, layer, 0.04);
    REQUIRE(o.mask.has_value());
    REQUIRE(!o.sweep.empty());
    CHECK(o.sweep[0].pruned == 0);
    CHECK(o.params == t.params);
    const double floor = o.sweep[0].valid_accuracy - 0.04;
    const std::size_t dead = o.mask->dead_count();
    // Every accepted step stays at or above the floor; the step after the
    // accepted mask (if any) fell below it.
    for (std::size_t k = 0; k <= dead; ++k) CHECK(o.sweep[k].valid_accuracy >= floor);
    if (o.sweep.size() > dead + 1) CHECK(o.sweep[dead + 1].valid_accuracy < floor);
    CHECK(o.mask->live_count() >= 1);

    // Dead channels are a prefix of the pruning order.
    const auto order = pruning_order(profile(t.spec, t.params, t.valid, layer));
    for (std::size_t k = 0; k < order.size(); ++k) CHECK(o.mask->is_live(order[k]) == (k >= dead));
    CHECK(o.after == evaluate(t.spec, t.params, t.test, t.bd_test, LabelMap::Kind::Shift, &*o.mask));
    for (const SweepPoint& p : o.sweep) CHECK(p.fraction_pruned == static_cast<double>(p.pruned) / 8.0);
}

TEST_CASE("fine_tune with zero epochs is the identity") {
    const Trained& t = trained();
    TrainConfig cfg = t.cfg;
    cfg.epochs = 0;
    CHECK(fine_tune(t.spec, t.params, t.valid, cfg) == t.params);
    CHECK_THROWS(fine_tune(t.spec, t.params, Dataset{}, t.cfg));
}

TEST_CASE("fine_tune barely moves clean accuracy of a trained model") {
    const Trained& t = trained();
    const Parameters tuned = fine_tune(t.spec, t.params, t.valid, t.cfg);
    CHECK_FALSE(tuned == t.params);
    const double before = accuracy(t.spec, t.params, t.test);
    const double after = accuracy(t.spec, tuned, t.test);
    CHECK(std::abs(after - before) < 0.01 + 1e-12);
}

TEST_CASE("fine_tune stops when validation accuracy plateaus") {
    const Trained& t = trained();
    TrainConfig cfg = t.cfg;
    cfg.epochs = 50;
    FineTuneOptions opts;
    opts.min_improvement = 2.0;  // unreachable: stop as soon as the window fills
    const Parameters stopped = fine_tune(t.spec, t.params, t.valid, cfg, opts);
    cfg.epochs = opts.patience;
    TrainConfig manual = cfg;
    manual.learning_rate *= opts.lr_scale;
    CHECK(stopped == train(t.spec, t.params, t.valid, manual));
}

TEST_CASE("fine_prune keeps pruned channels dead and frozen") {
    const Trained& t = trained();
    const std::size_t layer = *t.spec.last_conv_layer();
    const EvalSets sets{t.test, t.bd_test, LabelMap::Kind::Shift};
    const DefenseOutcome pruned = pruning_defense(t.spec, t.params, t.valid, sets, layer, 0.04);
    const DefenseOutcome fp = fine_prune(t.spec, t.params, t.valid, sets, layer, 0.04, t.cfg);
    REQUIRE(fp.mask.has_value());
    CHECK(*fp.mask == *pruned.mask);
    const std::size_t filter = t.params.layers[layer].weight.size() / 8;
    for (std::size_t c = 0; c < 8; ++c) {
        if (fp.mask->is_live(c)) continue;
        for (std::size_t i = 0; i < filter; ++i)
            CHECK(fp.params.layers[layer].weight[c * filter + i] == t.params.layers[layer].weight[c * filter + i]);
        CHECK(fp.params.layers[layer].bias[c] == t.params.layers[layer].bias[c]);
    }
    CHECK(fp.after == evaluate(t.spec, fp.params, t.test, t.bd_test, LabelMap::Kind::Shift, &*fp.mask));
}

TEST_CASE("perturb_then_tune") {
    const Trained& t = trained();
    TrainConfig cfg = t.cfg;
    cfg.epochs = 2;
    CHECK(perturb_then_tune(t.spec, t.params, t.valid, 0.0, 9, cfg) == fine_tune(t.spec, t.params, t.valid, cfg));
    const Parameters a = perturb_then_tune(t.spec, t.params, t.valid, 0.5, 9, cfg);
    CHECK(a == perturb_then_tune(t.spec, t.params, t.valid, 0.5, 9, cfg));
    CHECK_FALSE(a == perturb_then_tune(t.spec, t.params, t.valid, 0.5, 10, cfg));
    CHECK_THROWS(perturb_then_tune(t.spec, t.params, t.valid, -1.0, 9, cfg));
}
