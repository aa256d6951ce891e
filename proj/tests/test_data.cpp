#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "fineprune/data.hpp"
#include "fineprune/metrics.hpp"
#include "fineprune/network.hpp"
#include "fineprune/rng.hpp"

using namespace fineprune;
namespace fs = std::filesystem;

namespace {

void put_be32(std::string& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct Fixture {
    fs::path dir;
    fs::path images;
    fs::path labels;

    Fixture() : dir(fs::temp_directory_path() / "fineprune_idx_test") {
        fs::create_directories(dir);
        images = dir / "images.idx";
        labels = dir / "labels.idx";
        // Two 2x3 images: first all 0, second 0,255,128,255,0,1.
        std::string img;
        put_be32(img, 0x803);
        put_be32(img, 2);
        put_be32(img, 2);
        put_be32(img, 3);
        for (int i = 0; i < 6; ++i) img.push_back(0);
        for (int v : {0, 255, 128, 255, 0, 1}) img.push_back(static_cast<char>(v));
        std::string lab;
        put_be32(lab, 0x801);
        put_be32(lab, 2);
        lab.push_back(7);
        lab.push_back(2);
        write_file(images, img);
        write_file(labels, lab);
    }
    ~Fixture() { fs::remove_all(dir); }
};

Dataset small_random(std::size_t n, std::uint64_t seed) {
    Dataset d;
    d.height = 6;
    d.width = 6;
    Rng rng(seed);
    std::vector<double> img(36);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : img) v = rng.uniform();
        const int z = static_cast<int>(i % 10);
        d.push_back(img, z, z, false);
    }
    return d;
}

}  // namespace

TEST_CASE("load_idx parses a hand-built fixture bit-exactly") {
    Fixture fx;
    const Dataset d = load_idx(fx.images, fx.labels);
    REQUIRE(d.size() == 2);
    CHECK(d.height == 2);
    CHECK(d.width == 3);
    CHECK(d.labels == std::vector<int>{7, 2});
    for (double v : d.image(0)) CHECK(v == 0.0);
    const std::vector<double> second(d.image(1).begin(), d.image(1).end());
    CHECK(second == std::vector<double>{0.0, 1.0, 128.0 / 255.0, 1.0, 0.0, 1.0 / 255.0});
}

TEST_CASE("load_idx rejects malformed inputs") {
    Fixture fx;
    SUBCASE("images passed as labels") { CHECK_THROWS(load_idx(fx.images, fx.images)); }
    SUBCASE("count mismatch") {
        std::string lab;
        put_be32(lab, 0x801);
        put_be32(lab, 3);
        lab.append("\x01\x02\x03", 3);
        write_file(fx.labels, lab);
        CHECK_THROWS(load_idx(fx.images, fx.labels));
    }
    SUBCASE("truncated image payload") {
        std::ifstream in(fx.images, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        bytes.pop_back();
        write_file(fx.images, bytes);
        CHECK_THROWS(load_idx(fx.images, fx.labels));
    }
    SUBCASE("label outside class range") {
        CHECK_THROWS(load_idx(fx.images, fx.labels, 5));
    }
    SUBCASE("missing file") { CHECK_THROWS(load_idx(fx.dir / "nope", fx.labels)); }
}

TEST_CASE("save_idx round-trips byte-valued data") {
    Fixture fx;
    const Dataset d = load_idx(fx.images, fx.labels);
    const fs::path i2 = fx.dir / "i2", l2 = fx.dir / "l2";
    save_idx(d, i2, l2);
    const Dataset back = load_idx(i2, l2);
    CHECK(back.pixels == d.pixels);
    CHECK(back.labels == d.labels);
    CHECK(fs::file_size(i2) == fs::file_size(fx.images));
}

TEST_CASE("synth_digits with zero noise repeats the class template") {
    const Dataset d = synth_digits(10, 4, 0.0, 1);
    CHECK(d.size() == 40);
    CHECK(d.height == kSynthSide);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::vector<double> img(d.image(i).begin(), d.image(i).end());
        CHECK(img == digit_template(d.labels[i]));
    }
}

TEST_CASE("synth_digits is seed-deterministic and stays in range") {
    const Dataset a = synth_digits(10, 20, 0.3, 42);
    CHECK(a == synth_digits(10, 20, 0.3, 42));
    CHECK_FALSE(a == synth_digits(10, 20, 0.3, 43));
    for (double v : a.pixels) CHECK((v >= 0.0 && v <= 1.0));
    CHECK_NOTHROW(a.validate());
    CHECK_THROWS(synth_digits(11, 1, 0.0, 0));
}

TEST_CASE("digit templates are pairwise distinct and leave the corner blank") {
    for (int a = 0; a < 10; ++a) {
        const auto ta = digit_template(a);
        for (std::size_t r = 13; r < 16; ++r)
            for (std::size_t c = 13; c < 16; ++c) CHECK(ta[r * kSynthSide + c] == 0.0);
        for (int b = a + 1; b < 10; ++b) CHECK(ta != digit_template(b));
    }
}

TEST_CASE("a linear classifier separates low-noise synthetic digits") {
    const Dataset train_set = synth_digits(10, 60, 0.1, 7);
    const Dataset test_set = synth_digits(10, 30, 0.1, 8);
    const ModelSpec spec = ModelSpec::make({1, kSynthSide, kSynthSide},
                                           {FlattenLayer{}, OutputLayer{kSynthSide * kSynthSide, 10}});
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.1;
    const Parameters p = train(spec, init_params(spec, 0), train_set, cfg);
    CHECK(accuracy(spec, p, test_set) >= 0.99);
}

TEST_CASE("apply_trigger writes exactly the patch") {
    std::vector<double> img(25, 0.0);
    TriggerSpec t;
    t.row = 0;
    t.col = 0;
    apply_trigger(img, 5, t);
    CHECK(std::count(img.begin(), img.end(), 1.0) == 9);
    const auto once = img;
    apply_trigger(img, 5, t);
    CHECK(img == once);
}

TEST_CASE("apply_trigger leaves pixels outside the patch untouched") {
    Rng rng(2);
    std::vector<double> img(64);
    for (double& v : img) v = rng.uniform();
    const auto before = img;
    const TriggerSpec t = TriggerSpec::bottom_right(8, 8, 3, 1.0, LabelMap::shift());
    apply_trigger(img, 8, t);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) {
            const bool inside = r >= 5 && c >= 5;
            if (inside) CHECK(img[r * 8 + c] == 1.0);
            else CHECK(img[r * 8 + c] == before[r * 8 + c]);
        }
}

TEST_CASE("trigger validation") {
    CHECK_THROWS(TriggerSpec::bottom_right(8, 8, 9, 1.0, LabelMap::shift()));
    TriggerSpec t = TriggerSpec::bottom_right(8, 8, 3, 1.0, LabelMap::targeted(3));
    CHECK_NOTHROW(t.validate(8, 8, 10));
    CHECK_THROWS(t.validate(8, 8, 3));
    t.value = 1.5;
    CHECK_THROWS(t.validate(8, 8, 10));
    t.value = 1.0;
    t.col = 6;
    CHECK_THROWS(t.validate(8, 8, 10));
}

TEST_CASE("label maps never map a class to itself") {
    Rng rng(1);
    for (int z = 0; z < 10; ++z) {
        CHECK(map_label(LabelMap::shift(), z, 10, rng) == (z + 1) % 10);
        const int u = map_label(LabelMap::untargeted(9), z, 10, rng);
        CHECK(u != z);
        CHECK((u >= 0 && u < 10));
        if (z != 3) CHECK(map_label(LabelMap::targeted(3), z, 10, rng) == 3);
    }
    CHECK_THROWS(map_label(LabelMap::targeted(3), 3, 10, rng));
}

TEST_CASE("untargeted map is uniform over the wrong classes") {
    Rng rng(77);
    std::array<int, 10> hist{};
    const int trials = 90000;
    for (int i = 0; i < trials; ++i) ++hist[static_cast<std::size_t>(map_label(LabelMap::untargeted(0), 4, 10, rng))];
    CHECK(hist[4] == 0);
    for (int c = 0; c < 10; ++c) {
        if (c == 4) continue;
        // Expected 10000, binomial sd ~94.
        CHECK(std::abs(hist[static_cast<std::size_t>(c)] - 10000) < 500);
    }
}

TEST_CASE("poison with p = 0 is the identity") {
    const Dataset d = small_random(50, 1);
    const TriggerSpec t = TriggerSpec::bottom_right(6, 6, 3, 1.0, LabelMap::shift());
    CHECK(poison(d, t, 0.0, PoisonMode::Append, 5) == d);
    CHECK(poison(d, t, 0.0, PoisonMode::Replace, 5) == d);
}

TEST_CASE("poison with p = 1 append doubles the set") {
    const Dataset d = small_random(40, 2);
    const TriggerSpec t = TriggerSpec::bottom_right(6, 6, 3, 1.0, LabelMap::shift());
    const Dataset p = poison(d, t, 1.0, PoisonMode::Append, 5);
    REQUIRE(p.size() == 80);
    for (std::size_t i = 0; i < 40; ++i) {
        CHECK(p.labels[i] == d.labels[i]);
        CHECK_FALSE(p.triggered[i]);
    }
    for (std::size_t i = 40; i < 80; ++i) {
        CHECK(p.triggered[i]);
        CHECK(p.labels[i] != p.original_labels[i]);
        CHECK(p.labels[i] == (p.original_labels[i] + 1) % 10);
        const auto img = p.image(i);
        CHECK(img[35] == 1.0);
    }
}

TEST_CASE("poison p = 0.1 on 3000 samples adds 300 shifted labels") {
    const Dataset d = synth_digits(10, 300, 0.2, 3);
    const TriggerSpec t = TriggerSpec::bottom_right(kSynthSide, kSynthSide, 3, 1.0, LabelMap::shift());
    const Dataset p = poison(d, t, 0.1, PoisonMode::Append, 9);
    REQUIRE(p.size() == 3300);
    std::map<int, int> added, shifted_orig;
    for (std::size_t i = 3000; i < 3300; ++i) {
        ++added[p.labels[i]];
        ++shifted_orig[(p.original_labels[i] + 1) % 10];
    }
    CHECK(added == shifted_orig);
    CHECK(std::equal(d.pixels.begin(), d.pixels.end(), p.pixels.begin()));
}

TEST_CASE("poison replace rewrites in place and targeted skips the target class") {
    const Dataset d = small_random(100, 4);
    const TriggerSpec t = TriggerSpec::bottom_right(6, 6, 2, 1.0, LabelMap::targeted(0));
    const Dataset p = poison(d, t, 0.25, PoisonMode::Replace, 1);
    REQUIRE(p.size() == 100);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        if (!p.triggered[i]) {
            CHECK(p.labels[i] == d.labels[i]);
            continue;
        }
        ++hits;
        CHECK(d.labels[i] != 0);
        CHECK(p.labels[i] == 0);
        CHECK(p.original_labels[i] == d.labels[i]);
    }
    CHECK(hits == 25);
    CHECK(poison(d, t, 0.25, PoisonMode::Replace, 1) == p);
}

TEST_CASE("backdoored_testset") {
    const TriggerSpec shift = TriggerSpec::bottom_right(6, 6, 3, 1.0, LabelMap::shift());
    CHECK(backdoored_testset(Dataset{}, shift).empty());

    Dataset d;
    d.height = d.width = 6;
    const std::vector<double> img(36, 0.2);
    for (int z : {0, 1, 9}) d.push_back(img, z, z, false);
    const Dataset s = backdoored_testset(d, shift);
    CHECK(s.labels == std::vector<int>{1, 2, 0});
    CHECK(s.original_labels == std::vector<int>{0, 1, 9});
    for (std::size_t i = 0; i < 3; ++i) CHECK(s.triggered[i]);

    const Dataset t = backdoored_testset(d, TriggerSpec::bottom_right(6, 6, 3, 1.0, LabelMap::targeted(3)));
    CHECK(t.labels == std::vector<int>{3, 3, 3});
}

TEST_CASE("split_holdout partitions the data") {
    const Dataset d = synth_digits(10, 10, 0.1, 1);
    const Split s = split_holdout(d, 0.1, 5);
    CHECK(s.valid.size() == 10);
    CHECK(s.train.size() == 90);
    CHECK(s.valid.role == DatasetRole::Valid);
    std::vector<double> all = s.train.pixels;
    all.insert(all.end(), s.valid.pixels.begin(), s.valid.pixels.end());
    std::vector<double> src = d.pixels;
    std::sort(all.begin(), all.end());
    std::sort(src.begin(), src.end());
    CHECK(all == src);
    CHECK(split_holdout(d, 0.1, 5).valid == s.valid);
}
