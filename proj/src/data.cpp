#include "fineprune/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fineprune/rng.hpp"

namespace fineprune {

std::string to_string(DatasetRole role) {
    switch (role) {
        case DatasetRole::Train: return "train";
        case DatasetRole::Valid: return "valid";
        case DatasetRole::Test: return "test";
    }
    return "unknown";
}

std::span<const double> Dataset::image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
}

std::span<double> Dataset::image(std::size_t i) {
    return {pixels.data() + i * image_size(), image_size()};
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
    if (indices.empty()) throw ShapeError("Dataset::batch: empty index set");
    std::vector<double> out(indices.size() * image_size());
    auto dst = out.begin();
    for (std::size_t idx : indices) {
        if (idx >= size()) throw std::out_of_range("Dataset::batch: sample index out of range");
        auto src = image(idx);
        dst = std::copy(src.begin(), src.end(), dst);
    }
    return Tensor({indices.size(), 1, height, width}, std::move(out));
}

Tensor Dataset::batch_range(std::size_t first, std::size_t count) const {
    if (count == 0 || first + count > size()) {
        throw std::out_of_range("Dataset::batch_range: range outside dataset");
    }
    const auto begin = pixels.begin() + static_cast<std::ptrdiff_t>(first * image_size());
    std::vector<double> out(begin, begin + static_cast<std::ptrdiff_t>(count * image_size()));
    return Tensor({count, 1, height, width}, std::move(out));
}

void Dataset::push_back(std::span<const double> img, int label, int original_label, bool trig) {
    if (img.size() != image_size()) {
        throw ShapeError("Dataset::push_back: image has " + std::to_string(img.size()) +
                         " pixels, expected " + std::to_string(image_size()));
    }
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(label);
    original_labels.push_back(original_label);
    triggered.push_back(trig);
}

void Dataset::validate() const {
    if (pixels.size() != size() * image_size() || original_labels.size() != size() ||
        triggered.size() != size()) {
        throw std::invalid_argument("dataset: images and labels have different lengths");
    }
    if (classes == 0) throw std::invalid_argument("dataset: class count must be positive");
    for (std::size_t i = 0; i < size(); ++i) {
        for (int label : {labels[i], original_labels[i]}) {
            if (label < 0 || static_cast<std::size_t>(label) >= classes) {
                throw std::invalid_argument("dataset: sample " + std::to_string(i) + " label " +
                                            std::to_string(label) + " outside [0," +
                                            std::to_string(classes) + ")");
            }
        }
    }
    for (double p : pixels) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw std::invalid_argument("dataset: pixel value outside [0,1]");
        }
    }
}

std::string to_string(LabelMap::Kind kind) {
    switch (kind) {
        case LabelMap::Kind::Targeted: return "targeted";
        case LabelMap::Kind::Shift: return "shift";
        case LabelMap::Kind::Untargeted: return "untargeted";
    }
    return "unknown";
}

LabelMap::Kind label_map_kind_from_string(const std::string& name) {
    if (name == "targeted") return LabelMap::Kind::Targeted;
    if (name == "shift") return LabelMap::Kind::Shift;
    if (name == "untargeted") return LabelMap::Kind::Untargeted;
    throw std::invalid_argument("unknown label map '" + name + "'");
}

TriggerSpec TriggerSpec::bottom_right(std::size_t image_h, std::size_t image_w, std::size_t size,
                                      double value, LabelMap map) {
    if (size == 0 || size > image_h || size > image_w) {
        throw std::invalid_argument("trigger size does not fit the image");
    }
    return {image_h - size, image_w - size, size, size, value, map};
}

void TriggerSpec::validate(std::size_t image_h, std::size_t image_w, std::size_t classes) const {
    if (height == 0 || width == 0 || row + height > image_h || col + width > image_w) {
        throw std::invalid_argument("trigger patch at (" + std::to_string(row) + "," +
                                    std::to_string(col) + ") size " + std::to_string(height) +
                                    "x" + std::to_string(width) + " does not fit a " +
                                    std::to_string(image_h) + "x" + std::to_string(image_w) +
                                    " image");
    }
    if (!(value >= 0.0 && value <= 1.0)) {
        throw std::invalid_argument("trigger value must lie in [0,1]");
    }
    if (classes < 2) throw std::invalid_argument("label maps need at least two classes");
    if (map.kind == LabelMap::Kind::Targeted &&
        (map.target < 0 || static_cast<std::size_t>(map.target) >= classes)) {
        throw std::invalid_argument("trigger target class " + std::to_string(map.target) +
                                    " outside [0," + std::to_string(classes) + ")");
    }
}

int map_label(const LabelMap& map, int label, std::size_t classes, Rng& rng) {
    const int m = static_cast<int>(classes);
    switch (map.kind) {
        case LabelMap::Kind::Targeted:
            if (label == map.target) {
                throw std::invalid_argument("targeted map cannot relabel its own target class");
            }
            return map.target;
        case LabelMap::Kind::Shift:
            return (label + 1) % m;
        case LabelMap::Kind::Untargeted: {
            // uniform over the m-1 wrong classes
            const int r = static_cast<int>(rng.below(classes - 1));
            return r >= label ? r + 1 : r;
        }
    }
    throw std::logic_error("unreachable label map kind");
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw std::runtime_error(what + ": truncated header");
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b.data(), 4);
}

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes) {
    std::ifstream img(images, std::ios::binary);
    if (!img) throw std::runtime_error("cannot open IDX images file " + images.string());
    std::ifstream lab(labels, std::ios::binary);
    if (!lab) throw std::runtime_error("cannot open IDX labels file " + labels.string());

    const std::string iname = images.string(), lname = labels.string();
    if (const auto magic = read_be32(img, iname); magic != kIdxImages) {
        throw std::runtime_error(iname + ": bad magic " + std::to_string(magic) +
                                 ", expected 0x00000803 (images)");
    }
    const std::uint32_t n = read_be32(img, iname);
    const std::uint32_t rows = read_be32(img, iname);
    const std::uint32_t cols = read_be32(img, iname);
    if (const auto magic = read_be32(lab, lname); magic != kIdxLabels) {
        throw std::runtime_error(lname + ": bad magic " + std::to_string(magic) +
                                 ", expected 0x00000801 (labels)");
    }
    const std::uint32_t nl = read_be32(lab, lname);
    if (nl != n) {
        throw std::runtime_error("IDX count mismatch: " + std::to_string(n) + " images vs " +
                                 std::to_string(nl) + " labels");
    }
    if (rows == 0 || cols == 0) throw std::runtime_error(iname + ": zero image dimension");

    Dataset data;
    data.height = rows;
    data.width = cols;
    data.classes = classes;
    data.role = DatasetRole::Train;
    const std::size_t npix = std::size_t{n} * rows * cols;
    std::vector<unsigned char> raw(npix);
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(npix))) {
        throw std::runtime_error(iname + ": truncated pixel data");
    }
    data.pixels.resize(npix);
    for (std::size_t i = 0; i < npix; ++i) data.pixels[i] = raw[i] / 255.0;

    std::vector<unsigned char> rawl(n);
    if (!lab.read(reinterpret_cast<char*>(rawl.data()), static_cast<std::streamsize>(n))) {
        throw std::runtime_error(lname + ": truncated label data");
    }
    data.labels.assign(rawl.begin(), rawl.end());
    data.original_labels = data.labels;
    data.triggered.assign(n, false);
    data.validate();
    return data;
}

void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels) {
    std::ofstream img(images, std::ios::binary);
    std::ofstream lab(labels, std::ios::binary);
    if (!img || !lab) throw std::runtime_error("cannot open IDX output files");
    write_be32(img, kIdxImages);
    write_be32(img, static_cast<std::uint32_t>(data.size()));
    write_be32(img, static_cast<std::uint32_t>(data.height));
    write_be32(img, static_cast<std::uint32_t>(data.width));
    for (double p : data.pixels) {
        img.put(static_cast<char>(static_cast<unsigned char>(std::lround(p * 255.0))));
    }
    write_be32(lab, kIdxLabels);
    write_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (int l : data.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
}

// ---------------------------------------------------------------------------

namespace {

// Segment order a,b,c,d,e,f,g (top, top-right, bottom-right, bottom,
// bottom-left, top-left, middle).
constexpr std::array<std::array<bool, 7>, 10> kSegments{{
    {true, true, true, true, true, true, false},     // 0
    {false, true, true, false, false, false, false}, // 1
    {true, true, false, true, true, false, true},    // 2
    {true, true, true, true, false, false, true},    // 3
    {false, true, true, false, false, true, true},   // 4
    {true, false, true, true, false, true, true},    // 5
    {true, false, true, true, true, true, true},     // 6
    {true, true, true, false, false, false, false},  // 7
    {true, true, true, true, true, true, true},      // 8
    {true, true, true, true, false, true, true},     // 9
}};

struct Box {
    std::size_t r0, r1, c0, c1;  // inclusive
};

constexpr std::array<Box, 7> kSegmentBoxes{{
    {2, 3, 4, 11},    // a
    {2, 8, 10, 11},   // b
    {7, 13, 10, 11},  // c
    {12, 13, 4, 11},  // d
    {7, 13, 4, 5},    // e
    {2, 8, 4, 5},     // f
    {7, 8, 4, 11},    // g
}};

}  // namespace

std::vector<double> digit_template(int digit) {
    if (digit < 0 || digit > 9) throw std::out_of_range("digit template index outside 0..9");
    std::vector<double> img(kSynthSide * kSynthSide, 0.0);
    for (std::size_t s = 0; s < 7; ++s) {
        if (!kSegments[static_cast<std::size_t>(digit)][s]) continue;
        const Box& b = kSegmentBoxes[s];
        for (std::size_t r = b.r0; r <= b.r1; ++r) {
            for (std::size_t c = b.c0; c <= b.c1; ++c) img[r * kSynthSide + c] = 1.0;
        }
    }
    return img;
}

Dataset synth_digits(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed) {
    if (classes == 0 || classes > 10) {
        throw std::invalid_argument("synth_digits: class count must be in 1..10");
    }
    if (noise < 0.0) throw std::invalid_argument("synth_digits: noise must be non-negative");
    Dataset data;
    data.height = kSynthSide;
    data.width = kSynthSide;
    data.classes = classes;
    Rng rng(seed);
    std::vector<double> img(kSynthSide * kSynthSide);
    for (std::size_t c = 0; c < classes; ++c) {
        const auto tmpl = digit_template(static_cast<int>(c));
        for (std::size_t k = 0; k < per_class; ++k) {
            for (std::size_t i = 0; i < img.size(); ++i) {
                const double v = tmpl[i] + (noise > 0.0 ? noise * rng.normal() : 0.0);
                img[i] = std::clamp(v, 0.0, 1.0);
            }
            data.push_back(img, static_cast<int>(c), static_cast<int>(c), false);
        }
    }
    return data;
}

Split split_holdout(const Dataset& data, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("split_holdout: fraction must lie in [0,1]");
    }
    const auto n_hold = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<bool> held(data.size(), false);
    for (std::size_t i = 0; i < n_hold; ++i) held[order[i]] = true;

    Split split;
    for (Dataset* d : {&split.train, &split.valid}) {
        d->height = data.height;
        d->width = data.width;
        d->classes = data.classes;
    }
    split.train.role = data.role;
    split.valid.role = DatasetRole::Valid;
    for (std::size_t i = 0; i < data.size(); ++i) {
        Dataset& dst = held[i] ? split.valid : split.train;
        dst.push_back(data.image(i), data.labels[i], data.original_labels[i], data.triggered[i]);
    }
    return split;
}

void apply_trigger(std::span<double> image, std::size_t image_w, const TriggerSpec& trig) {
    for (std::size_t r = trig.row; r < trig.row + trig.height; ++r) {
        for (std::size_t c = trig.col; c < trig.col + trig.width; ++c) {
            image[r * image_w + c] = trig.value;
        }
    }
}

std::string to_string(PoisonMode mode) {
    return mode == PoisonMode::Append ? "append" : "replace";
}

PoisonMode poison_mode_from_string(const std::string& name) {
    if (name == "append") return PoisonMode::Append;
    if (name == "replace") return PoisonMode::Replace;
    throw std::invalid_argument("unknown poison mode '" + name + "'");
}

Dataset poison(const Dataset& data, const TriggerSpec& trig, double fraction, PoisonMode mode,
               std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("poison: fraction must lie in [0,1]");
    }
    Dataset out = data;
    if (fraction == 0.0 || data.empty()) return out;
    trig.validate(data.height, data.width, data.classes);

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (trig.map.kind == LabelMap::Kind::Targeted && data.labels[i] == trig.map.target) continue;
        candidates.push_back(i);
    }
    // the epsilon keeps products such as 0.1 * 3000 from rounding up
    const double want = std::ceil(fraction * static_cast<double>(data.size()) - 1e-9);
    const std::size_t count = std::min(candidates.size(), static_cast<std::size_t>(want));

    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(candidates));
    candidates.resize(count);
    std::sort(candidates.begin(), candidates.end());

    Rng label_rng(derive_seed(seed, trig.map.seed + 1));
    std::vector<double> img(data.image_size());
    for (std::size_t idx : candidates) {
        const int mapped = map_label(trig.map, data.labels[idx], data.classes, label_rng);
        if (mode == PoisonMode::Append) {
            auto src = data.image(idx);
            std::copy(src.begin(), src.end(), img.begin());
            apply_trigger(img, data.width, trig);
            out.push_back(img, mapped, data.original_labels[idx], true);
        } else {
            apply_trigger(out.image(idx), data.width, trig);
            out.labels[idx] = mapped;
            out.triggered[idx] = true;
        }
    }
    return out;
}

Dataset backdoored_testset(const Dataset& data, const TriggerSpec& trig) {
    Dataset out = data;
    if (data.empty()) return out;
    trig.validate(data.height, data.width, data.classes);
    Rng rng(derive_seed(trig.map.seed, 0x7e57));
    for (std::size_t i = 0; i < out.size(); ++i) {
        apply_trigger(out.image(i), out.width, trig);
        const int truth = data.original_labels[i];
        if (trig.map.kind == LabelMap::Kind::Targeted) {
            out.labels[i] = trig.map.target;
        } else {
            out.labels[i] = map_label(trig.map, truth, data.classes, rng);
        }
        out.triggered[i] = true;
    }
    return out;
}

}  // namespace fineprune
