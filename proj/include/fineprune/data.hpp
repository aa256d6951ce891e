#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fineprune/tensor.hpp"

namespace fineprune {

enum class DatasetRole { Train, Valid, Test };

std::string to_string(DatasetRole role);

/// Labeled single-channel images with pixels in [0,1].
///
/// `labels` are the labels a model is trained or scored against. For clean
/// data `original_labels == labels`; for poisoned or triggered samples
/// `labels` carries the attacker's mapped label and `original_labels` the
/// ground truth.
struct Dataset {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t classes = 10;
    std::vector<double> pixels;  // size() * height * width, row-major
    std::vector<int> labels;
    std::vector<int> original_labels;
    std::vector<bool> triggered;
    DatasetRole role = DatasetRole::Train;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    std::size_t image_size() const noexcept { return height * width; }

    std::span<const double> image(std::size_t i) const;
    std::span<double> image(std::size_t i);

    /// Gathers the listed samples into a [n,1,H,W] tensor.
    Tensor batch(std::span<const std::size_t> indices) const;
    /// Samples [first, first+count) as a [count,1,H,W] tensor.
    Tensor batch_range(std::size_t first, std::size_t count) const;

    void push_back(std::span<const double> img, int label, int original_label, bool trig);

    /// Throws std::invalid_argument when a Dataset invariant is broken.
    void validate() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// How a trigger rewrites labels.
struct LabelMap {
    enum class Kind { Targeted, Shift, Untargeted };
    Kind kind = Kind::Shift;
    int target = 0;            // Targeted only
    std::uint64_t seed = 0;    // Untargeted only: stream for random wrong labels

    static LabelMap targeted(int target) { return {Kind::Targeted, target, 0}; }
    static LabelMap shift() { return {Kind::Shift, 0, 0}; }
    static LabelMap untargeted(std::uint64_t seed) { return {Kind::Untargeted, 0, seed}; }

    friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

std::string to_string(LabelMap::Kind kind);
LabelMap::Kind label_map_kind_from_string(const std::string& name);

/// Rectangular pixel patch plus the label map it activates.
struct TriggerSpec {
    std::size_t row = 0;
    std::size_t col = 0;
    std::size_t height = 3;
    std::size_t width = 3;
    double value = 1.0;
    LabelMap map;

    /// size x size patch flush with the bottom-right corner.
    static TriggerSpec bottom_right(std::size_t image_h, std::size_t image_w, std::size_t size,
                                    double value, LabelMap map);

    /// Patch inside the image, value in [0,1], targeted class valid.
    void validate(std::size_t image_h, std::size_t image_w, std::size_t classes) const;

    friend bool operator==(const TriggerSpec&, const TriggerSpec&) = default;
};

class Rng;

/// Maps `label` through `map`. The result always differs from `label`.
/// Targeted maps may only be applied to labels other than the target.
int map_label(const LabelMap& map, int label, std::size_t classes, Rng& rng);

// --- ingestion ---------------------------------------------------------------

/// Parses an MNIST-style IDX pair: images magic 0x00000803, labels
/// 0x00000801, big-endian 32-bit header fields, unsigned byte payloads.
/// Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::size_t classes = 10);

/// Writes a Dataset back out as an IDX pair (pixels rounded to bytes).
void save_idx(const Dataset& data, const std::filesystem::path& images,
              const std::filesystem::path& labels);

constexpr std::size_t kSynthSide = 16;

/// Seven-segment digit templates on a 16x16 canvas plus seeded Gaussian
/// pixel noise, clamped to [0,1]. Samples are ordered class-major.
Dataset synth_digits(std::size_t classes, std::size_t per_class, double noise, std::uint64_t seed);

/// The noise-free template for `digit`.
std::vector<double> digit_template(int digit);

// --- splits and poisoning ------------------------------------------------------

struct Split {
    Dataset train;
    Dataset valid;
};

/// Seeded random hold-out of round(fraction * size) samples; both halves
/// keep the source order of their members.
Split split_holdout(const Dataset& data, double fraction, std::uint64_t seed);

void apply_trigger(std::span<double> image, std::size_t image_w, const TriggerSpec& trig);

enum class PoisonMode { Append, Replace };

std::string to_string(PoisonMode mode);
PoisonMode poison_mode_from_string(const std::string& name);

/// ceil(fraction * size) seeded-random samples get the trigger and a mapped
/// label. Samples whose label is the target of a targeted map are never
/// chosen (they cannot carry a different label). Append keeps the originals
/// and adds the poisoned copies at the end in index order; Replace rewrites
/// them in place.
Dataset poison(const Dataset& data, const TriggerSpec& trig, double fraction, PoisonMode mode,
               std::uint64_t seed);

/// Every sample triggered; `labels` become the attacker's desired outputs
/// while `original_labels` keep the ground truth.
Dataset backdoored_testset(const Dataset& data, const TriggerSpec& trig);

}  // namespace fineprune
