#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "tsq/data.hpp"
#include "tsq/rng.hpp"

namespace tsq::synth {

inline constexpr std::size_t kMaxSynthClasses = 8;

/// Procedural stand-in for a traffic-sign dataset: coloured sign shapes on
/// noisy backgrounds with random size, position and brightness.
struct SynthOptions {
    std::size_t n_classes = 4;
    std::size_t per_class = 140;
    std::size_t min_side = 40;
    std::size_t max_side = 128;
    std::uint64_t seed = 0;
};

/// RGB image of one sign of the given class.
data::ImageTensor render_sign(std::size_t class_id, std::size_t height, std::size_t width, Xoshiro256pp &rng);

/// Writes `<root>/<class:05d>/<index:05d>.ppm`; deterministic in the options.
void write_synthetic_signs(const std::filesystem::path &root, const SynthOptions &options);

} // namespace tsq::synth
