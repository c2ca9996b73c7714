#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tsq/data.hpp"
#include "tsq/qsim.hpp"

namespace tsq::quanv {

/**
 * Fixed quanvolution transform: 2x2 patches at stride 2 are angle-embedded
 * into four qubits with RY(embed_scale * pixel), evolved through seeded
 * random layers, and read out as one <Z> value per qubit.
 *
 * n_filters > 1 stacks further independently seeded circuits, giving
 * 4 * n_filters output channels.
 */
struct QuanvFilterSpec {
    std::size_t patch_size = 2;
    std::size_t stride = 2;
    std::size_t n_qubits = 4;
    std::size_t n_random_layers = 2;
    std::uint64_t seed = 0;
    double embed_scale = std::numbers::pi;
    std::size_t n_filters = 1;

    /// ParameterError unless patch 2, stride 2, 4 qubits and n_filters >= 1.
    void validate() const;
    std::size_t channels() const noexcept { return n_qubits * n_filters; }
    /// Stable 64-bit identity of every field; stored in feature caches.
    std::uint64_t hash() const;
};

/// H x W x C feature image, row-major, values in [-1, 1].
struct FeatureMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    Eigen::ArrayXf values;

    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return values[static_cast<Eigen::Index>((y * width + x) * channels + c)];
    }
    bool operator==(const FeatureMap &o) const {
        return height == o.height && width == o.width && channels == o.channels &&
               (values.size() == o.values.size()) && (values == o.values).all();
    }
};

using Patch = std::array<float, 4>;
using PatchFeatures = std::array<double, 4>;

/// Per layer: RY(uniform [0, 2pi)) on each qubit, then CNOT q -> (q+1) mod 4.
/// Filter k > 0 draws from a stream derived from (seed, k).
qsim::Circuit build_random_circuit(const QuanvFilterSpec &spec, std::size_t filter = 0);

/// RY(embed_scale * p_q) on qubit q. Out-of-range values are clamped to
/// [0, 1] and counted in *clamped when given.
qsim::Circuit embed_patch(const Patch &patch, const QuanvFilterSpec &spec,
                          std::size_t *clamped = nullptr);

PatchFeatures quanv_patch(const Patch &patch, const qsim::Circuit &random_circuit,
                          const QuanvFilterSpec &spec, std::size_t *clamped = nullptr);

/// Reusable transform with the random circuits built once.
class QuanvTransform {
  public:
    explicit QuanvTransform(QuanvFilterSpec spec);

    const QuanvFilterSpec &spec() const noexcept { return spec_; }
    const std::vector<qsim::Circuit> &circuits() const noexcept { return circuits_; }

    /// DimensionError unless the image is single-channel and at least 2x2.
    FeatureMap apply(const data::ImageTensor &image, std::size_t *clamped = nullptr) const;

  private:
    QuanvFilterSpec spec_;
    std::vector<qsim::Circuit> circuits_;
};

inline FeatureMap quanv_image(const data::ImageTensor &image, const QuanvFilterSpec &spec) {
    return QuanvTransform(spec).apply(image);
}

struct FeatureRecord {
    std::uint16_t label = 0;
    FeatureMap map;
};

/// QNVF cache: magic, version 1, spec hash, count, then per record
/// label/H/W/C as u16 and H*W*C float32, all little-endian.
struct FeatureCache {
    std::uint64_t spec_hash = 0;
    std::vector<FeatureRecord> records;
};

inline constexpr std::uint32_t kCacheVersion = 1;

std::vector<std::byte> encode_feature_cache(const FeatureCache &cache);
FeatureCache decode_feature_cache(std::span<const std::byte> bytes);
FeatureCache read_feature_cache(const std::filesystem::path &path);

struct CacheIndexEntry {
    std::string path;
    std::uint16_t label = 0;
    std::uint64_t content_hash = 0;
};

struct QuanvDatasetResult {
    std::filesystem::path cache_path;
    std::vector<CacheIndexEntry> index;
    std::vector<std::string> errors; // "path: reason" per skipped image
    std::size_t computed = 0;
    std::size_t reused = 0;
    bool up_to_date = false;  // nothing written
    std::size_t clamped_pixels = 0;
};

/**
 * Quanvolves every record (decoded, grayscale, resized to image_size) into a
 * QNVF cache at cache_path, in input order. A `<cache>.idx` CSV maps each
 * record to its source path and content hash; records whose content and
 * spec hash match an existing cache are reused rather than recomputed, and
 * when everything matches nothing is written. Unreadable images are skipped
 * and listed in `<cache>.errors.txt`. An I/O failure while writing leaves a
 * `<cache>.partial` marker and rethrows.
 */
QuanvDatasetResult quanv_dataset(std::span<const data::ManifestRecord> records,
                                 const QuanvFilterSpec &spec, const std::filesystem::path &cache_path,
                                 std::size_t image_size);

} // namespace tsq::quanv
