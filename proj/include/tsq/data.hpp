#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tsq::data {

/// H x W x C image, row-major, values in [0, 1].
struct ImageTensor {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    Eigen::ArrayXf values;

    static ImageTensor zeros(std::size_t h, std::size_t w, std::size_t c) {
        return {h, w, c, Eigen::ArrayXf::Zero(static_cast<Eigen::Index>(h * w * c))};
    }

    float &at(std::size_t y, std::size_t x, std::size_t c = 0) {
        return values[static_cast<Eigen::Index>((y * width + x) * channels + c)];
    }
    float at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return values[static_cast<Eigen::Index>((y * width + x) * channels + c)];
    }
};

struct PpmHeader {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::size_t data_offset = 0;
};

/// Parses a binary P5/P6 header (comments allowed); DecodeError on anything
/// else, including maxval other than 255 and zero dimensions.
PpmHeader parse_ppm_header(std::span<const std::byte> bytes);
/// Reads just enough of a file to parse its header.
PpmHeader read_ppm_header(const std::filesystem::path &path);

ImageTensor decode_ppm(std::span<const std::byte> bytes);
ImageTensor load_ppm(const std::filesystem::path &path);
/// P5 for one channel, P6 for three; pixels rounded to nearest byte.
std::vector<std::byte> encode_ppm(const ImageTensor &image);

/// Rec.601 luminance; single-channel input is returned unchanged.
ImageTensor to_grayscale(const ImageTensor &image);

/// Bilinear resampling with half-pixel centres (align_corners = false).
ImageTensor resize_bilinear(const ImageTensor &image, std::size_t out_h, std::size_t out_w);

/// decode -> grayscale -> resize to size x size (size 0 keeps native size).
ImageTensor load_preprocessed(const std::filesystem::path &path, std::size_t size);

enum class Split : std::uint8_t { Unassigned, Train, Val, Test };

std::string_view split_name(Split s) noexcept;
Split parse_split(std::string_view name);

struct ManifestRecord {
    std::string path;
    std::size_t class_id = 0;
    Split split = Split::Unassigned;
    // Native size from the file header; not serialized.
    std::size_t height = 0;
    std::size_t width = 0;

    bool operator==(const ManifestRecord &) const = default;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::size_t n_classes = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> class_names;

    std::vector<ManifestRecord> split(Split s) const;
};

/// One class per subdirectory, ids in lexicographic directory order, *.ppm
/// files in lexicographic order. Native dims are read from each header;
/// unreadable headers leave dims at 0.
DatasetManifest scan_dataset_dir(const std::filesystem::path &root);

/// Keeps records strictly larger than min_size in both dimensions.
std::vector<ManifestRecord> filter_by_size(std::span<const ManifestRecord> records,
                                           std::size_t min_size);

/**
 * Seeded stratified subsample down to at most max_samples records. Each class
 * keeps floor(max * n_c / total) records, and the remainder goes to the
 * classes with the largest fractional parts (ties to lower class id).
 * Surviving records keep their original relative order.
 */
std::vector<ManifestRecord> stratified_subsample(std::span<const ManifestRecord> records,
                                                 std::size_t n_classes, std::size_t max_samples,
                                                 std::uint64_t seed);

inline constexpr std::size_t kMinRecordsPerClass = 10;

/// Per-class seeded shuffle, then floor(0.8n) train, floor(0.1n) val, the
/// rest test. ConfigError naming every class below kMinRecordsPerClass.
DatasetManifest split_dataset(DatasetManifest manifest, std::uint64_t seed);

/// ValidationError when class_id >= n_classes.
Eigen::VectorXf one_hot(std::size_t class_id, std::size_t n_classes);

/// CSV `path,class_id,split` preceded by a `# seed=.. n_classes=..` comment.
std::string manifest_to_csv(const DatasetManifest &manifest, std::string_view extra_header = {});
DatasetManifest manifest_from_csv(std::string_view text);
DatasetManifest read_manifest(const std::filesystem::path &path);

} // namespace tsq::data
