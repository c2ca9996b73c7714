#include "tsq/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "tsq/binio.hpp"
#include "tsq/errors.hpp"
#include "tsq/rng.hpp"

namespace tsq::data {

namespace fs = std::filesystem;

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderLexer {
  public:
    explicit HeaderLexer(std::span<const std::byte> b) : b_(b) {}

    std::string token() {
        skip_space_and_comments();
        std::string tok;
        while (pos_ < b_.size() && !is_space(ch()) && ch() != '#') {
            tok += ch();
            ++pos_;
        }
        if (tok.empty()) {
            throw DecodeError("ppm: truncated header");
        }
        return tok;
    }

    std::size_t number(const char *what) {
        const std::string tok = token();
        std::size_t v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || p != tok.data() + tok.size()) {
            throw DecodeError(std::string("ppm: malformed ") + what + " '" + tok + "'");
        }
        return v;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t raster_start() {
        if (pos_ >= b_.size() || !is_space(ch())) {
            throw DecodeError("ppm: missing whitespace before pixel data");
        }
        return pos_ + 1;
    }

  private:
    char ch() const { return static_cast<char>(b_[pos_]); }

    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (is_space(ch())) {
                ++pos_;
            } else if (ch() == '#') {
                while (pos_ < b_.size() && ch() != '\n') {
                    ++pos_;
                }
            } else {
                break;
            }
        }
    }

    std::span<const std::byte> b_;
    std::size_t pos_ = 0;
};

} // namespace

PpmHeader parse_ppm_header(std::span<const std::byte> bytes) {
    HeaderLexer lex(bytes);
    const std::string magic = lex.token();
    PpmHeader h;
    if (magic == "P5") {
        h.channels = 1;
    } else if (magic == "P6") {
        h.channels = 3;
    } else {
        throw DecodeError("ppm: unsupported magic '" + magic + "' (expected P5 or P6)");
    }
    h.width = lex.number("width");
    h.height = lex.number("height");
    const std::size_t maxval = lex.number("maxval");
    if (h.width == 0 || h.height == 0) {
        throw DecodeError("ppm: degenerate dimensions " + std::to_string(h.width) + "x" +
                          std::to_string(h.height));
    }
    if (maxval != 255) {
        throw DecodeError("ppm: maxval " + std::to_string(maxval) + " unsupported (need 255)");
    }
    h.data_offset = lex.raster_start();
    return h;
}

PpmHeader read_ppm_header(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<char> buf(1024);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    buf.resize(static_cast<std::size_t>(in.gcount()));
    return parse_ppm_header(std::as_bytes(std::span(buf)));
}

ImageTensor decode_ppm(std::span<const std::byte> bytes) {
    const PpmHeader h = parse_ppm_header(bytes);
    const std::size_t n = h.width * h.height * h.channels;
    if (bytes.size() - h.data_offset < n) {
        throw DecodeError("ppm: truncated payload, expected " + std::to_string(n) + " bytes, got " +
                          std::to_string(bytes.size() - h.data_offset));
    }
    ImageTensor img = ImageTensor::zeros(h.height, h.width, h.channels);
    for (std::size_t i = 0; i < n; ++i) {
        img.values[static_cast<Eigen::Index>(i)] =
            static_cast<float>(std::to_integer<unsigned>(bytes[h.data_offset + i])) / 255.0f;
    }
    return img;
}

ImageTensor load_ppm(const fs::path &path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_ppm(bytes);
    } catch (const DecodeError &e) {
        throw DecodeError(path.string() + ": " + e.what());
    }
}

std::vector<std::byte> encode_ppm(const ImageTensor &image) {
    if (image.channels != 1 && image.channels != 3) {
        throw DimensionError("ppm encodes 1 or 3 channels, got " + std::to_string(image.channels));
    }
    const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" +
                               std::to_string(image.width) + " " + std::to_string(image.height) +
                               "\n255\n";
    std::vector<std::byte> out;
    out.reserve(header.size() + static_cast<std::size_t>(image.values.size()));
    for (char c : header) {
        out.push_back(static_cast<std::byte>(c));
    }
    for (float v : image.values) {
        const long q = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f);
        out.push_back(static_cast<std::byte>(q));
    }
    return out;
}

ImageTensor to_grayscale(const ImageTensor &image) {
    if (image.channels == 1) {
        return image;
    }
    if (image.channels != 3) {
        throw DimensionError("grayscale needs 1 or 3 channels, got " + std::to_string(image.channels));
    }
    ImageTensor out = ImageTensor::zeros(image.height, image.width, 1);
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            const float l = 0.299f * image.at(y, x, 0) + 0.587f * image.at(y, x, 1) +
                            0.114f * image.at(y, x, 2);
            out.at(y, x) = std::clamp(l, 0.0f, 1.0f);
        }
    }
    return out;
}

ImageTensor resize_bilinear(const ImageTensor &image, std::size_t out_h, std::size_t out_w) {
    if (image.height < 2 || image.width < 2) {
        throw DimensionError("resize source must be at least 2x2, got " +
                             std::to_string(image.height) + "x" + std::to_string(image.width));
    }
    if (out_h == 0 || out_w == 0) {
        throw DimensionError("resize target must be non-empty");
    }
    if (out_h == image.height && out_w == image.width) {
        return image;
    }
    ImageTensor out = ImageTensor::zeros(out_h, out_w, image.channels);
    const double sy = static_cast<double>(image.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(image.width) / static_cast<double>(out_w);
    const double max_y = static_cast<double>(image.height - 1);
    const double max_x = static_cast<double>(image.width - 1);

    for (std::size_t oy = 0; oy < out_h; ++oy) {
        const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, max_y);
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, max_x);
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < image.channels; ++c) {
                const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
                const double bot = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
                const double v = (1 - wy) * top + wy * bot;
                out.at(oy, ox, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

ImageTensor load_preprocessed(const fs::path &path, std::size_t size) {
    ImageTensor img = to_grayscale(load_ppm(path));
    if (size == 0) {
        return img;
    }
    return resize_bilinear(img, size, size);
}

std::string_view split_name(Split s) noexcept {
    switch (s) {
    case Split::Train:
        return "train";
    case Split::Val:
        return "val";
    case Split::Test:
        return "test";
    default:
        return "none";
    }
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "val") return Split::Val;
    if (name == "test") return Split::Test;
    if (name == "none") return Split::Unassigned;
    throw ValidationError("unknown split '" + std::string(name) + "'");
}

std::vector<ManifestRecord> DatasetManifest::split(Split s) const {
    std::vector<ManifestRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [s](const ManifestRecord &r) { return r.split == s; });
    return out;
}

DatasetManifest scan_dataset_dir(const fs::path &root) {
    if (!fs::is_directory(root)) {
        throw ConfigError("dataset root is not a directory: " + root.string());
    }
    std::vector<fs::path> class_dirs;
    for (const auto &entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) {
            class_dirs.push_back(entry.path());
        }
    }
    if (class_dirs.empty()) {
        throw ConfigError("dataset root has no class directories: " + root.string());
    }
    std::sort(class_dirs.begin(), class_dirs.end(),
              [](const fs::path &a, const fs::path &b) { return a.filename().string() < b.filename().string(); });

    DatasetManifest m;
    m.n_classes = class_dirs.size();
    for (std::size_t id = 0; id < class_dirs.size(); ++id) {
        std::vector<fs::path> files;
        for (const auto &entry : fs::directory_iterator(class_dirs[id])) {
            if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
                files.push_back(entry.path());
            }
        }
        if (files.empty()) {
            throw ConfigError("class directory has no .ppm images: " + class_dirs[id].string());
        }
        std::sort(files.begin(), files.end(),
                  [](const fs::path &a, const fs::path &b) { return a.filename().string() < b.filename().string(); });
        m.class_names.push_back(class_dirs[id].filename().string());
        for (const auto &f : files) {
            ManifestRecord r;
            r.path = f.string();
            r.class_id = id;
            try {
                const PpmHeader h = read_ppm_header(f);
                r.height = h.height;
                r.width = h.width;
            } catch (const Error &) {
                // Left at 0x0; the size filter drops it.
            }
            m.records.push_back(std::move(r));
        }
    }
    return m;
}

std::vector<ManifestRecord> filter_by_size(std::span<const ManifestRecord> records,
                                           std::size_t min_size) {
    std::vector<ManifestRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [min_size](const ManifestRecord &r) { return r.height > min_size && r.width > min_size; });
    return out;
}

std::vector<ManifestRecord> stratified_subsample(std::span<const ManifestRecord> records,
                                                 std::size_t n_classes, std::size_t max_samples,
                                                 std::uint64_t seed) {
    if (max_samples == 0 || records.size() <= max_samples) {
        return {records.begin(), records.end()};
    }
    std::vector<std::vector<std::size_t>> by_class(n_classes);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].class_id >= n_classes) {
            throw ValidationError("record class id out of range: " + records[i].path);
        }
        by_class[records[i].class_id].push_back(i);
    }

    const std::size_t total = records.size();
    std::vector<std::size_t> quota(n_classes);
    std::vector<std::pair<std::size_t, std::size_t>> remainders; // (fraction numerator, class)
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t num = max_samples * by_class[c].size();
        quota[c] = num / total;
        assigned += quota[c];
        remainders.emplace_back(num % total, c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto &a, const auto &b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < max_samples && i < remainders.size(); ++i) {
        const std::size_t c = remainders[i].second;
        if (quota[c] < by_class[c].size()) {
            ++quota[c];
            ++assigned;
        }
    }

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < n_classes; ++c) {
        Xoshiro256pp rng(derive_seed(seed, 0x5ab5a3b1e0000000ULL + c));
        auto idx = by_class[c];
        shuffle(std::span(idx), rng);
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(keep.begin(), keep.end());
    std::vector<ManifestRecord> out;
    out.reserve(keep.size());
    for (auto i : keep) {
        out.push_back(records[i]);
    }
    return out;
}

DatasetManifest split_dataset(DatasetManifest manifest, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(manifest.n_classes);
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto c = manifest.records[i].class_id;
        if (c >= manifest.n_classes) {
            throw ValidationError("record class id " + std::to_string(c) + " >= n_classes");
        }
        by_class[c].push_back(i);
    }
    std::string short_classes;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < kMinRecordsPerClass) {
            const std::string name =
                c < manifest.class_names.size() ? manifest.class_names[c] : std::to_string(c);
            short_classes += (short_classes.empty() ? "" : ", ") + name + " (" +
                             std::to_string(by_class[c].size()) + ")";
        }
    }
    if (!short_classes.empty()) {
        throw ConfigError("classes below the minimum of " + std::to_string(kMinRecordsPerClass) +
                          " records: " + short_classes);
    }

    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto idx = by_class[c];
        Xoshiro256pp rng(derive_seed(seed, c));
        shuffle(std::span(idx), rng);
        const std::size_t n = idx.size();
        const std::size_t n_train = (8 * n) / 10;
        const std::size_t n_val = n / 10;
        for (std::size_t k = 0; k < n; ++k) {
            manifest.records[idx[k]].split =
                k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
        }
    }
    manifest.seed = seed;
    return manifest;
}

Eigen::VectorXf one_hot(std::size_t class_id, std::size_t n_classes) {
    if (class_id >= n_classes) {
        throw ValidationError("class id " + std::to_string(class_id) + " out of range for " +
                              std::to_string(n_classes) + " classes");
    }
    Eigen::VectorXf v = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(n_classes));
    v[static_cast<Eigen::Index>(class_id)] = 1.0f;
    return v;
}

std::string manifest_to_csv(const DatasetManifest &manifest, std::string_view extra_header) {
    std::ostringstream out;
    out << "# seed=" << manifest.seed << " n_classes=" << manifest.n_classes;
    if (!extra_header.empty()) {
        out << ' ' << extra_header;
    }
    out << "\npath,class_id,split\n";
    for (const auto &r : manifest.records) {
        out << r.path << ',' << r.class_id << ',' << split_name(r.split) << '\n';
    }
    return out.str();
}

DatasetManifest manifest_from_csv(std::string_view text) {
    DatasetManifest m;
    std::istringstream in{std::string(text)};
    std::string line;
    bool have_header = false, have_columns = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line[0] == '#') {
            std::istringstream kv(line.substr(1));
            for (std::string tok; kv >> tok;) {
                const auto eq = tok.find('=');
                if (eq == std::string::npos) continue;
                const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
                if (key == "seed") {
                    m.seed = std::stoull(val);
                    have_header = true;
                } else if (key == "n_classes") {
                    m.n_classes = std::stoull(val);
                }
            }
            continue;
        }
        if (!have_columns) {
            if (line != "path,class_id,split") {
                throw DecodeError("manifest: expected header 'path,class_id,split'");
            }
            have_columns = true;
            continue;
        }
        const auto c2 = line.rfind(',');
        const auto c1 = c2 == std::string::npos ? c2 : line.rfind(',', c2 - 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw DecodeError("manifest line " + std::to_string(lineno) + ": expected 3 fields");
        }
        ManifestRecord r;
        r.path = line.substr(0, c1);
        const std::string id = line.substr(c1 + 1, c2 - c1 - 1);
        auto [p, ec] = std::from_chars(id.data(), id.data() + id.size(), r.class_id);
        if (ec != std::errc{} || p != id.data() + id.size()) {
            throw DecodeError("manifest line " + std::to_string(lineno) + ": bad class id '" + id + "'");
        }
        r.split = parse_split(line.substr(c2 + 1));
        if (m.n_classes && r.class_id >= m.n_classes) {
            throw ValidationError("manifest line " + std::to_string(lineno) + ": class id out of range");
        }
        m.records.push_back(std::move(r));
    }
    if (!have_header || !have_columns || m.n_classes == 0) {
        throw DecodeError("manifest: missing '# seed=.. n_classes=..' header or column line");
    }
    return m;
}

DatasetManifest read_manifest(const fs::path &path) {
    return manifest_from_csv(read_file_text(path));
}

} // namespace tsq::data
