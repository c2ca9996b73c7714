#include "tsq/quanv.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <map>
#include <sstream>

#include "tsq/binio.hpp"
#include "tsq/errors.hpp"
#include "tsq/hash.hpp"
#include "tsq/rng.hpp"

namespace tsq::quanv {

namespace fs = std::filesystem;
using qsim::GateKind;
using qsim::GateOp;

void QuanvFilterSpec::validate() const {
    if (patch_size != 2 || stride != 2) {
        throw ParameterError("quanvolution supports 2x2 patches at stride 2 only");
    }
    if (n_qubits != patch_size * patch_size) {
        throw ParameterError("n_qubits must equal patch_size^2");
    }
    if (n_filters < 1) {
        throw ParameterError("n_filters must be >= 1");
    }
}

std::uint64_t QuanvFilterSpec::hash() const {
    Fnv1a64 h;
    h.update("QuanvFilterSpec/v1");
    h.update_value(static_cast<std::uint64_t>(patch_size));
    h.update_value(static_cast<std::uint64_t>(stride));
    h.update_value(static_cast<std::uint64_t>(n_qubits));
    h.update_value(static_cast<std::uint64_t>(n_random_layers));
    h.update_value(seed);
    h.update_value(std::bit_cast<std::uint64_t>(embed_scale));
    h.update_value(static_cast<std::uint64_t>(n_filters));
    return h.digest();
}

qsim::Circuit build_random_circuit(const QuanvFilterSpec &spec, std::size_t filter) {
    spec.validate();
    Xoshiro256pp rng(filter == 0 ? spec.seed : derive_seed(spec.seed, filter));
    qsim::Circuit c{spec.n_qubits, {}};
    c.ops.reserve(spec.n_random_layers * 2 * spec.n_qubits);
    for (std::size_t layer = 0; layer < spec.n_random_layers; ++layer) {
        for (std::size_t q = 0; q < spec.n_qubits; ++q) {
            const double theta = rng.angle();
            c.ops.push_back(GateOp::single(GateKind::RY, q, std::span(&theta, 1)));
        }
        for (std::size_t q = 0; q < spec.n_qubits; ++q) {
            c.ops.push_back(GateOp::controlled(GateKind::CNOT, q, (q + 1) % spec.n_qubits));
        }
    }
    return c;
}

qsim::Circuit embed_patch(const Patch &patch, const QuanvFilterSpec &spec, std::size_t *clamped) {
    qsim::Circuit c{spec.n_qubits, {}};
    for (std::size_t q = 0; q < patch.size(); ++q) {
        float p = patch[q];
        if (!(p >= 0.0f && p <= 1.0f)) {
            p = std::isnan(p) ? 0.0f : std::clamp(p, 0.0f, 1.0f);
            if (clamped) {
                ++*clamped;
            }
        }
        const double theta = spec.embed_scale * static_cast<double>(p);
        c.ops.push_back(GateOp::single(GateKind::RY, q, std::span(&theta, 1)));
    }
    return c;
}

PatchFeatures quanv_patch(const Patch &patch, const qsim::Circuit &random_circuit,
                          const QuanvFilterSpec &spec, std::size_t *clamped) {
    auto state = qsim::StateVector::zero(spec.n_qubits);
    qsim::run_circuit_inplace(embed_patch(patch, spec, clamped), state);
    qsim::run_circuit_inplace(random_circuit, state);
    PatchFeatures out{};
    for (std::size_t q = 0; q < out.size(); ++q) {
        out[q] = qsim::pauli_z_expectation(state, q);
    }
    return out;
}

QuanvTransform::QuanvTransform(QuanvFilterSpec spec) : spec_(spec) {
    spec_.validate();
    for (std::size_t f = 0; f < spec_.n_filters; ++f) {
        circuits_.push_back(build_random_circuit(spec_, f));
    }
}

FeatureMap QuanvTransform::apply(const data::ImageTensor &image, std::size_t *clamped) const {
    if (image.channels != 1) {
        throw DimensionError("quanvolution expects a single-channel image, got " +
                             std::to_string(image.channels) + " channels");
    }
    if (image.height < spec_.patch_size || image.width < spec_.patch_size) {
        throw DimensionError("image " + std::to_string(image.height) + "x" +
                             std::to_string(image.width) + " smaller than one patch");
    }
    FeatureMap out;
    out.height = image.height / spec_.stride;
    out.width = image.width / spec_.stride;
    out.channels = spec_.channels();
    out.values.resize(static_cast<Eigen::Index>(out.height * out.width * out.channels));

    for (std::size_t oy = 0; oy < out.height; ++oy) {
        for (std::size_t ox = 0; ox < out.width; ++ox) {
            const std::size_t y = oy * spec_.stride, x = ox * spec_.stride;
            const Patch patch{image.at(y, x), image.at(y, x + 1), image.at(y + 1, x),
                              image.at(y + 1, x + 1)};
            const std::size_t base = (oy * out.width + ox) * out.channels;
            for (std::size_t f = 0; f < circuits_.size(); ++f) {
                const auto z = quanv_patch(patch, circuits_[f], spec_, clamped);
                for (std::size_t q = 0; q < z.size(); ++q) {
                    out.values[static_cast<Eigen::Index>(base + f * spec_.n_qubits + q)] =
                        static_cast<float>(z[q]);
                }
            }
        }
    }
    return out;
}

std::vector<std::byte> encode_feature_cache(const FeatureCache &cache) {
    ByteWriter w;
    w.magic("QNVF");
    w.u32(kCacheVersion);
    w.u64(cache.spec_hash);
    w.u32(static_cast<std::uint32_t>(cache.records.size()));
    for (const auto &r : cache.records) {
        const auto &m = r.map;
        if (m.height > 0xffff || m.width > 0xffff || m.channels > 0xffff) {
            throw DimensionError("feature map dimensions exceed u16");
        }
        w.u16(r.label);
        w.u16(static_cast<std::uint16_t>(m.height));
        w.u16(static_cast<std::uint16_t>(m.width));
        w.u16(static_cast<std::uint16_t>(m.channels));
        w.f32s(std::span(m.values.data(), static_cast<std::size_t>(m.values.size())));
    }
    return w.take();
}

FeatureCache decode_feature_cache(std::span<const std::byte> bytes) {
    ByteReader r(bytes, "feature cache");
    r.expect_magic("QNVF");
    const auto version = r.u32();
    if (version != kCacheVersion) {
        throw DecodeError("feature cache: unsupported version " + std::to_string(version));
    }
    FeatureCache cache;
    cache.spec_hash = r.u64();
    const auto count = r.u32();
    cache.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        FeatureRecord rec;
        rec.label = r.u16();
        rec.map.height = r.u16();
        rec.map.width = r.u16();
        rec.map.channels = r.u16();
        rec.map.values.resize(static_cast<Eigen::Index>(rec.map.height * rec.map.width * rec.map.channels));
        r.f32s(std::span(rec.map.values.data(), static_cast<std::size_t>(rec.map.values.size())));
        cache.records.push_back(std::move(rec));
    }
    if (r.remaining() != 0) {
        throw DecodeError("feature cache: " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return cache;
}

FeatureCache read_feature_cache(const fs::path &path) {
    return decode_feature_cache(read_file_bytes(path));
}

namespace {

fs::path sibling(const fs::path &p, const char *suffix) {
    fs::path out = p;
    out += suffix;
    return out;
}

std::string index_to_csv(const std::vector<CacheIndexEntry> &index, std::uint64_t spec_hash) {
    std::ostringstream out;
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(spec_hash));
    out << "# spec_hash=" << hex << "\npath,label,content_hash\n";
    for (const auto &e : index) {
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(e.content_hash));
        out << e.path << ',' << e.label << ',' << hex << '\n';
    }
    return out.str();
}

std::vector<CacheIndexEntry> index_from_csv(const std::string &text) {
    std::vector<CacheIndexEntry> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line == "path,label,content_hash") {
            continue;
        }
        const auto c2 = line.rfind(',');
        const auto c1 = line.rfind(',', c2 - 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw DecodeError("cache index: malformed line");
        }
        CacheIndexEntry e;
        e.path = line.substr(0, c1);
        e.label = static_cast<std::uint16_t>(std::stoul(line.substr(c1 + 1, c2 - c1 - 1)));
        e.content_hash = std::stoull(line.substr(c2 + 1), nullptr, 16);
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace

QuanvDatasetResult quanv_dataset(std::span<const data::ManifestRecord> records,
                                 const QuanvFilterSpec &spec, const fs::path &cache_path,
                                 std::size_t image_size) {
    const QuanvTransform transform(spec);
    const std::uint64_t spec_hash = spec.hash();
    const fs::path index_path = sibling(cache_path, ".idx");
    const fs::path errors_path = sibling(cache_path, ".errors.txt");
    const fs::path partial_path = sibling(cache_path, ".partial");

    // Previous results keyed by (content hash, label).
    FeatureCache previous;
    std::vector<CacheIndexEntry> previous_index;
    std::map<std::pair<std::uint64_t, std::uint16_t>, std::size_t> reusable;
    if (fs::exists(cache_path) && fs::exists(index_path) && !fs::exists(partial_path)) {
        try {
            previous = read_feature_cache(cache_path);
            previous_index = index_from_csv(read_file_text(index_path));
            if (previous.spec_hash == spec_hash && previous_index.size() == previous.records.size()) {
                for (std::size_t i = 0; i < previous_index.size(); ++i) {
                    reusable.emplace(std::make_pair(previous_index[i].content_hash, previous_index[i].label), i);
                }
            } else {
                previous_index.clear();
            }
        } catch (const Error &) {
            previous_index.clear();
        }
    }

    QuanvDatasetResult result;
    result.cache_path = cache_path;
    FeatureCache cache{spec_hash, {}};
    const std::size_t expect_hw = image_size / spec.stride;

    for (const auto &rec : records) {
        if (rec.class_id > 0xffff) {
            throw ValidationError("class id exceeds u16 range: " + rec.path);
        }
        const auto label = static_cast<std::uint16_t>(rec.class_id);
        std::vector<std::byte> bytes;
        try {
            bytes = read_file_bytes(rec.path);
        } catch (const Error &e) {
            result.errors.push_back(rec.path + ": " + e.what());
            continue;
        }
        const std::uint64_t content = Fnv1a64{}.update(bytes).digest();

        if (auto it = reusable.find({content, label}); it != reusable.end()) {
            const auto &old = previous.records[it->second];
            if (image_size == 0 || (old.map.height == expect_hw && old.map.width == expect_hw)) {
                cache.records.push_back(old);
                result.index.push_back({rec.path, label, content});
                ++result.reused;
                continue;
            }
        }

        try {
            data::ImageTensor img = data::to_grayscale(data::decode_ppm(bytes));
            if (image_size) {
                img = data::resize_bilinear(img, image_size, image_size);
            }
            cache.records.push_back({label, transform.apply(img, &result.clamped_pixels)});
        } catch (const Error &e) {
            result.errors.push_back(rec.path + ": " + e.what());
            continue;
        }
        result.index.push_back({rec.path, label, content});
        ++result.computed;
    }

    const bool same_index =
        previous_index.size() == result.index.size() &&
        std::equal(previous_index.begin(), previous_index.end(), result.index.begin(),
                   [](const CacheIndexEntry &a, const CacheIndexEntry &b) {
                       return a.path == b.path && a.label == b.label && a.content_hash == b.content_hash;
                   });
    if (result.computed == 0 && same_index && !previous_index.empty()) {
        result.up_to_date = true;
        return result;
    }
    if (records.empty() && fs::exists(cache_path) && previous.spec_hash == spec_hash &&
        previous.records.empty() && fs::exists(index_path)) {
        result.up_to_date = true;
        return result;
    }

    try {
        write_file_atomic(partial_path, std::string_view("incomplete\n"));
        write_file_atomic(cache_path, encode_feature_cache(cache));
        write_file_atomic(index_path, index_to_csv(result.index, spec_hash));
        if (!result.errors.empty()) {
            std::string text;
            for (const auto &e : result.errors) {
                text += e + '\n';
            }
            write_file_atomic(errors_path, text);
        } else {
            fs::remove(errors_path);
        }
        fs::remove(partial_path);
    } catch (const std::exception &e) {
        throw IoError("writing feature cache " + cache_path.string() + " failed: " + e.what() +
                      " (left partial marker)");
    }
    return result;
}

} // namespace tsq::quanv
