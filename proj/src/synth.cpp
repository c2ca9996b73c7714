#include "tsq/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "tsq/binio.hpp"
#include "tsq/errors.hpp"

namespace tsq::synth {

namespace {

using Rgb = std::array<float, 3>;

struct Point {
    double u, v;
};

double circle(Point p, double radius) { return std::hypot(p.u, p.v) - radius; }

double box(Point p, double cu, double cv, double hu, double hv) {
    return std::max(std::abs(p.u - cu) - hu, std::abs(p.v - cv) - hv);
}

// Convex regular polygon with circumradius `radius`; `phase` rotates it.
double polygon(Point p, int sides, double radius, double phase) {
    const double apothem = radius * std::cos(std::numbers::pi / sides);
    double d = -1e9;
    for (int k = 0; k < sides; ++k) {
        const double a = phase + (2.0 * k + 1.0) * std::numbers::pi / sides;
        d = std::max(d, p.u * std::cos(a) + p.v * std::sin(a) - apothem);
    }
    return d;
}

// Half-plane band |u cos a + v sin a| < half_width, clipped to a disk.
double band(Point p, double angle, double half_width, double radius) {
    return std::max(std::abs(p.u * std::cos(angle) + p.v * std::sin(angle)) - half_width,
                    circle(p, radius));
}

struct Layer {
    double sdf;
    Rgb colour;
};

Rgb jitter(Rgb c, Xoshiro256pp &rng, double amount) {
    for (auto &v : c) {
        v = static_cast<float>(std::clamp(v + rng.uniform(-amount, amount), 0.0, 1.0));
    }
    return c;
}

} // namespace

data::ImageTensor render_sign(std::size_t class_id, std::size_t height, std::size_t width, Xoshiro256pp &rng) {
    if (class_id >= kMaxSynthClasses) {
        throw ParameterError("synthetic signs support at most " + std::to_string(kMaxSynthClasses) + " classes");
    }
    const Rgb red = jitter({0.78f, 0.10f, 0.12f}, rng, 0.06);
    const Rgb white = jitter({0.93f, 0.93f, 0.92f}, rng, 0.04);
    const Rgb blue = jitter({0.10f, 0.26f, 0.72f}, rng, 0.06);
    const Rgb black = jitter({0.07f, 0.07f, 0.08f}, rng, 0.03);
    const Rgb yellow = jitter({0.95f, 0.80f, 0.12f}, rng, 0.05);
    const Rgb bg_top = jitter({0.45f, 0.55f, 0.60f}, rng, 0.25);
    const Rgb bg_bottom = jitter({0.35f, 0.42f, 0.30f}, rng, 0.25);

    const double side = static_cast<double>(std::min(height, width));
    const double radius = side * rng.uniform(0.34, 0.46);
    const double cx = static_cast<double>(width) / 2 + side * rng.uniform(-0.06, 0.06);
    const double cy = static_cast<double>(height) / 2 + side * rng.uniform(-0.06, 0.06);
    const double tilt = rng.uniform(-0.08, 0.08);
    const double brightness = rng.uniform(0.5, 1.15);
    const double noise = rng.uniform(0.02, 0.07);

    data::ImageTensor img = data::ImageTensor::zeros(height, width, 3);
    std::vector<Layer> layers;
    for (std::size_t y = 0; y < height; ++y) {
        const double t = static_cast<double>(y) / static_cast<double>(height);
        for (std::size_t x = 0; x < width; ++x) {
            const double du = (static_cast<double>(x) + 0.5 - cx) / radius;
            const double dv = (static_cast<double>(y) + 0.5 - cy) / radius;
            const Point p{du * std::cos(tilt) + dv * std::sin(tilt), -du * std::sin(tilt) + dv * std::cos(tilt)};
            const double up = -std::numbers::pi / 2; // polygon vertex pointing up

            layers.clear();
            switch (class_id) {
            case 0: // circular prohibition sign with two glyph bars
                layers = {{circle(p, 1.0), red},
                          {circle(p, 0.74), white},
                          {std::min(box(p, -0.24, 0, 0.11, 0.34), box(p, 0.24, 0, 0.11, 0.34)), black}};
                break;
            case 1: // warning triangle
                layers = {{polygon(p, 3, 1.0, up + std::numbers::pi / 3), red},
                          {polygon(p, 3, 0.62, up + std::numbers::pi / 3), white},
                          {box(p, 0, 0.05, 0.07, 0.22), black}};
                break;
            case 2: // mandatory direction
                layers = {{circle(p, 1.0), blue},
                          {std::min(box(p, 0, 0.18, 0.1, 0.4), polygon({p.u, p.v + 0.3}, 3, 0.36, up + std::numbers::pi / 3)),
                           white}};
                break;
            case 3: // no entry
                layers = {{circle(p, 1.0), red}, {box(p, 0, 0, 0.66, 0.15), white}};
                break;
            case 4: // priority road
                layers = {{polygon(p, 4, 1.0, 0), white}, {polygon(p, 4, 0.68, 0), yellow}};
                break;
            case 5: // yield
                layers = {{polygon(p, 3, 1.0, -up + std::numbers::pi / 3), red},
                          {polygon(p, 3, 0.58, -up + std::numbers::pi / 3), white}};
                break;
            case 6: // stop
                layers = {{polygon(p, 8, 1.0, std::numbers::pi / 8), red}, {box(p, 0, 0, 0.62, 0.1), white}};
                break;
            default: // end of restrictions
                layers = {{circle(p, 1.0), white}, {band(p, std::numbers::pi / 4, 0.12, 0.95), black}};
                break;
            }

            Rgb c;
            for (std::size_t k = 0; k < 3; ++k) {
                c[k] = static_cast<float>((1 - t) * bg_top[k] + t * bg_bottom[k]);
            }
            for (const auto &l : layers) {
                const double alpha = std::clamp(0.5 - l.sdf * radius, 0.0, 1.0);
                for (std::size_t k = 0; k < 3; ++k) {
                    c[k] = static_cast<float>((1 - alpha) * c[k] + alpha * l.colour[k]);
                }
            }
            for (std::size_t k = 0; k < 3; ++k) {
                const double v = c[k] * brightness + rng.uniform(-noise, noise);
                img.at(y, x, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return img;
}

void write_synthetic_signs(const std::filesystem::path &root, const SynthOptions &options) {
    if (options.n_classes == 0 || options.n_classes > kMaxSynthClasses) {
        throw ParameterError("synthetic classes must lie in [1, " + std::to_string(kMaxSynthClasses) + "]");
    }
    if (options.min_side < 2 || options.max_side < options.min_side) {
        throw ParameterError("invalid synthetic size range");
    }
    const std::size_t span = options.max_side - options.min_side + 1;
    for (std::size_t c = 0; c < options.n_classes; ++c) {
        char dir[16];
        std::snprintf(dir, sizeof(dir), "%05zu", c);
        for (std::size_t i = 0; i < options.per_class; ++i) {
            Xoshiro256pp rng(derive_seed(derive_seed(options.seed, c), i));
            const std::size_t base = options.min_side + rng.below(span);
            const auto wobble = [&](std::size_t s) {
                const double f = rng.uniform(0.92, 1.08);
                const auto side = static_cast<std::size_t>(std::lround(static_cast<double>(s) * f));
                return std::clamp(side, options.min_side, options.max_side);
            };
            const std::size_t h = wobble(base), w = wobble(base);
            const auto img = render_sign(c, h, w, rng);
            char name[16];
            std::snprintf(name, sizeof(name), "%05zu.ppm", i);
            write_file_atomic(root / dir / name, data::encode_ppm(img));
        }
    }
}

} // namespace tsq::synth
