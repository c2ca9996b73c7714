#include "tsq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "tsq/binio.hpp"
#include "tsq/errors.hpp"
#include "tsq/rng.hpp"

namespace tsq::nn {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

std::string dims_str(const std::vector<std::size_t> &d) {
    std::string s = "[";
    for (std::size_t i = 0; i < d.size(); ++i) {
        s += (i ? "," : "") + std::to_string(d[i]);
    }
    return s + "]";
}

template <typename Scalar>
void require_rank(const Tensor<Scalar> &t, std::size_t rank, const char *what) {
    if (t.shape.size() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                             " tensor, got " + dims_str(t.shape));
    }
}

// Rows are output pixels (oy, ox); columns are (dy, dx, c).
template <typename Scalar>
void im2col(const Scalar *in, std::size_t h, std::size_t w, std::size_t c, RowMatrix<Scalar> &cols) {
    const std::size_t oh = h - 2, ow = w - 2, k = kConvKernel * kConvKernel * c;
    cols.resize(static_cast<Eigen::Index>(oh * ow), static_cast<Eigen::Index>(k));
    Scalar *dst = cols.data();
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                const Scalar *src = in + ((oy + dy) * w + ox) * c;
                std::memcpy(dst, src, kConvKernel * c * sizeof(Scalar));
                dst += kConvKernel * c;
            }
        }
    }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar> &cols, std::size_t h, std::size_t w, std::size_t c, Scalar *out) {
    const std::size_t oh = h - 2, ow = w - 2;
    const Scalar *src = cols.data();
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            for (std::size_t dy = 0; dy < kConvKernel; ++dy) {
                Scalar *dst = out + ((oy + dy) * w + ox) * c;
                for (std::size_t i = 0; i < kConvKernel * c; ++i) {
                    dst[i] += src[i];
                }
                src += kConvKernel * c;
            }
        }
    }
}

template <typename Derived>
void relu_inplace(Eigen::MatrixBase<Derived> &m) {
    m = m.cwiseMax(typename Derived::Scalar(0));
}

} // namespace

// ---- spec -------------------------------------------------------------------

std::vector<SampleShape> ModelSpec::layer_shapes() const {
    if (input.size() == 0) {
        throw DimensionError("model input shape is empty");
    }
    std::vector<SampleShape> shapes;
    SampleShape s = input;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string where = "layer " + std::to_string(i) + ": ";
        std::visit(overloaded{
                       [&](const Conv2D &l) {
                           if (s.flat) throw DimensionError(where + "Conv2D after Flatten");
                           if (s.h < 3 || s.w < 3) throw DimensionError(where + "Conv2D input below 3x3");
                           if (l.out_channels == 0) throw ValidationError(where + "Conv2D with 0 filters");
                           s = {s.h - 2, s.w - 2, l.out_channels, false};
                       },
                       [&](const MaxPool2 &) {
                           if (s.flat) throw DimensionError(where + "MaxPool2 after Flatten");
                           if (s.h < 2 || s.w < 2) throw DimensionError(where + "MaxPool2 input below 2x2");
                           s = {s.h / 2, s.w / 2, s.c, false};
                       },
                       [&](const Dropout &l) {
                           if (!(l.rate >= 0.0 && l.rate < 1.0))
                               throw ValidationError(where + "dropout rate must lie in [0, 1)");
                       },
                       [&](const Flatten &) { s = {1, 1, s.size(), true}; },
                       [&](const Dense &l) {
                           if (l.units == 0) throw ValidationError(where + "Dense with 0 units");
                           s = {1, 1, l.units, true};
                       },
                   },
                   layers[i]);
        shapes.push_back(s);
    }
    if (layers.empty()) {
        throw ValidationError("model has no layers");
    }
    const auto *last = std::get_if<Dense>(&layers.back());
    if (!last || last->activation != Activation::None) {
        throw ValidationError("final layer must be Dense without activation (logits)");
    }
    return shapes;
}

std::size_t ModelSpec::n_classes() const {
    const auto *last = layers.empty() ? nullptr : std::get_if<Dense>(&layers.back());
    return last ? last->units : 0;
}

std::string ModelSpec::describe() const {
    std::ostringstream out;
    out << "input(" << input.h << "x" << input.w << "x" << input.c << ")";
    for (const auto &l : layers) {
        out << " -> ";
        std::visit(overloaded{
                       [&](const Conv2D &c) { out << "conv3x3(" << c.out_channels << (c.activation == Activation::Relu ? ",relu)" : ")"); },
                       [&](const MaxPool2 &) { out << "maxpool2"; },
                       [&](const Dropout &d) { out << "dropout(" << d.rate << ")"; },
                       [&](const Flatten &) { out << "flatten"; },
                       [&](const Dense &d) { out << "dense(" << d.units << (d.activation == Activation::Relu ? ",relu)" : ")"); },
                   },
                   l);
    }
    return out.str();
}

ModelSpec default_architecture(SampleShape input, std::size_t n_classes) {
    ModelSpec spec{input,
                   {Conv2D{32}, MaxPool2{}, Conv2D{64}, MaxPool2{}, Dropout{0.25}, Flatten{},
                    Dense{128, Activation::Relu}, Dropout{0.5}, Dense{n_classes, Activation::None}}};
    spec.layer_shapes();
    return spec;
}

// ---- kernels ----------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                              const Vector<Scalar> &bias, Activation act) {
    require_rank(input, 4, "conv2d");
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    const auto f = static_cast<std::size_t>(bias.size());
    if (h < 3 || w < 3) {
        throw DimensionError("conv2d: input " + dims_str(input.shape) + " smaller than 3x3");
    }
    if (static_cast<std::size_t>(weights.size()) != kConvKernel * kConvKernel * c * f) {
        throw DimensionError("conv2d: weights have " + std::to_string(weights.size()) +
                             " entries, need 3*3*" + std::to_string(c) + "*" + std::to_string(f));
    }
    const std::size_t oh = h - 2, ow = w - 2;
    Tensor<Scalar> out({n, oh, ow, f});
    const Eigen::Map<const RowMatrix<Scalar>> wm(weights.data(), static_cast<Eigen::Index>(9 * c),
                                                 static_cast<Eigen::Index>(f));
    RowMatrix<Scalar> cols;
    for (std::size_t s = 0; s < n; ++s) {
        im2col(input.sample(s), h, w, c, cols);
        Eigen::Map<RowMatrix<Scalar>> o(out.sample(s), static_cast<Eigen::Index>(oh * ow),
                                        static_cast<Eigen::Index>(f));
        o.noalias() = cols * wm;
        o.rowwise() += bias.transpose();
        if (act == Activation::Relu) {
            relu_inplace(o);
        }
    }
    return out;
}

template <typename Scalar>
void conv2d_backward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                     const Tensor<Scalar> &output, const Tensor<Scalar> &grad_output, Activation act,
                     Vector<Scalar> &grad_w, Vector<Scalar> &grad_b, Tensor<Scalar> *grad_input) {
    require_rank(input, 4, "conv2d_backward");
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    const std::size_t f = output.shape[3], rows = (h - 2) * (w - 2), k = 9 * c;
    if (grad_output.shape != output.shape || grad_w.size() != weights.size() ||
        static_cast<std::size_t>(grad_b.size()) != f) {
        throw DimensionError("conv2d_backward: gradient shapes do not match");
    }
    const Eigen::Map<const RowMatrix<Scalar>> wm(weights.data(), static_cast<Eigen::Index>(k),
                                                 static_cast<Eigen::Index>(f));
    Eigen::Map<RowMatrix<Scalar>> gw(grad_w.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f));
    if (grad_input) {
        *grad_input = Tensor<Scalar>(input.shape);
    }
    RowMatrix<Scalar> cols, g, dcols;
    for (std::size_t s = 0; s < n; ++s) {
        const Eigen::Map<const RowMatrix<Scalar>> go(grad_output.sample(s), static_cast<Eigen::Index>(rows),
                                                     static_cast<Eigen::Index>(f));
        if (act == Activation::Relu) {
            const Eigen::Map<const RowMatrix<Scalar>> o(output.sample(s), static_cast<Eigen::Index>(rows),
                                                        static_cast<Eigen::Index>(f));
            g = (o.array() > Scalar(0)).select(go, Scalar(0));
        } else {
            g = go;
        }
        im2col(input.sample(s), h, w, c, cols);
        gw.noalias() += cols.transpose() * g;
        grad_b.noalias() += g.colwise().sum().transpose();
        if (grad_input) {
            dcols.noalias() = g * wm.transpose();
            col2im_add(dcols, h, w, c, grad_input->sample(s));
        }
    }
}

template <typename Scalar>
PoolResult<Scalar> maxpool2_forward(const Tensor<Scalar> &input) {
    require_rank(input, 4, "maxpool2");
    const std::size_t n = input.shape[0], h = input.shape[1], w = input.shape[2], c = input.shape[3];
    if (h < 2 || w < 2) {
        throw DimensionError("maxpool2: input " + dims_str(input.shape) + " smaller than 2x2");
    }
    const std::size_t oh = h / 2, ow = w / 2;
    PoolResult<Scalar> r{Tensor<Scalar>({n, oh, ow, c}), {}};
    r.argmax.resize(n * oh * ow * c);
    const Scalar *in = input.values.data();
    Scalar *out = r.output.values.data();
    std::size_t o = 0;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                for (std::size_t ch = 0; ch < c; ++ch, ++o) {
                    std::size_t best = ((s * h + 2 * oy) * w + 2 * ox) * c + ch;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = ((s * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if (in[idx] > in[best]) {
                                best = idx;
                            }
                        }
                    }
                    out[o] = in[best];
                    r.argmax[o] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
    return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Tensor<Scalar> &grad_output, std::span<const std::uint32_t> argmax,
                                 const std::vector<std::size_t> &input_shape) {
    if (static_cast<std::size_t>(grad_output.values.size()) != argmax.size()) {
        throw DimensionError("maxpool2_backward: mask size mismatch");
    }
    Tensor<Scalar> g(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        g.values[argmax[i]] += grad_output.values[static_cast<Eigen::Index>(i)];
    }
    return g;
}

template <typename Scalar>
DropoutResult<Scalar> dropout(const Tensor<Scalar> &input, double rate, std::uint64_t seed, bool active) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ValidationError("dropout rate must lie in [0, 1)");
    }
    if (!active || rate == 0.0) {
        return {input, {}};
    }
    Xoshiro256pp rng(seed);
    const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
    DropoutResult<Scalar> r{input, Vector<Scalar>(input.values.size())};
    for (Eigen::Index i = 0; i < r.mask.size(); ++i) {
        r.mask[i] = rng.uniform() < rate ? Scalar(0) : keep_scale;
    }
    r.output.values.array() *= r.mask.array();
    return r;
}

template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                             const Vector<Scalar> &bias, Activation act) {
    const std::size_t n = input.batch(), fin = input.sample_size();
    const auto fout = static_cast<std::size_t>(bias.size());
    if (static_cast<std::size_t>(weights.size()) != fin * fout) {
        throw DimensionError("dense: weights have " + std::to_string(weights.size()) + " entries, need " +
                             std::to_string(fin) + "*" + std::to_string(fout));
    }
    const Eigen::Map<const RowMatrix<Scalar>> wm(weights.data(), static_cast<Eigen::Index>(fin),
                                                 static_cast<Eigen::Index>(fout));
    Tensor<Scalar> out({n, fout});
    auto o = out.rows();
    o.noalias() = input.rows() * wm;
    o.rowwise() += bias.transpose();
    if (act == Activation::Relu) {
        relu_inplace(o);
    }
    return out;
}

template <typename Scalar>
void dense_backward(const Tensor<Scalar> &input, const Vector<Scalar> &weights,
                    const Tensor<Scalar> &output, const Tensor<Scalar> &grad_output, Activation act,
                    Vector<Scalar> &grad_w, Vector<Scalar> &grad_b, Tensor<Scalar> *grad_input) {
    const std::size_t fin = input.sample_size(), fout = output.sample_size();
    if (grad_output.values.size() != output.values.size() || grad_w.size() != weights.size() ||
        static_cast<std::size_t>(grad_b.size()) != fout) {
        throw DimensionError("dense_backward: gradient shapes do not match");
    }
    RowMatrix<Scalar> g = grad_output.rows();
    if (act == Activation::Relu) {
        g = (output.rows().array() > Scalar(0)).select(g, Scalar(0));
    }
    Eigen::Map<RowMatrix<Scalar>> gw(grad_w.data(), static_cast<Eigen::Index>(fin), static_cast<Eigen::Index>(fout));
    gw.noalias() += input.rows().transpose() * g;
    grad_b.noalias() += g.colwise().sum().transpose();
    if (grad_input) {
        *grad_input = Tensor<Scalar>(input.shape);
        const Eigen::Map<const RowMatrix<Scalar>> wm(weights.data(), static_cast<Eigen::Index>(fin),
                                                     static_cast<Eigen::Index>(fout));
        grad_input->rows().noalias() = g * wm.transpose();
    }
}

template <typename Scalar>
RowMatrix<Scalar> softmax(const RowMatrix<Scalar> &logits) {
    RowMatrix<Scalar> p = logits;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        p.row(r).array() -= p.row(r).maxCoeff();
        p.row(r) = p.row(r).array().exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const RowMatrix<Scalar> &logits, const RowMatrix<Scalar> &onehot) {
    if (logits.rows() != onehot.rows() || logits.cols() != onehot.cols()) {
        throw DimensionError("cross-entropy: logits and labels differ in shape");
    }
    const Eigen::Index n = logits.rows();
    LossResult<Scalar> r;
    r.grad.resize(n, logits.cols());
    if (n == 0) {
        return r;
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index hot = -1;
        for (Eigen::Index k = 0; k < onehot.cols(); ++k) {
            const Scalar v = onehot(i, k);
            if (v == Scalar(1) && hot < 0) {
                hot = k;
            } else if (v != Scalar(0)) {
                throw ValidationError("cross-entropy: row " + std::to_string(i) + " is not one-hot");
            }
        }
        if (hot < 0) {
            throw ValidationError("cross-entropy: row " + std::to_string(i) + " is not one-hot");
        }
        const Scalar m = logits.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index k = 0; k < logits.cols(); ++k) {
            sum += std::exp(static_cast<double>(logits(i, k) - m));
        }
        const double lse = std::log(sum) + static_cast<double>(m);
        total += lse - static_cast<double>(logits(i, hot));
        for (Eigen::Index k = 0; k < logits.cols(); ++k) {
            const double p = std::exp(static_cast<double>(logits(i, k)) - lse);
            r.grad(i, k) = static_cast<Scalar>((p - static_cast<double>(onehot(i, k))) / static_cast<double>(n));
        }
    }
    r.loss = total / static_cast<double>(n);
    return r;
}

template <typename Scalar>
std::vector<std::size_t> argmax_rows(const RowMatrix<Scalar> &logits) {
    std::vector<std::size_t> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < logits.cols(); ++k) {
            if (logits(i, k) > logits(i, best)) {
                best = k;
            }
        }
        out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
    }
    return out;
}

template <typename Scalar>
void adam_step(Param<Scalar> &p, const AdamConfig &config) {
    if (p.grad.size() != p.value.size() || p.m.size() != p.value.size() || p.v.size() != p.value.size()) {
        throw DimensionError("adam: gradient/moment shapes do not match parameter");
    }
    ++p.t;
    const auto b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
    p.m = b1 * p.m + (Scalar(1) - b1) * p.grad;
    p.v = b2 * p.v + (Scalar(1) - b2) * p.grad.cwiseAbs2();
    const double t = static_cast<double>(p.t);
    const auto c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(config.beta1, t)));
    const auto c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(config.beta2, t)));
    const auto lr = static_cast<Scalar>(config.learning_rate), eps = static_cast<Scalar>(config.eps);
    p.value.array() -= lr * (p.m.array() * c1) / ((p.v.array() * c2).sqrt() + eps);
}

// ---- network ----------------------------------------------------------------

template <typename Scalar>
Network<Scalar>::Network(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
    const auto shapes = spec_.layer_shapes();
    SampleShape in = spec_.input;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        Layer layer{spec_.layers[i], in, shapes[i], -1, -1, {}, {}, {}, {}};
        std::size_t fan_in = 0;
        std::vector<std::size_t> wshape;
        std::size_t units = 0;
        if (const auto *c = std::get_if<Conv2D>(&layer.spec)) {
            fan_in = kConvKernel * kConvKernel * in.c;
            units = c->out_channels;
            wshape = {kConvKernel, kConvKernel, in.c, units};
        } else if (const auto *d = std::get_if<Dense>(&layer.spec)) {
            fan_in = in.size();
            units = d->units;
            wshape = {fan_in, units};
        }
        if (units) {
            Param<Scalar> w(wshape), b({units});
            Xoshiro256pp rng(derive_seed(init_seed, i));
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (Eigen::Index k = 0; k < w.value.size(); ++k) {
                w.value[k] = static_cast<Scalar>(rng.uniform(-limit, limit));
            }
            layer.weight = static_cast<int>(params_.size());
            params_.push_back(std::move(w));
            layer.bias = static_cast<int>(params_.size());
            params_.push_back(std::move(b));
        }
        layers_.push_back(std::move(layer));
        in = shapes[i];
    }
}

template <typename Scalar>
Tensor<Scalar> Network<Scalar>::run(const Tensor<Scalar> &input, bool training, std::uint64_t dropout_seed,
                                    std::vector<Layer> &cache) const {
    const SampleShape &in = spec_.input;
    if (input.sample_size() != in.size() ||
        (input.shape.size() == 4 && (input.shape[1] != in.h || input.shape[2] != in.w || input.shape[3] != in.c))) {
        throw DimensionError("network input " + dims_str(input.shape) + " does not match model input " +
                             std::to_string(in.h) + "x" + std::to_string(in.w) + "x" + std::to_string(in.c));
    }
    Tensor<Scalar> x = input;
    if (x.shape.size() != 4 && !in.flat) {
        x.shape = {x.batch(), in.h, in.w, in.c};
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer &layer = layers_[i];
        const auto *wp = layer.weight >= 0 ? &params_[static_cast<std::size_t>(layer.weight)].value : nullptr;
        const auto *bp = layer.bias >= 0 ? &params_[static_cast<std::size_t>(layer.bias)].value : nullptr;
        std::visit(overloaded{
                       [&](const Conv2D &c) { x = conv2d_forward(x, *wp, *bp, c.activation); },
                       [&](const MaxPool2 &) {
                           auto r = maxpool2_forward(x);
                           x = std::move(r.output);
                           if (training) cache[i].argmax = std::move(r.argmax);
                       },
                       [&](const Dropout &d) {
                           auto r = dropout(x, d.rate, derive_seed(dropout_seed, i), training);
                           x = std::move(r.output);
                           if (training) cache[i].mask = std::move(r.mask);
                       },
                       [&](const Flatten &) { x.shape = {x.batch(), x.sample_size()}; },
                       [&](const Dense &d) { x = dense_forward(x, *wp, *bp, d.activation); },
                   },
                   layer.spec);
        if (training) {
            cache[i].output = x;
        }
    }
    return x;
}

template <typename Scalar>
RowMatrix<Scalar> Network<Scalar>::forward(const Tensor<Scalar> &input, bool training, std::uint64_t dropout_seed) {
    if (training) {
        input_cache_ = input;
        if (input_cache_.shape.size() != 4 && !spec_.input.flat) {
            input_cache_.shape = {input.batch(), spec_.input.h, spec_.input.w, spec_.input.c};
        }
    }
    const Tensor<Scalar> out = run(input, training, dropout_seed, layers_);
    return out.rows();
}

template <typename Scalar>
RowMatrix<Scalar> Network<Scalar>::infer(const Tensor<Scalar> &input) const {
    std::vector<Layer> unused;
    return run(input, false, 0, unused).rows();
}

template <typename Scalar>
void Network<Scalar>::backward(const RowMatrix<Scalar> &grad_logits) {
    if (layers_.empty() || layers_.back().output.batch() != static_cast<std::size_t>(grad_logits.rows())) {
        throw DimensionError("backward: no matching training forward pass");
    }
    zero_grad();
    Tensor<Scalar> g(layers_.back().output.shape);
    g.rows() = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        Layer &layer = layers_[i];
        const Tensor<Scalar> &in = i == 0 ? input_cache_ : layers_[i - 1].output;
        Tensor<Scalar> gin;
        Tensor<Scalar> *gin_ptr = i == 0 ? nullptr : &gin;
        std::visit(overloaded{
                       [&](const Conv2D &c) {
                           auto &w = params_[static_cast<std::size_t>(layer.weight)];
                           auto &b = params_[static_cast<std::size_t>(layer.bias)];
                           conv2d_backward(in, w.value, layer.output, g, c.activation, w.grad, b.grad, gin_ptr);
                       },
                       [&](const MaxPool2 &) { gin = maxpool2_backward(g, layer.argmax, in.shape); },
                       [&](const Dropout &) {
                           gin = std::move(g);
                           if (layer.mask.size()) gin.values.array() *= layer.mask.array();
                       },
                       [&](const Flatten &) {
                           gin = std::move(g);
                           gin.shape = in.shape;
                       },
                       [&](const Dense &d) {
                           auto &w = params_[static_cast<std::size_t>(layer.weight)];
                           auto &b = params_[static_cast<std::size_t>(layer.bias)];
                           dense_backward(in, w.value, layer.output, g, d.activation, w.grad, b.grad, gin_ptr);
                       },
                   },
                   layer.spec);
        g = std::move(gin);
    }
}

template <typename Scalar>
std::vector<Param<Scalar> *> Network<Scalar>::params() {
    std::vector<Param<Scalar> *> out;
    for (auto &p : params_) {
        out.push_back(&p);
    }
    return out;
}

template <typename Scalar>
std::vector<const Param<Scalar> *> Network<Scalar>::params() const {
    std::vector<const Param<Scalar> *> out;
    for (const auto &p : params_) {
        out.push_back(&p);
    }
    return out;
}

template <typename Scalar>
void Network<Scalar>::zero_grad() {
    for (auto &p : params_) {
        p.grad.setZero();
    }
}

template <typename Scalar>
std::vector<std::size_t> predict(const Network<Scalar> &net, const Tensor<Scalar> &inputs, std::size_t chunk) {
    std::vector<std::size_t> out;
    out.reserve(inputs.batch());
    const std::size_t n = inputs.batch(), per = inputs.sample_size();
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t len = std::min(chunk, n - start);
        auto dims = inputs.shape;
        dims[0] = len;
        Tensor<Scalar> part(dims);
        part.values = inputs.values.segment(static_cast<Eigen::Index>(start * per), static_cast<Eigen::Index>(len * per));
        const auto p = argmax_rows<Scalar>(net.infer(part));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

// ---- training ---------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw ValidationError("batch_size must be >= 1");
    }
    if (epochs < 1) {
        throw ValidationError("epochs must be >= 1");
    }
    if (!(adam.learning_rate > 0.0)) {
        throw ValidationError("learning rate must be positive");
    }
}

namespace {

template <typename Scalar>
RowMatrix<Scalar> onehot_rows(std::span<const std::size_t> labels, std::size_t k) {
    RowMatrix<Scalar> m = RowMatrix<Scalar>::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= k) {
            throw ValidationError("label " + std::to_string(labels[i]) + " out of range for " +
                                  std::to_string(k) + " classes");
        }
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = Scalar(1);
    }
    return m;
}

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar> &src, std::span<const std::size_t> idx) {
    auto dims = src.shape;
    dims[0] = idx.size();
    Tensor<Scalar> out(dims);
    const std::size_t per = src.sample_size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::memcpy(out.sample(i), src.sample(idx[i]), per * sizeof(Scalar));
    }
    return out;
}

template <typename Scalar>
void check_dataset(const ModelSpec &spec, const Dataset<Scalar> &d, const char *what) {
    if (d.inputs.batch() != d.labels.size()) {
        throw DimensionError(std::string(what) + ": " + std::to_string(d.inputs.batch()) + " inputs but " +
                             std::to_string(d.labels.size()) + " labels");
    }
    if (d.inputs.batch() && d.inputs.sample_size() != spec.input.size()) {
        throw DimensionError(std::string(what) + ": sample size " + std::to_string(d.inputs.sample_size()) +
                             " does not match model input " + std::to_string(spec.input.size()));
    }
}

} // namespace

template <typename Scalar>
Evaluation evaluate(const Network<Scalar> &net, const Dataset<Scalar> &data, std::size_t chunk) {
    Evaluation e;
    const std::size_t n = data.inputs.batch();
    if (n == 0) {
        return e;
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t len = std::min(chunk, n - start);
        idx.resize(len);
        std::iota(idx.begin(), idx.end(), start);
        const auto logits = net.infer(gather(data.inputs, idx));
        const std::span<const std::size_t> labels(data.labels.data() + start, len);
        const auto loss = softmax_cross_entropy<Scalar>(logits, onehot_rows<Scalar>(labels, net.n_classes()));
        loss_sum += loss.loss * static_cast<double>(len);
        const auto pred = argmax_rows<Scalar>(logits);
        for (std::size_t i = 0; i < len; ++i) {
            correct += pred[i] == labels[i];
        }
        e.predictions.insert(e.predictions.end(), pred.begin(), pred.end());
    }
    e.loss = loss_sum / static_cast<double>(n);
    e.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return e;
}

template <typename Scalar>
TrainResult<Scalar> train(const ModelSpec &spec, const Dataset<Scalar> &train_set, const Dataset<Scalar> &val_set,
                          const TrainConfig &config, const EpochCallback &on_epoch) {
    config.validate();
    if (train_set.inputs.batch() == 0) {
        throw ValidationError("training set is empty");
    }
    check_dataset(spec, train_set, "training set");
    check_dataset(spec, val_set, "validation set");

    TrainResult<Scalar> result{Network<Scalar>(spec, derive_seed(config.seed, 0x1417)), {}};
    Network<Scalar> &net = result.model;
    const std::size_t n = train_set.inputs.batch(), k = net.n_classes();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::uint64_t step = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Xoshiro256pp shuffle_rng(derive_seed(config.seed, 0x5000000000ULL + epoch));
        shuffle(std::span(order), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(config.batch_size, n - start));
            std::vector<std::size_t> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                labels[i] = train_set.labels[idx[i]];
            }
            const auto logits = net.forward(gather(train_set.inputs, idx), config.dropout_active,
                                            derive_seed(config.seed, 0xd70900000000ULL + step));
            const auto loss = softmax_cross_entropy<Scalar>(logits, onehot_rows<Scalar>(labels, k));
            net.backward(loss.grad);
            for (auto *p : net.params()) {
                adam_step(*p, config.adam);
            }
            loss_sum += loss.loss * static_cast<double>(idx.size());
            const auto pred = argmax_rows<Scalar>(logits);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                correct += pred[i] == labels[i];
            }
            ++step;
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(n);
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        const Evaluation val = evaluate(net, val_set);
        stats.val_loss = val.loss;
        stats.val_acc = val.accuracy;
        result.history.push_back(stats);
        if (on_epoch) {
            on_epoch(stats);
        }
    }
    return result;
}

std::string history_to_csv(std::span<const EpochStats> history) {
    std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char line[160];
    for (const auto &h : history) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%.9g\n", h.epoch, h.train_loss, h.train_acc,
                      h.val_loss, h.val_acc);
        out += line;
    }
    return out;
}

// ---- model file ---------------------------------------------------------------

namespace {

enum class LayerTag : std::uint8_t { Conv2D = 0, MaxPool2 = 1, Dropout = 2, Flatten = 3, Dense = 4 };

Activation read_activation(ByteReader &r) {
    const auto a = r.u8();
    if (a > 1) {
        throw DecodeError("model file: unknown activation " + std::to_string(a));
    }
    return static_cast<Activation>(a);
}

} // namespace

std::vector<std::byte> encode_model(const Network<float> &net, const ModelMetadata &meta) {
    ByteWriter w;
    w.magic("TSQM");
    w.u32(kModelVersion);
    w.u64(meta.config_hash);
    w.string(meta.config_text);
    const ModelSpec &spec = net.spec();
    w.u32(static_cast<std::uint32_t>(spec.input.h));
    w.u32(static_cast<std::uint32_t>(spec.input.w));
    w.u32(static_cast<std::uint32_t>(spec.input.c));
    w.u8(spec.input.flat ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(spec.layers.size()));
    for (const auto &l : spec.layers) {
        std::visit(overloaded{
                       [&](const Conv2D &c) {
                           w.u8(static_cast<std::uint8_t>(LayerTag::Conv2D));
                           w.u32(static_cast<std::uint32_t>(c.out_channels));
                           w.u32(static_cast<std::uint32_t>(kConvKernel));
                           w.u8(static_cast<std::uint8_t>(c.activation));
                       },
                       [&](const MaxPool2 &) { w.u8(static_cast<std::uint8_t>(LayerTag::MaxPool2)); },
                       [&](const Dropout &d) {
                           w.u8(static_cast<std::uint8_t>(LayerTag::Dropout));
                           w.f32(static_cast<float>(d.rate));
                       },
                       [&](const Flatten &) { w.u8(static_cast<std::uint8_t>(LayerTag::Flatten)); },
                       [&](const Dense &d) {
                           w.u8(static_cast<std::uint8_t>(LayerTag::Dense));
                           w.u32(static_cast<std::uint32_t>(d.units));
                           w.u8(static_cast<std::uint8_t>(d.activation));
                       },
                   },
                   l);
    }
    for (const auto *p : net.params()) {
        w.f32s(std::span(p->value.data(), static_cast<std::size_t>(p->value.size())));
    }
    return w.take();
}

LoadedModel decode_model(std::span<const std::byte> bytes) {
    ByteReader r(bytes, "model file");
    r.expect_magic("TSQM");
    const auto version = r.u32();
    if (version != kModelVersion) {
        throw DecodeError("model file: unsupported version " + std::to_string(version));
    }
    ModelMetadata meta;
    meta.config_hash = r.u64();
    meta.config_text = r.string();
    ModelSpec spec;
    spec.input.h = r.u32();
    spec.input.w = r.u32();
    spec.input.c = r.u32();
    spec.input.flat = r.u8() != 0;
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto tag = static_cast<LayerTag>(r.u8());
        switch (tag) {
        case LayerTag::Conv2D: {
            Conv2D c;
            c.out_channels = r.u32();
            if (r.u32() != kConvKernel) {
                throw DecodeError("model file: only 3x3 kernels are supported");
            }
            c.activation = read_activation(r);
            spec.layers.emplace_back(c);
            break;
        }
        case LayerTag::MaxPool2:
            spec.layers.emplace_back(MaxPool2{});
            break;
        case LayerTag::Dropout:
            spec.layers.emplace_back(Dropout{static_cast<double>(r.f32())});
            break;
        case LayerTag::Flatten:
            spec.layers.emplace_back(Flatten{});
            break;
        case LayerTag::Dense: {
            Dense d;
            d.units = r.u32();
            d.activation = read_activation(r);
            spec.layers.emplace_back(d);
            break;
        }
        default:
            throw DecodeError("model file: unknown layer tag " + std::to_string(static_cast<int>(tag)));
        }
    }
    LoadedModel out{Network<float>(std::move(spec), 0), std::move(meta)};
    for (auto *p : out.network.params()) {
        r.f32s(std::span(p->value.data(), static_cast<std::size_t>(p->value.size())));
    }
    if (r.remaining() != 0) {
        throw DecodeError("model file: " + std::to_string(r.remaining()) + " trailing bytes");
    }
    return out;
}

void save_model(const std::filesystem::path &path, const Network<float> &net, const ModelMetadata &meta) {
    write_file_atomic(path, encode_model(net, meta));
}

LoadedModel load_model(const std::filesystem::path &path) {
    return decode_model(read_file_bytes(path));
}

// ---- instantiations -------------------------------------------------------------

#define TSQ_NN_INSTANTIATE(S)                                                                                   \
    template Tensor<S> conv2d_forward(const Tensor<S> &, const Vector<S> &, const Vector<S> &, Activation);     \
    template void conv2d_backward(const Tensor<S> &, const Vector<S> &, const Tensor<S> &, const Tensor<S> &,   \
                                  Activation, Vector<S> &, Vector<S> &, Tensor<S> *);                           \
    template PoolResult<S> maxpool2_forward(const Tensor<S> &);                                                 \
    template Tensor<S> maxpool2_backward(const Tensor<S> &, std::span<const std::uint32_t>,                     \
                                         const std::vector<std::size_t> &);                                     \
    template DropoutResult<S> dropout(const Tensor<S> &, double, std::uint64_t, bool);                          \
    template Tensor<S> dense_forward(const Tensor<S> &, const Vector<S> &, const Vector<S> &, Activation);      \
    template void dense_backward(const Tensor<S> &, const Vector<S> &, const Tensor<S> &, const Tensor<S> &,    \
                                 Activation, Vector<S> &, Vector<S> &, Tensor<S> *);                            \
    template LossResult<S> softmax_cross_entropy(const RowMatrix<S> &, const RowMatrix<S> &);                   \
    template RowMatrix<S> softmax(const RowMatrix<S> &);                                                        \
    template std::vector<std::size_t> argmax_rows(const RowMatrix<S> &);                                        \
    template void adam_step(Param<S> &, const AdamConfig &);                                                    \
    template class Network<S>;                                                                                  \
    template std::vector<std::size_t> predict(const Network<S> &, const Tensor<S> &, std::size_t);              \
    template Evaluation evaluate(const Network<S> &, const Dataset<S> &, std::size_t);                          \
    template TrainResult<S> train(const ModelSpec &, const Dataset<S> &, const Dataset<S> &, const TrainConfig &, \
                                  const EpochCallback &);

TSQ_NN_INSTANTIATE(float)
TSQ_NN_INSTANTIATE(double)

} // namespace tsq::nn
