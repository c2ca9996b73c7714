#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tsq/errors.hpp"
#include "tsq/nn.hpp"

using namespace tsq;
using namespace tsq::nn;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, std::mt19937_64 &gen) {
    Tensor<double> t(std::move(shape));
    std::uniform_real_distribution<double> u(-1, 1);
    for (Eigen::Index i = 0; i < t.values.size(); ++i) {
        t.values[i] = u(gen);
    }
    return t;
}

Vector<double> vec(std::initializer_list<double> v) {
    Vector<double> out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) {
        out[i++] = x;
    }
    return out;
}

RowMatrix<double> onehot_rows(const std::vector<std::size_t> &labels, std::size_t k) {
    RowMatrix<double> m = RowMatrix<double>::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = 1;
    }
    return m;
}

} // namespace

TEST_CASE("conv2d forward") {
    Tensor<double> ones({1, 3, 3, 1});
    ones.values.setOnes();
    const auto out = conv2d_forward(ones, Vector<double>::Ones(9).eval(), Vector<double>::Zero(1).eval());
    REQUIRE(out.shape == std::vector<std::size_t>{1, 1, 1, 1});
    REQUIRE(out.values[0] == 9.0);

    std::mt19937_64 gen(1);
    const auto x = random_tensor({2, 5, 6, 3}, gen);
    const auto zero = conv2d_forward(x, Vector<double>::Zero(27 * 4).eval(), Vector<double>::Zero(4).eval());
    REQUIRE(zero.shape == std::vector<std::size_t>{2, 3, 4, 4});
    REQUIRE(zero.values.isZero());

    // Centre tap of a single-channel 3x3 kernel reproduces the centre crop.
    const auto img = random_tensor({1, 4, 4, 1}, gen);
    Vector<double> centre = Vector<double>::Zero(9);
    centre[4] = 1.0;
    const auto crop = conv2d_forward(img, centre, Vector<double>::Zero(1).eval(), Activation::None);
    for (std::size_t y = 0; y < 2; ++y) {
        for (std::size_t x2 = 0; x2 < 2; ++x2) {
            REQUIRE(crop.values[static_cast<Eigen::Index>(y * 2 + x2)] ==
                    img.values[static_cast<Eigen::Index>((y + 1) * 4 + x2 + 1)]);
        }
    }

    // Direct summation oracle, multi-channel, with relu.
    const std::size_t c = 3, f = 2;
    Vector<double> w = random_tensor({9 * c * f}, gen).values, b = random_tensor({f}, gen).values;
    const auto y = conv2d_forward(x, w, b);
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t oy = 0; oy < 3; ++oy) {
            for (std::size_t ox = 0; ox < 4; ++ox) {
                for (std::size_t ff = 0; ff < f; ++ff) {
                    double s = b[static_cast<Eigen::Index>(ff)];
                    for (std::size_t dy = 0; dy < 3; ++dy) {
                        for (std::size_t dx = 0; dx < 3; ++dx) {
                            for (std::size_t cc = 0; cc < c; ++cc) {
                                s += x.values[static_cast<Eigen::Index>(((n * 5 + oy + dy) * 6 + ox + dx) * c + cc)] *
                                     w[static_cast<Eigen::Index>(((dy * 3 + dx) * c + cc) * f + ff)];
                            }
                        }
                    }
                    const double got = y.values[static_cast<Eigen::Index>(((n * 3 + oy) * 4 + ox) * f + ff)];
                    REQUIRE_THAT(got, WithinAbs(std::max(0.0, s), 1e-12));
                }
            }
        }
    }
    REQUIRE_THROWS_AS(conv2d_forward(x, Vector<double>::Zero(5).eval(), Vector<double>::Zero(4).eval()),
                      DimensionError);
    REQUIRE_THROWS_AS(conv2d_forward(random_tensor({1, 2, 5, 1}, gen), centre, Vector<double>::Zero(1).eval()),
                      DimensionError);
}

TEST_CASE("max pooling") {
    Tensor<double> w({1, 2, 2, 1});
    w.values << 1, 2, 3, 4;
    auto r = maxpool2_forward(w);
    REQUIRE(r.output.values[0] == 4.0);
    REQUIRE(r.argmax[0] == 3);

    Tensor<double> flat({1, 4, 4, 2});
    flat.values.setConstant(0.5);
    r = maxpool2_forward(flat);
    REQUIRE(r.output.shape == std::vector<std::size_t>{1, 2, 2, 2});
    REQUIRE((r.output.values.array() == 0.5).all());
    // Ties pick the window's first (top-left) element.
    REQUIRE(r.argmax[0] == 0);
    REQUIRE(r.argmax[1] == 1);
    REQUIRE(r.argmax[2] == 4);

    std::mt19937_64 gen(4);
    const auto x = random_tensor({3, 5, 7, 2}, gen);
    r = maxpool2_forward(x);
    REQUIRE(r.output.shape == std::vector<std::size_t>{3, 2, 3, 2});
    for (std::size_t n = 0; n < 3; ++n) {
        for (std::size_t oy = 0; oy < 2; ++oy) {
            for (std::size_t ox = 0; ox < 3; ++ox) {
                for (std::size_t c = 0; c < 2; ++c) {
                    double m = -1e9;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            m = std::max(m, x.values[static_cast<Eigen::Index>(
                                                ((n * 5 + 2 * oy + dy) * 7 + 2 * ox + dx) * 2 + c)]);
                        }
                    }
                    REQUIRE(r.output.values[static_cast<Eigen::Index>(((n * 2 + oy) * 3 + ox) * 2 + c)] == m);
                }
            }
        }
    }

    // Backward routes each gradient to its argmax.
    Tensor<double> g(r.output.shape);
    g.values.setOnes();
    const auto gi = maxpool2_backward(g, r.argmax, x.shape);
    REQUIRE(gi.values.sum() == static_cast<double>(g.values.size()));
    REQUIRE_THROWS_AS(maxpool2_forward(random_tensor({1, 1, 4, 1}, gen)), DimensionError);
}

TEST_CASE("dropout") {
    std::mt19937_64 gen(2);
    const auto x = random_tensor({4, 10}, gen);
    REQUIRE(dropout(x, 0.5, 1, false).output.values == x.values);
    REQUIRE(dropout(x, 0.0, 1, true).output.values == x.values);

    Tensor<float> big({1000, 1000});
    big.values.setOnes();
    const auto r = dropout(big, 0.5, 99, true);
    const double kept = (r.output.values.array() != 0.0f).cast<double>().mean();
    REQUIRE_THAT(kept, WithinAbs(0.5, 0.01));
    REQUIRE_THAT(static_cast<double>(r.output.values.cast<double>().mean()), WithinAbs(1.0, 0.01));
    REQUIRE(((r.output.values.array() == 0.0f) || (r.output.values.array() == 2.0f)).all());
    REQUIRE(dropout(big, 0.5, 99, true).output.values == r.output.values);
    REQUIRE_FALSE(dropout(big, 0.5, 100, true).output.values == r.output.values);
}

TEST_CASE("dense forward") {
    std::mt19937_64 gen(3);
    const auto x = random_tensor({5, 4}, gen);
    Vector<double> eye = Vector<double>::Zero(16);
    for (int i = 0; i < 4; ++i) {
        eye[i * 4 + i] = 1;
    }
    REQUIRE(dense_forward(x, eye, Vector<double>::Zero(4).eval()).values == x.values);

    const Tensor<double> zero({2, 4});
    const auto bias = dense_forward(zero, eye, vec({1, 2, 3, 4}));
    REQUIRE(bias.values == vec({1, 2, 3, 4, 1, 2, 3, 4}));

    // [[1,2,3],[4,5,6]] x [[1,0],[0,1],[1,1]] + [0.5,-1] = [[4.5,4],[10.5,10]]
    Tensor<double> a({2, 3});
    a.values << 1, 2, 3, 4, 5, 6;
    const auto y = dense_forward(a, vec({1, 0, 0, 1, 1, 1}), vec({0.5, -1}));
    REQUIRE(y.values == vec({4.5, 4, 10.5, 10}));
    const auto relu = dense_forward(a, vec({1, 0, 0, 1, 1, 1}), vec({-5, -20}), Activation::Relu);
    REQUIRE(relu.values == vec({0, 0, 5, 0}));
}

TEST_CASE("softmax cross-entropy") {
    RowMatrix<double> uniform = RowMatrix<double>::Zero(2, 43);
    auto r = softmax_cross_entropy(uniform, onehot_rows({0, 42}, 43));
    REQUIRE_THAT(r.loss, WithinAbs(std::log(43.0), 1e-12));
    REQUIRE_THAT(r.loss, WithinAbs(3.7612, 1e-4));
    for (Eigen::Index i = 0; i < 2; ++i) {
        REQUIRE_THAT(r.grad.row(i).sum(), WithinAbs(0.0, 1e-12));
    }

    RowMatrix<float> big = RowMatrix<float>::Zero(1, 5);
    big(0, 2) = 1000.0f;
    RowMatrix<float> oh = RowMatrix<float>::Zero(1, 5);
    oh(0, 2) = 1.0f;
    const auto s = softmax_cross_entropy(big, oh);
    REQUIRE(std::isfinite(s.loss));
    REQUIRE_THAT(s.loss, WithinAbs(0.0, 1e-6));
    REQUIRE(s.grad.allFinite());
    oh(0, 2) = 0.0f;
    oh(0, 0) = 1.0f;
    REQUIRE_THAT(softmax_cross_entropy(big, oh).loss, WithinRel(1000.0, 1e-6));

    std::mt19937_64 gen(5);
    const RowMatrix<double> logits = random_tensor({6, 7}, gen).rows() * 5.0;
    const RowMatrix<double> sm = softmax<double>(logits);
    for (Eigen::Index i = 0; i < 6; ++i) {
        REQUIRE_THAT(sm.row(i).sum(), WithinAbs(1.0, 1e-12));
    }
    r = softmax_cross_entropy<double>(logits, onehot_rows({0, 1, 2, 3, 4, 5}, 7));
    REQUIRE(r.loss >= 0.0);
    REQUIRE(((r.grad - (sm - onehot_rows({0, 1, 2, 3, 4, 5}, 7)) / 6.0).cwiseAbs().maxCoeff()) < 1e-15);

    RowMatrix<double> bad = RowMatrix<double>::Zero(1, 3);
    bad(0, 0) = bad(0, 1) = 1;
    REQUIRE_THROWS_AS(softmax_cross_entropy<double>(RowMatrix<double>::Zero(1, 3), bad), ValidationError);
}

TEST_CASE("adam") {
    Param<double> p({1});
    p.value[0] = 1.0;
    adam_step(p, AdamConfig{});
    REQUIRE(p.t == 1);
    REQUIRE(p.value[0] == 1.0);

    p.grad[0] = 1.0;
    Param<double> q({1});
    q.value[0] = 1.0;
    q.grad[0] = 1.0;
    adam_step(q, AdamConfig{});
    REQUIRE_THAT(q.value[0], WithinAbs(1.0 - 1e-3 / (1.0 + 1e-8), 1e-15));

    // Scalar recurrence oracle for a constant gradient.
    const AdamConfig cfg{};
    Param<double> s({1});
    double m = 0, v = 0, x = 0;
    const double g = 0.37;
    for (int t = 1; t <= 100; ++t) {
        s.grad[0] = g;
        const double before = s.value[0];
        adam_step(s, cfg);
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        const double mh = m / (1 - std::pow(cfg.beta1, t)), vh = v / (1 - std::pow(cfg.beta2, t));
        x -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.eps);
        REQUIRE_THAT(s.value[0], WithinAbs(x, 1e-14));
        const double step = std::abs(s.value[0] - before);
        REQUIRE(step <= cfg.learning_rate * (1 + 1e-6));
        if (t >= 50) {
            REQUIRE_THAT(step, WithinRel(cfg.learning_rate, 0.01));
        }
    }
    REQUIRE(s.v[0] >= 0.0);
}

TEST_CASE("architecture shapes") {
    const auto spec = default_architecture({64, 64, 1, false}, 43);
    const auto shapes = spec.layer_shapes();
    REQUIRE(shapes.front() == SampleShape{62, 62, 32, false});
    REQUIRE(shapes[1] == SampleShape{31, 31, 32, false});
    REQUIRE(shapes[2] == SampleShape{29, 29, 64, false});
    REQUIRE(shapes[3] == SampleShape{14, 14, 64, false});
    REQUIRE(shapes[5].flat);
    REQUIRE(shapes[5].size() == 14 * 14 * 64);
    REQUIRE(shapes.back().size() == 43);
    REQUIRE(spec.n_classes() == 43);
    const auto q = default_architecture({32, 32, 4, false}, 4).layer_shapes();
    REQUIRE(q[3] == SampleShape{6, 6, 64, false});

    ModelSpec bad{{8, 8, 1, false}, {Dense{3, Activation::Relu}}};
    REQUIRE_THROWS(bad.layer_shapes());
    ModelSpec too_small{{2, 2, 1, false}, {Conv2D{2}, Flatten{}, Dense{2}}};
    REQUIRE_THROWS_AS(too_small.layer_shapes(), DimensionError);
}

TEST_CASE("gradients match central differences in float64") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto r = testing::gradient_check(seed);
        INFO("seed " << seed << " worst param " << r.worst_param << "[" << r.worst_index << "]");
        REQUIRE(r.checked == 4 * 9 * 2 + 2 + 18 * 8 + 8 + 8 * 3 + 3);
        REQUIRE(r.max_rel_error < 1e-5);
    }
}

TEST_CASE("zero final layer blocks upstream gradients") {
    Network<double> net(testing::gradient_check_spec(), 4);
    auto params = net.params();
    params[params.size() - 2]->value.setZero();
    std::mt19937_64 gen(8);
    const auto x = random_tensor({2, 8, 8, 4}, gen);
    net.zero_grad();
    const auto logits = net.forward(x, true, 0);
    net.backward(softmax_cross_entropy(logits, onehot_rows({0, 1}, 3)).grad);
    for (std::size_t i = 0; i + 2 < params.size(); ++i) {
        REQUIRE(params[i]->grad.isZero());
    }
    REQUIRE_FALSE(params.back()->grad.isZero());
}

TEST_CASE("predict ties and argmax oracle") {
    REQUIRE(argmax_rows<double>(RowMatrix<double>::Zero(3, 5)) == std::vector<std::size_t>{0, 0, 0});
    std::mt19937_64 gen(9);
    const RowMatrix<double> m = random_tensor({1000, 7}, gen).rows();
    const auto got = argmax_rows<double>(m);
    for (Eigen::Index i = 0; i < 1000; ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < 7; ++k) {
            if (m(i, k) > m(i, best)) best = k;
        }
        REQUIRE(got[static_cast<std::size_t>(i)] == static_cast<std::size_t>(best));
    }
}

TEST_CASE("training overfits a small batch and is deterministic") {
    const ModelSpec spec{{8, 8, 1, false},
                         {Conv2D{4}, MaxPool2{}, Flatten{}, Dense{16, Activation::Relu}, Dense{4}}};
    std::mt19937_64 gen(10);
    Dataset<float> set{Tensor<float>({8, 8, 8, 1}), {0, 1, 2, 3, 0, 1, 2, 3}};
    std::uniform_real_distribution<float> u(0, 1);
    for (Eigen::Index i = 0; i < set.inputs.values.size(); ++i) {
        set.inputs.values[i] = u(gen);
    }
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.epochs = 300;
    cfg.adam.learning_rate = 1e-2;
    cfg.seed = 5;
    const auto a = train(spec, set, set, cfg);
    REQUIRE(a.history.size() == 300);
    REQUIRE(a.history.back().train_loss < 0.01);
    REQUIRE(a.history.back().train_loss < a.history.front().train_loss);
    REQUIRE(a.history.back().val_acc == 1.0);
    REQUIRE(predict(a.model, set.inputs) == set.labels);
    REQUIRE(predict(a.model, set.inputs) == predict(a.model, set.inputs));

    cfg.epochs = 20;
    const auto b1 = train(spec, set, set, cfg);
    const auto b2 = train(spec, set, set, cfg);
    REQUIRE(b1.history == b2.history);
    REQUIRE(encode_model(b1.model, {}) == encode_model(b2.model, {}));

    TrainConfig bad = cfg;
    bad.epochs = 0;
    REQUIRE_THROWS_AS(train(spec, set, set, bad), ValidationError);
    bad = cfg;
    bad.batch_size = 0;
    REQUIRE_THROWS_AS(train(spec, set, set, bad), ValidationError);
    REQUIRE_THROWS_AS(train(spec, Dataset<float>{Tensor<float>({0, 8, 8, 1}), {}}, set, cfg), ValidationError);
}

TEST_CASE("history csv") {
    const std::vector<EpochStats> h{{1, 1.5, 0.25, 1.25, 0.5}};
    REQUIRE(history_to_csv(h) == "epoch,train_loss,train_acc,val_loss,val_acc\n1,1.5,0.25,1.25,0.5\n");
}

TEST_CASE("model file round trip") {
    const auto spec = default_architecture({16, 16, 2, false}, 5);
    Network<float> net(spec, 77);
    const ModelMetadata meta{0xfeedULL, "command = train\nmodel = quanv\n"};
    const auto bytes = encode_model(net, meta);
    REQUIRE(static_cast<char>(bytes[0]) == 'T');
    REQUIRE(static_cast<char>(bytes[3]) == 'M');
    const auto back = decode_model(bytes);
    REQUIRE(back.metadata.config_hash == 0xfeedULL);
    REQUIRE(back.metadata.config_text == meta.config_text);
    REQUIRE(back.network.spec().input == spec.input);
    REQUIRE(back.network.spec().describe() == spec.describe());
    REQUIRE(encode_model(back.network, meta) == bytes);

    Tensor<float> x({3, 16, 16, 2});
    x.values.setConstant(0.25f);
    REQUIRE(back.network.infer(x) == net.infer(x));

    auto cut = bytes;
    cut.resize(cut.size() - 4);
    REQUIRE_THROWS_AS(decode_model(cut), DecodeError);
    auto magic = bytes;
    magic[0] = std::byte{'X'};
    REQUIRE_THROWS_AS(decode_model(magic), DecodeError);
}
