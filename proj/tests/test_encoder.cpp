#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "tricoat/encoder.hpp"

using namespace tricoat;
using tricoat::testutil::finite_difference_check;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
    return m;
}

EncoderConfig tiny_cfg(int layers = 1) {
    EncoderConfig cfg;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.model_dim = 8;
    cfg.ff_hidden = 16;
    cfg.dropout = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("default configuration keeps the 73x256 shape") {
    EncoderConfig cfg;  // 4 layers, 4 heads, k = 256
    Rng rng(1);
    auto params = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
    Mat tokens = random_mat(73, 256, rng, 0.5);
    Mat out = encode(tokens, params, cfg);
    REQUIRE(out.rows() == 73);
    REQUIRE(out.cols() == 256);
    REQUIRE(out.allFinite());
}

TEST_CASE("zero layers is the identity") {
    EncoderConfig cfg = tiny_cfg(0);
    EncoderParams params;  // empty stack
    Rng rng(2);
    Mat tokens = random_mat(5, 8, rng);
    REQUIRE(encode(tokens, params, cfg) == tokens);
}

TEST_CASE("zeroed sublayer weights make each layer an exact identity") {
    EncoderConfig cfg = tiny_cfg(2);
    Rng rng(3);
    auto params = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
    for (auto& layer : params.layers) {
        layer.attn.output.W.setZero();
        layer.attn.output.b.setZero();
        layer.ff_out.W.setZero();
        layer.ff_out.b.setZero();
    }
    Mat tokens = random_mat(6, 8, rng);
    REQUIRE(encode(tokens, params, cfg) == tokens);
}

TEST_CASE("single token attends only to itself") {
    EncoderConfig cfg = tiny_cfg();
    cfg.n_heads = 1;
    Rng rng(4);
    auto attn = make_attention(cfg.model_dim, rng);
    Mat x = random_mat(1, 8, rng);

    AttnCapture cap;
    Mat out = self_attention(x, attn, 1, &cap);
    REQUIRE(cap.self_attention.size() == 1);
    REQUIRE(cap.self_attention[0](0, 0) == 1.0);

    // Oracle: softmax over one key is 1, so the output is Wo(V) + bo.
    Mat v = x * attn.value.W + attn.value.b;
    Mat expect = v * attn.output.W + attn.output.b;
    REQUIRE((out - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("identical rows give uniform attention") {
    EncoderConfig cfg = tiny_cfg();
    Rng rng(5);
    auto attn = make_attention(cfg.model_dim, rng);
    Mat x = random_mat(1, 8, rng).replicate(4, 1);

    AttnCapture cap;
    self_attention(x, attn, 2, &cap);
    for (const auto& a : cap.self_attention)
        REQUIRE((a.array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rows are probability vectors on random input") {
    EncoderConfig cfg = tiny_cfg(2);
    Rng rng(6);
    auto params = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
    Mat tokens = random_mat(7, 8, rng, 2.0);
    AttnCapture cap;
    encode(tokens, params, cfg, &cap);
    REQUIRE(cap.self_attention.size() == 4);  // 2 layers x 2 heads
    for (const auto& a : cap.self_attention) {
        REQUIRE(a.minCoeff() >= 0.0);
        for (int i = 0; i < a.rows(); ++i) REQUIRE(std::abs(a.row(i).sum() - 1.0) < 1e-6);
    }
}

TEST_CASE("two tokens, one head matches the explicit softmax arithmetic") {
    const int k = 2;
    AttentionParams p;
    p.query.W.resize(2, 2);
    p.query.W << 1.0, 0.0, 0.0, 1.0;
    p.query.b = Mat::Zero(1, 2);
    p.key.W.resize(2, 2);
    p.key.W << 0.5, -0.25, 1.0, 0.75;
    p.key.b = Mat::Zero(1, 2);
    p.value.W.resize(2, 2);
    p.value.W << 2.0, 0.0, 0.0, -1.0;
    p.value.b = Mat::Zero(1, 2);
    p.output.W = Mat::Identity(2, 2);
    p.output.b = Mat::Zero(1, 2);

    Mat x(2, 2);
    x << 1.0, 2.0, -0.5, 0.25;

    // Hand arithmetic.
    Mat q = x * p.query.W;
    Mat key = x * p.key.W;
    Mat v = x * p.value.W;
    Mat scores = q * key.transpose() / std::sqrt(double(k));
    Mat attn(2, 2);
    for (int i = 0; i < 2; ++i) {
        double m = scores.row(i).maxCoeff();
        double e0 = std::exp(scores(i, 0) - m), e1 = std::exp(scores(i, 1) - m);
        attn(i, 0) = e0 / (e0 + e1);
        attn(i, 1) = e1 / (e0 + e1);
    }
    Mat expect = attn * v;

    AttnCapture cap;
    Mat out = self_attention(x, p, 1, &cap);
    REQUIRE((out - expect).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((cap.self_attention[0] - attn).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("permuting token rows permutes encoder output rows identically") {
    EncoderConfig cfg = tiny_cfg(2);
    Rng rng(7);
    auto params = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
    Mat tokens = random_mat(5, 8, rng);
    std::vector<int> perm = {3, 1, 4, 0, 2};
    Mat permuted(5, 8);
    for (int i = 0; i < 5; ++i) permuted.row(i) = tokens.row(perm[i]);

    Mat out = encode(tokens, params, cfg);
    Mat out_p = encode(permuted, params, cfg);
    for (int i = 0; i < 5; ++i)
        REQUIRE((out_p.row(i) - out.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("non-finite input reports the failing layer") {
    EncoderConfig cfg = tiny_cfg(1);
    Rng rng(8);
    auto params = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
    Mat tokens = Mat::Ones(3, 8);
    tokens(1, 2) = std::numeric_limits<double>::quiet_NaN();
    try {
        encode(tokens, params, cfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("encoder analytic gradients match central finite differences") {
    EncoderConfig cfg = tiny_cfg(1);
    Rng rng(9);
    auto params = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
    Mat tokens = random_mat(3, 8, rng, 0.7);
    Mat weights = random_mat(3, 8, rng);

    std::vector<Mat*> tensors = {&tokens};
    visit_tensors(params, "enc", [&](const std::string&, Mat& m) { tensors.push_back(&m); });

    std::vector<Mat> analytic;
    auto eval = [&](bool want_grads) {
        ad::Tape t;
        ad::Var x = t.leaf(tokens);
        ad::Var out = encode_graph(t, x, params, cfg);
        ad::Var s = t.sum_all(t.hadamard(out, t.constant(weights)));
        if (want_grads) {
            t.backward(s);
            analytic.clear();
            analytic.push_back(t.gradient(x));
            for (size_t i = 1; i < tensors.size(); ++i) {
                const Mat* g = t.param_gradient(*tensors[i]);
                analytic.push_back(g ? *g : Mat::Zero(tensors[i]->rows(), tensors[i]->cols()));
            }
        }
        return t.value(s)(0, 0);
    };

    eval(true);
    auto res = finite_difference_check(tensors, analytic, [&] { return eval(false); });
    INFO("max_rel_err = " << res.max_rel_err << " over " << res.entries << " entries");
    REQUIRE(res.max_rel_err <= 1e-4);
}

TEST_CASE("config validation rejects inconsistent dimensions") {
    EncoderConfig cfg = tiny_cfg();
    cfg.n_heads = 3;  // 8 not divisible by 3
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    cfg.ff_hidden = 4;
    REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    EncoderParams p;  // 0 layers vs config 1
    Rng rng(10);
    Mat tokens = random_mat(2, 8, rng);
    REQUIRE_THROWS_AS(encode(tokens, p, cfg), ConfigError);
}
