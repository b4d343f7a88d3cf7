#include <catch2/catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "tricoat/models.hpp"

using namespace tricoat;
using tricoat::testutil::finite_difference_check;
using tricoat::testutil::make_record;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
    return m;
}

ModelConfig mini_cfg() {
    ModelConfig cfg;
    cfg.n_roi = 3;
    cfg.n_snp = 3;
    cfg.n_clinical = 2;
    cfg.model_dim = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.ff_hidden = 16;
    cfg.dropout = 0.0;
    cfg.classifier_hidden = 8;
    return cfg;
}

SubjectInputs mini_inputs(uint64_t seed, const ModelConfig& cfg = mini_cfg()) {
    auto schema = CohortSchema::defaults(cfg.n_roi, cfg.n_snp, cfg.n_clinical);
    return SubjectInputs::from_record(make_record("S", schema, seed));
}

}  // namespace

TEST_CASE("coattend shapes: 71x256 genetics against 8x256 clinical") {
    Rng rng(1);
    Mat source = random_mat(71, 256, rng, 0.3);
    Mat clinical = random_mat(8, 256, rng, 0.3);
    auto wq = make_affine(256, 256, rng);
    auto wk = make_affine(256, 256, rng);
    auto wv = make_affine(256, 256, rng);
    auto [fused, attn] = coattend(source, clinical, wq, wk, wv, 256);
    REQUIRE(fused.rows() == 71);
    REQUIRE(fused.cols() == 256);
    REQUIRE(attn.rows() == 71);
    REQUIRE(attn.cols() == 8);
    for (int i = 0; i < attn.rows(); ++i) {
        REQUIRE(std::abs(attn.row(i).sum() - 1.0) < 1e-6);
        REQUIRE(attn.row(i).minCoeff() >= 0.0);
    }
}

TEST_CASE("a single clinical token receives all attention") {
    Rng rng(2);
    Mat source = random_mat(5, 8, rng);
    Mat clinical = random_mat(1, 8, rng);
    auto wq = make_affine(8, 8, rng);
    auto wk = make_affine(8, 8, rng);
    auto wv = make_affine(8, 8, rng);
    auto [fused, attn] = coattend(source, clinical, wq, wk, wv, 8);
    REQUIRE((attn.array() == 1.0).all());
    Mat v_row = clinical * wv.W + wv.b;
    for (int i = 0; i < 5; ++i) REQUIRE((fused.row(i) - v_row).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("2x2 co-attention matches hand computation") {
    AffineParams wq{Mat::Identity(2, 2), Mat::Zero(1, 2)};
    AffineParams wk{Mat::Identity(2, 2), Mat::Zero(1, 2)};
    AffineParams wv{(Mat(2, 2) << 1.0, -1.0, 0.5, 2.0).finished(), Mat::Zero(1, 2)};
    Mat source(2, 2), clinical(2, 2);
    source << 1.0, 0.0, 0.5, -1.0;
    clinical << 0.25, 1.0, -0.75, 0.5;

    Mat scores = source * clinical.transpose() / std::sqrt(2.0);
    Mat attn(2, 2);
    for (int i = 0; i < 2; ++i) {
        double m = scores.row(i).maxCoeff();
        double e0 = std::exp(scores(i, 0) - m), e1 = std::exp(scores(i, 1) - m);
        attn(i, 0) = e0 / (e0 + e1);
        attn(i, 1) = e1 / (e0 + e1);
    }
    Mat expect = attn * (clinical * wv.W);

    auto [fused, attn_got] = coattend(source, clinical, wq, wk, wv, 2);
    REQUIRE((fused - expect).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((attn_got - attn).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("swapping query weights and inputs swaps the attention maps") {
    Rng rng(3);
    Mat emb_g = random_mat(4, 8, rng);
    Mat emb_i = random_mat(6, 8, rng);
    Mat emb_c = random_mat(3, 8, rng);
    auto wq_g = make_affine(8, 8, rng);
    auto wq_i = make_affine(8, 8, rng);
    auto wk = make_affine(8, 8, rng);
    auto wv = make_affine(8, 8, rng);

    auto [f_g, a_g] = coattend(emb_g, emb_c, wq_g, wk, wv, 8);
    auto [f_i, a_i] = coattend(emb_i, emb_c, wq_i, wk, wv, 8);
    // Swap both the projections and the inputs: maps swap exactly.
    auto [f_g2, a_g2] = coattend(emb_i, emb_c, wq_i, wk, wv, 8);
    auto [f_i2, a_i2] = coattend(emb_g, emb_c, wq_g, wk, wv, 8);
    REQUIRE(a_g2 == a_i);
    REQUIRE(a_i2 == a_g);
}

TEST_CASE("class-token joint vector has length 2k and flatten_all 144k") {
    ModelConfig cfg;  // defaults: 72/70/7, k = 256
    auto m = TriCoatModel::init(cfg, 11);
    REQUIRE(m.head_hidden.W.rows() == 512);

    ModelConfig flat = cfg;
    flat.joint_mode = JointMode::flatten_all;
    REQUIRE(flat.joint_length() == 144 * 256);
    REQUIRE(flat.joint_length() == 36864);
    auto mf = TriCoatModel::init(flat, 11);
    REQUIRE(mf.head_hidden.W.rows() == 36864);
}

TEST_CASE("tricoat forward emits logits and both attention maps") {
    auto cfg = mini_cfg();
    auto model = TriCoatModel::init(cfg, 21);
    auto in = mini_inputs(5);
    auto [logits, attn_g, attn_i] = tricoat_forward(model, in);
    REQUIRE(logits.cols() == 3);
    REQUIRE(logits.allFinite());
    REQUIRE(attn_g.rows() == cfg.genetics_seq_len());
    REQUIRE(attn_g.cols() == cfg.clinical_seq_len());
    REQUIRE(attn_i.rows() == cfg.imaging_seq_len());
    REQUIRE(attn_i.cols() == cfg.clinical_seq_len());
}

TEST_CASE("zero value projection collapses logits to the bias path") {
    auto cfg = mini_cfg();
    auto model = TriCoatModel::init(cfg, 22);
    model.coattn.value_clinical.W.setZero();
    model.coattn.value_clinical.b.setZero();
    auto l1 = model_logits(AnyModel(model), mini_inputs(1));
    auto l2 = model_logits(AnyModel(model), mini_inputs(2));
    REQUIRE((l1 - l2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("flatten_all joint mode works without class tokens") {
    auto cfg = mini_cfg();
    cfg.use_class_tokens = false;
    cfg.joint_mode = JointMode::flatten_all;
    auto model = TriCoatModel::init(cfg, 23);
    REQUIRE(model.head_hidden.W.rows() == (cfg.n_snp + cfg.n_roi) * cfg.model_dim);
    auto logits = model_logits(AnyModel(model), mini_inputs(3));
    REQUIRE(logits.allFinite());

    auto bad = mini_cfg();
    bad.use_class_tokens = false;  // class_tokens joint mode now impossible
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("early fusion sees one sequence of all tokens plus a class token") {
    auto cfg = mini_cfg();
    auto model = EarlyFusionModel::init(cfg, 31);
    ad::Tape t;
    ModelCapture cap;
    auto in = mini_inputs(7);
    auto logits = t.value(model.logits_graph(t, bind_inputs(t, in), ForwardOpts::eval(), &cap));
    REQUIRE(logits.cols() == 3);
    const int seq = cfg.n_roi + cfg.n_snp + cfg.n_clinical + 1;
    for (const auto& a : cap.encoder.self_attention) {
        REQUIRE(a.rows() == seq);
        REQUIRE(a.cols() == seq);
    }

    // Default dimensions: 72 + 70 + 7 + 1 = 150 tokens.
    ModelConfig full;
    auto big = EarlyFusionModel::init(full, 32);
    ad::Tape t2;
    ModelCapture cap2;
    auto schema = CohortSchema::defaults();
    auto rec = make_record("S", schema, 8);
    auto in_full = SubjectInputs::from_record(rec);
    big.logits_graph(t2, bind_inputs(t2, in_full), ForwardOpts::eval(), &cap2);
    REQUIRE(cap2.encoder.self_attention.front().rows() == 150);
}

TEST_CASE("zeroed early-fusion weights leave only the output bias") {
    auto cfg = mini_cfg();
    auto model = EarlyFusionModel::init(cfg, 33);
    model.visit([](const std::string& name, Mat& m) {
        if (name.find(".gain") == std::string::npos) m.setZero();
    });
    model.head_out.b << 0.3, -0.1, 0.7;
    auto logits = early_fusion_forward(model, mini_inputs(9));
    REQUIRE((logits - model.head_out.b.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("softmax of random logits is a probability simplex") {
    auto cfg = mini_cfg();
    auto model = EarlyFusionModel::init(cfg, 34);
    for (uint64_t s = 0; s < 5; ++s) {
        auto probs = model_probs(AnyModel(model), mini_inputs(40 + s));
        REQUIRE(probs.minCoeff() >= 0.0);
        REQUIRE(std::abs(probs.sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("late fusion averages branch logits") {
    auto cfg = mini_cfg();
    auto model = LateFusionModel::init(cfg, 41);
    // Zero everything, then pin per-branch output biases.
    model.visit([](const std::string& name, Mat& m) {
        if (name.find(".gain") == std::string::npos) m.setZero();
    });
    model.head_imaging_out.b << 1, 0, 0;
    model.head_genetics_out.b << 0, 1, 0;
    model.head_clinical_out.b << 0, 0, 1;
    auto logits = late_fusion_forward(model, mini_inputs(10));
    REQUIRE((logits - Eigen::RowVector3d(1.0 / 3, 1.0 / 3, 1.0 / 3)).cwiseAbs().maxCoeff() < 1e-15);

    // Identical branch logits pass through unchanged.
    model.head_imaging_out.b << 0.4, -0.2, 0.1;
    model.head_genetics_out.b = model.head_imaging_out.b;
    model.head_clinical_out.b = model.head_imaging_out.b;
    auto same = late_fusion_forward(model, mini_inputs(11));
    REQUIRE((same - model.head_imaging_out.b.row(0)).cwiseAbs().maxCoeff() < 1e-15);

    // One predictive branch dominates the ordering; oracle is the direct mean.
    model.head_imaging_out.b << 5, 0, 0;
    model.head_genetics_out.b << 0, 0, 0;
    model.head_clinical_out.b << 0, 0, 0;
    auto dom = late_fusion_forward(model, mini_inputs(12));
    Eigen::RowVector3d oracle = (Eigen::RowVector3d(5, 0, 0) + Eigen::RowVector3d(0, 0, 0) +
                                 Eigen::RowVector3d(0, 0, 0)) /
                                3.0;
    REQUIRE((dom - oracle).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE(dom(0) > dom(1));
}

TEST_CASE("stagewise dimensions follow 64/32/16 over raw widths") {
    ModelConfig cfg;  // defaults
    auto model = StagewiseModel::init(cfg, 51);
    REQUIRE(model.imaging_stage.W.rows() == 288);
    REQUIRE(model.genetics_stage.W.rows() == 350);
    REQUIRE(model.clinical_stage.W.rows() == 7);
    REQUIRE(model.imaging_stage.W.cols() == 64);
    REQUIRE(model.second_stage.W.rows() == 192);
    REQUIRE(model.second_stage.W.cols() == 32);
    REQUIRE(model.final_stage.W.rows() == 32);
    REQUIRE(model.final_stage.W.cols() == 16);
    REQUIRE(model.out.W.rows() == 16);
    REQUIRE(model.out.W.cols() == 3);

    auto schema = CohortSchema::defaults();
    auto in = SubjectInputs::from_record(make_record("S", schema, 13));
    auto logits = stagewise_forward(model, in);
    REQUIRE(logits.allFinite());
}

TEST_CASE("zero stagewise weights give constant logits") {
    auto cfg = mini_cfg();
    auto model = StagewiseModel::init(cfg, 52);
    model.visit([](const std::string&, Mat& m) { m.setZero(); });
    auto a = stagewise_forward(model, mini_inputs(14));
    auto b = stagewise_forward(model, mini_inputs(15));
    REQUIRE(a == b);
}

TEST_CASE("adding a constant to logits leaves probabilities unchanged") {
    Rng rng(61);
    Mat logits = random_mat(1, 3, rng, 2.0);
    auto p = ad::softmax_vector(logits.row(0));
    Mat shifted = logits.array() + 17.25;
    auto q = ad::softmax_vector(shifted.row(0));
    REQUIRE((p - q).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("forward passes are deterministic at evaluation") {
    auto cfg = mini_cfg();
    for (ModelKind kind : {ModelKind::tricoat, ModelKind::early_fusion, ModelKind::late_fusion,
                           ModelKind::stagewise, ModelKind::single_clinical}) {
        auto model = init_model(kind, cfg, 71);
        auto in = mini_inputs(16);
        auto a = model_logits(model, in);
        auto b = model_logits(model, in);
        REQUIRE(a == b);
    }
}

TEST_CASE("miniature tricoat end-to-end gradient check") {
    auto cfg = mini_cfg();
    cfg.n_snp = 3;
    auto model = TriCoatModel::init(cfg, 81);
    auto in = mini_inputs(17, cfg);

    std::vector<Mat*> tensors = {&in.imaging, &in.snp_attrs, &in.clinical};
    model.visit([&](const std::string&, Mat& m) { tensors.push_back(&m); });

    std::vector<Mat> analytic;
    auto eval = [&](bool want_grads) {
        ad::Tape t;
        InputVars vars = bind_inputs(t, in, true);
        ad::Var logits = model.logits_graph(t, vars);
        ad::Var loss = t.cross_entropy_logits(logits, 1);
        if (want_grads) {
            t.backward(loss);
            analytic.clear();
            analytic.push_back(t.gradient(vars.imaging));
            analytic.push_back(t.gradient(vars.snp_attrs));
            analytic.push_back(t.gradient(vars.clinical));
            for (size_t i = 3; i < tensors.size(); ++i) {
                const Mat* g = t.param_gradient(*tensors[i]);
                analytic.push_back(g ? *g : Mat::Zero(tensors[i]->rows(), tensors[i]->cols()));
            }
        }
        return t.value(loss)(0, 0);
    };

    eval(true);
    auto res = finite_difference_check(tensors, analytic, [&] { return eval(false); });
    INFO("max_rel_err = " << res.max_rel_err << " over " << res.entries << " entries");
    REQUIRE(res.max_rel_err <= 1e-4);
}

TEST_CASE("stagewise gradient check on tiny dims") {
    auto cfg = mini_cfg();
    auto model = StagewiseModel::init(cfg, 82);
    auto in = mini_inputs(18);

    std::vector<Mat*> tensors;
    model.visit([&](const std::string&, Mat& m) { tensors.push_back(&m); });

    std::vector<Mat> analytic;
    auto eval = [&](bool want_grads) {
        ad::Tape t;
        ad::Var logits = model.logits_graph(t, bind_inputs(t, in));
        ad::Var loss = t.cross_entropy_logits(logits, 2);
        if (want_grads) {
            t.backward(loss);
            analytic.clear();
            for (auto* m : tensors) {
                const Mat* g = t.param_gradient(*m);
                analytic.push_back(g ? *g : Mat::Zero(m->rows(), m->cols()));
            }
        }
        return t.value(loss)(0, 0);
    };
    eval(true);
    auto res = finite_difference_check(tensors, analytic, [&] { return eval(false); });
    REQUIRE(res.max_rel_err <= 1e-4);
}

TEST_CASE("checkpoints round-trip bit-exactly through the container") {
    auto cfg = mini_cfg();
    AnyModel model = init_model(ModelKind::tricoat, cfg, 91);
    auto in = mini_inputs(19);
    auto before = model_logits(model, in);

    TensorStore store;
    for (auto& [name, m] : model_tensors(model)) store.tensors.emplace_back(name, *m);
    store.metadata_json = R"({"model": "tricoat", "lr": 0.0001})";
    auto dir = testutil::fresh_temp_dir("tricoat_ckpt");
    store.save(dir / "model.tckp");

    auto loaded = TensorStore::load(dir / "model.tckp");
    REQUIRE(loaded.metadata_json == store.metadata_json);
    REQUIRE(loaded.tensors.size() == store.tensors.size());
    for (size_t i = 0; i < store.tensors.size(); ++i) {
        REQUIRE(loaded.tensors[i].first == store.tensors[i].first);
        REQUIRE(loaded.tensors[i].second == store.tensors[i].second);
    }

    AnyModel fresh = init_model(ModelKind::tricoat, cfg, 999);
    for (auto& [name, m] : model_tensors(fresh)) {
        const Mat* src = loaded.find(name);
        REQUIRE(src != nullptr);
        *m = *src;
    }
    REQUIRE(model_logits(fresh, in) == before);
}
