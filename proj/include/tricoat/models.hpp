#pragma once

// Fusion models producing 3-class logits (slow, intermediate, fast):
//   - TriCoatModel: per-modality encoders, then single-head co-attention with
//     genetics/imaging queries against clinical keys/values, joint MLP head.
//   - EarlyFusionModel: one shared encoder over the concatenated sequences.
//   - LateFusionModel: independent per-modality classifiers, mean of logits.
//   - StagewiseModel: staged MLP fusion over raw flattened features.
//   - SingleModalityModel: one encoder branch plus head (ablations).

#include <Eigen/Core>
#include <string>
#include <variant>
#include <vector>

#include "tricoat/config.hpp"
#include "tricoat/encoder.hpp"
#include "tricoat/tokenize.hpp"

namespace tricoat {

enum class JointMode { class_tokens, flatten_all };

inline JointMode parse_joint_mode(const std::string& s) {
    if (s == "class_tokens") return JointMode::class_tokens;
    if (s == "flatten_all") return JointMode::flatten_all;
    throw ConfigError("model.joint_mode must be 'class_tokens' or 'flatten_all', got '" + s + "'");
}

inline const char* joint_mode_name(JointMode m) {
    return m == JointMode::class_tokens ? "class_tokens" : "flatten_all";
}

struct ModelConfig {
    int n_roi = 72;
    int n_snp = 70;
    int n_clinical = 7;
    int model_dim = 256;
    int n_layers = 4;
    int n_heads = 4;
    int ff_hidden = 1024;
    double dropout = 0.1;
    bool use_class_tokens = true;
    JointMode joint_mode = JointMode::class_tokens;
    int classifier_hidden = 256;
    bool coattn_identity_init = false;

    static ModelConfig from_config(const ConfigDoc& cfg) {
        ModelConfig m;
        m.n_roi = static_cast<int>(cfg.get_int("schema.n_roi", 72));
        m.n_snp = static_cast<int>(cfg.get_int("schema.n_snp", 70));
        m.n_clinical = static_cast<int>(cfg.get_int("schema.n_clinical", 7));
        m.model_dim = static_cast<int>(cfg.get_int("model.dim", 256));
        m.n_layers = static_cast<int>(cfg.get_int("model.layers", 4));
        m.n_heads = static_cast<int>(cfg.get_int("model.heads", 4));
        m.ff_hidden = static_cast<int>(cfg.get_int("model.ff_hidden", 4 * m.model_dim));
        m.dropout = cfg.get_double("model.dropout", 0.1);
        m.use_class_tokens = cfg.get_bool("model.use_class_tokens", true);
        m.joint_mode = parse_joint_mode(cfg.get_string("model.joint_mode", "class_tokens"));
        m.classifier_hidden = static_cast<int>(cfg.get_int("model.classifier_hidden", 256));
        m.coattn_identity_init = cfg.get_bool("model.coattn_identity_init", false);
        m.validate();
        return m;
    }

    void validate() const {
        tokenizer().validate();
        encoder().validate();
        if (classifier_hidden < 1) throw ConfigError("classifier hidden size must be >= 1");
        if (joint_mode == JointMode::class_tokens && !use_class_tokens)
            throw ConfigError("joint_mode class_tokens requires model.use_class_tokens = true");
    }

    TokenizerConfig tokenizer() const {
        return {n_roi, n_snp, n_clinical, model_dim, use_class_tokens};
    }
    TokenizerConfig tokenizer_without_class_tokens() const {
        return {n_roi, n_snp, n_clinical, model_dim, false};
    }
    EncoderConfig encoder() const { return {n_layers, n_heads, model_dim, ff_hidden, dropout}; }

    int imaging_seq_len() const { return n_roi + (use_class_tokens ? 1 : 0); }
    int genetics_seq_len() const { return n_snp + (use_class_tokens ? 1 : 0); }
    int clinical_seq_len() const { return n_clinical + (use_class_tokens ? 1 : 0); }

    int joint_length() const {
        if (joint_mode == JointMode::class_tokens) return 2 * model_dim;
        return (genetics_seq_len() + imaging_seq_len()) * model_dim;
    }
};

// ---------------------------------------------------------------------------
// Input binding

struct InputVars {
    ad::Var imaging;
    ad::Var snp_attrs;
    ad::Var clinical;
    std::vector<int> chromosomes;
};

inline InputVars bind_inputs(ad::Tape& t, const SubjectInputs& in, bool track_gradients = false) {
    InputVars v;
    v.imaging = track_gradients ? t.leaf(in.imaging) : t.constant(in.imaging);
    v.snp_attrs = track_gradients ? t.leaf(in.snp_attrs) : t.constant(in.snp_attrs);
    v.clinical = track_gradients ? t.leaf(in.clinical) : t.constant(in.clinical);
    v.chromosomes = in.chromosomes;
    return v;
}

// Attention matrices captured from one forward pass.
struct ModelCapture {
    AttnCapture encoder;   // self-attention rows, all layers and heads
    Mat coattn_imaging;    // S_I x C
    Mat coattn_genetics;   // S_G x C
};

// ---------------------------------------------------------------------------
// Co-attention

struct CoAttentionParams {
    AffineParams query_genetics;  // k -> k
    AffineParams query_imaging;
    AffineParams key_clinical;
    AffineParams value_clinical;
};

template <typename F>
void visit_tensors(CoAttentionParams& p, const std::string& prefix, F&& f) {
    visit_tensors(p.query_genetics, prefix + ".q_genetics", f);
    visit_tensors(p.query_imaging, prefix + ".q_imaging", f);
    visit_tensors(p.key_clinical, prefix + ".k_clinical", f);
    visit_tensors(p.value_clinical, prefix + ".v_clinical", f);
}

inline CoAttentionParams make_coattention(int k, bool identity_init, Rng& rng) {
    if (identity_init)
        return {make_affine_identity(k), make_affine_identity(k), make_affine_identity(k),
                make_affine_identity(k)};
    return {make_affine(k, k, rng), make_affine(k, k, rng), make_affine(k, k, rng),
            make_affine(k, k, rng)};
}

struct CoAttendGraph {
    ad::Var fused;  // S x k
    ad::Var attn;   // S x C, rows sum to 1
};

// softmax(Q K^T / sqrt(d_k)) V with queries from the source modality and
// keys/values from the clinical embedding. Single head, d_k = model dim.
inline CoAttendGraph coattend_graph(ad::Tape& t, ad::Var source_emb, ad::Var clinical_emb,
                                    const AffineParams& wq, const AffineParams& wk,
                                    const AffineParams& wv, int d_k) {
    ad::Var q = t.affine(source_emb, t.param(wq.W), t.param(wq.b));
    ad::Var key = t.affine(clinical_emb, t.param(wk.W), t.param(wk.b));
    ad::Var val = t.affine(clinical_emb, t.param(wv.W), t.param(wv.b));
    ad::Var attn = t.softmax_rows(t.scale(t.matmul(q, t.transpose(key)), 1.0 / std::sqrt(double(d_k))));
    ad::Var fused = t.matmul(attn, val);
    return {fused, attn};
}

// Value-level co-attention: returns (fused S x k, attention S x C).
inline std::pair<Mat, Mat> coattend(const Mat& source_emb, const Mat& clinical_emb,
                                    const AffineParams& wq, const AffineParams& wk,
                                    const AffineParams& wv, int d_k) {
    ad::Tape t;
    auto out = coattend_graph(t, t.constant(source_emb), t.constant(clinical_emb), wq, wk, wv, d_k);
    return {t.value(out.fused), t.value(out.attn)};
}

// ---------------------------------------------------------------------------
// Tri-COAT

struct TriCoatModel {
    ModelConfig cfg;
    TokenizerParams tok;
    EncoderParams enc_imaging, enc_genetics, enc_clinical;
    CoAttentionParams coattn;
    AffineParams head_hidden, head_out;

    static TriCoatModel init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(derive_seed(seed, 0x7472690ULL));
        TriCoatModel m;
        m.cfg = cfg;
        m.tok = make_tokenizer(cfg.tokenizer(), rng);
        m.enc_imaging = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.enc_genetics = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.enc_clinical = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.coattn = make_coattention(cfg.model_dim, cfg.coattn_identity_init, rng);
        m.head_hidden = make_affine(cfg.joint_length(), cfg.classifier_hidden, rng);
        m.head_out = make_affine(cfg.classifier_hidden, 3, rng);
        return m;
    }

    ad::Var logits_graph(ad::Tape& t, const InputVars& in, const ForwardOpts& opts = {},
                         ModelCapture* capture = nullptr) const {
        const EncoderConfig enc_cfg = cfg.encoder();
        AttnCapture* enc_cap = capture ? &capture->encoder : nullptr;

        ad::Var tok_i = tokenize_imaging_graph(t, in.imaging, tok, cfg.tokenizer());
        ad::Var tok_g = tokenize_genetics_graph(t, in.snp_attrs, in.chromosomes, tok, cfg.tokenizer());
        ad::Var tok_c = tokenize_clinical_graph(t, in.clinical, tok, cfg.tokenizer());

        ad::Var emb_i = encode_graph(t, tok_i, enc_imaging, enc_cfg, opts, enc_cap);
        ad::Var emb_g = encode_graph(t, tok_g, enc_genetics, enc_cfg, opts, enc_cap);
        ad::Var emb_c = encode_graph(t, tok_c, enc_clinical, enc_cfg, opts, enc_cap);

        auto co_g = coattend_graph(t, emb_g, emb_c, coattn.query_genetics, coattn.key_clinical,
                                   coattn.value_clinical, cfg.model_dim);
        auto co_i = coattend_graph(t, emb_i, emb_c, coattn.query_imaging, coattn.key_clinical,
                                   coattn.value_clinical, cfg.model_dim);
        if (capture) {
            capture->coattn_genetics = t.value(co_g.attn);
            capture->coattn_imaging = t.value(co_i.attn);
        }

        ad::Var joint;
        if (cfg.joint_mode == JointMode::class_tokens) {
            joint = t.concat_cols(t.row(co_g.fused, 0), t.row(co_i.fused, 0));
        } else {
            joint = t.concat_cols(t.flatten_row(co_g.fused), t.flatten_row(co_i.fused));
        }
        ad::Var hidden = t.gelu(t.affine(joint, t.param(head_hidden.W), t.param(head_hidden.b)));
        if (opts.dropout_active()) hidden = t.dropout(hidden, opts.dropout, *opts.rng);
        return t.affine(hidden, t.param(head_out.W), t.param(head_out.b));
    }

    template <typename F>
    void visit(F&& f) {
        visit_tensors(tok, "tok", f);
        visit_tensors(enc_imaging, "enc_imaging", f);
        visit_tensors(enc_genetics, "enc_genetics", f);
        visit_tensors(enc_clinical, "enc_clinical", f);
        visit_tensors(coattn, "coattn", f);
        visit_tensors(head_hidden, "head.hidden", f);
        visit_tensors(head_out, "head.out", f);
    }
};

// ---------------------------------------------------------------------------
// Early fusion: one shared encoder over all modality tokens plus a single
// class token; sequence length n_roi + n_snp + n_clinical + 1.

struct EarlyFusionModel {
    ModelConfig cfg;
    TokenizerParams tok;
    Mat class_token;  // 1 x k
    EncoderParams enc;
    AffineParams head_hidden, head_out;

    static EarlyFusionModel init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(derive_seed(seed, 0x6561726cULL));
        EarlyFusionModel m;
        m.cfg = cfg;
        m.tok = make_tokenizer(cfg.tokenizer_without_class_tokens(), rng);
        m.class_token = xavier_uniform(1, cfg.model_dim, rng) * 0.1;
        m.enc = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.head_hidden = make_affine(cfg.model_dim, cfg.classifier_hidden, rng);
        m.head_out = make_affine(cfg.classifier_hidden, 3, rng);
        return m;
    }

    ad::Var logits_graph(ad::Tape& t, const InputVars& in, const ForwardOpts& opts = {},
                         ModelCapture* capture = nullptr) const {
        const TokenizerConfig tok_cfg = cfg.tokenizer_without_class_tokens();
        ad::Var tok_i = tokenize_imaging_graph(t, in.imaging, tok, tok_cfg);
        ad::Var tok_g = tokenize_genetics_graph(t, in.snp_attrs, in.chromosomes, tok, tok_cfg);
        ad::Var tok_c = tokenize_clinical_graph(t, in.clinical, tok, tok_cfg);
        ad::Var seq = t.concat_rows(t.param(class_token), t.concat_rows(tok_i, t.concat_rows(tok_g, tok_c)));
        ad::Var emb = encode_graph(t, seq, enc, cfg.encoder(), opts,
                                   capture ? &capture->encoder : nullptr);
        ad::Var hidden = t.gelu(t.affine(t.row(emb, 0), t.param(head_hidden.W), t.param(head_hidden.b)));
        if (opts.dropout_active()) hidden = t.dropout(hidden, opts.dropout, *opts.rng);
        return t.affine(hidden, t.param(head_out.W), t.param(head_out.b));
    }

    template <typename F>
    void visit(F&& f) {
        visit_tensors(tok, "tok", f);
        f("class_token", class_token);
        visit_tensors(enc, "enc", f);
        visit_tensors(head_hidden, "head.hidden", f);
        visit_tensors(head_out, "head.out", f);
    }
};

// ---------------------------------------------------------------------------
// Single-modality branch: tokenizer + encoder + MLP head on the class token.
// Also serves as one leg of the late-fusion model.

namespace detail {

inline ad::Var branch_logits(ad::Tape& t, Modality modality, const InputVars& in,
                             const TokenizerParams& tok, const EncoderParams& enc,
                             const AffineParams& head_hidden, const AffineParams& head_out,
                             const ModelConfig& cfg, const ForwardOpts& opts,
                             AttnCapture* capture) {
    // Branch readout always uses a class token.
    TokenizerConfig tok_cfg = cfg.tokenizer();
    tok_cfg.use_class_tokens = true;
    ad::Var tokens;
    switch (modality) {
        case Modality::imaging: tokens = tokenize_imaging_graph(t, in.imaging, tok, tok_cfg); break;
        case Modality::genetics:
            tokens = tokenize_genetics_graph(t, in.snp_attrs, in.chromosomes, tok, tok_cfg);
            break;
        case Modality::clinical: tokens = tokenize_clinical_graph(t, in.clinical, tok, tok_cfg); break;
    }
    ad::Var emb = encode_graph(t, tokens, enc, cfg.encoder(), opts, capture);
    ad::Var hidden = t.gelu(t.affine(t.row(emb, 0), t.param(head_hidden.W), t.param(head_hidden.b)));
    if (opts.dropout_active()) hidden = t.dropout(hidden, opts.dropout, *opts.rng);
    return t.affine(hidden, t.param(head_out.W), t.param(head_out.b));
}

}  // namespace detail

struct SingleModalityModel {
    ModelConfig cfg;
    Modality modality = Modality::clinical;
    TokenizerParams tok;
    EncoderParams enc;
    AffineParams head_hidden, head_out;

    static SingleModalityModel init(Modality modality, const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(derive_seed(seed, 0x73696e67ULL + static_cast<uint64_t>(modality)));
        SingleModalityModel m;
        m.cfg = cfg;
        m.modality = modality;
        TokenizerConfig tok_cfg = cfg.tokenizer();
        tok_cfg.use_class_tokens = true;
        m.tok = make_tokenizer(tok_cfg, rng);
        m.enc = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.head_hidden = make_affine(cfg.model_dim, cfg.classifier_hidden, rng);
        m.head_out = make_affine(cfg.classifier_hidden, 3, rng);
        return m;
    }

    ad::Var logits_graph(ad::Tape& t, const InputVars& in, const ForwardOpts& opts = {},
                         ModelCapture* capture = nullptr) const {
        return detail::branch_logits(t, modality, in, tok, enc, head_hidden, head_out, cfg, opts,
                                     capture ? &capture->encoder : nullptr);
    }

    template <typename F>
    void visit(F&& f) {
        visit_tensors(tok, "tok", f);
        visit_tensors(enc, "enc", f);
        visit_tensors(head_hidden, "head.hidden", f);
        visit_tensors(head_out, "head.out", f);
    }
};

// ---------------------------------------------------------------------------
// Late fusion: three independent branches, final logits are the mean of the
// branch logit vectors.

struct LateFusionModel {
    ModelConfig cfg;
    TokenizerParams tok;
    EncoderParams enc_imaging, enc_genetics, enc_clinical;
    AffineParams head_imaging_hidden, head_imaging_out;
    AffineParams head_genetics_hidden, head_genetics_out;
    AffineParams head_clinical_hidden, head_clinical_out;

    static LateFusionModel init(const ModelConfig& cfg, uint64_t seed) {
        cfg.validate();
        Rng rng(derive_seed(seed, 0x6c617465ULL));
        LateFusionModel m;
        m.cfg = cfg;
        TokenizerConfig tok_cfg = cfg.tokenizer();
        tok_cfg.use_class_tokens = true;
        m.tok = make_tokenizer(tok_cfg, rng);
        m.enc_imaging = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.enc_genetics = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.enc_clinical = make_encoder(cfg.n_layers, cfg.model_dim, cfg.ff_hidden, rng);
        m.head_imaging_hidden = make_affine(cfg.model_dim, cfg.classifier_hidden, rng);
        m.head_imaging_out = make_affine(cfg.classifier_hidden, 3, rng);
        m.head_genetics_hidden = make_affine(cfg.model_dim, cfg.classifier_hidden, rng);
        m.head_genetics_out = make_affine(cfg.classifier_hidden, 3, rng);
        m.head_clinical_hidden = make_affine(cfg.model_dim, cfg.classifier_hidden, rng);
        m.head_clinical_out = make_affine(cfg.classifier_hidden, 3, rng);
        return m;
    }

    ad::Var logits_graph(ad::Tape& t, const InputVars& in, const ForwardOpts& opts = {},
                         ModelCapture* capture = nullptr) const {
        AttnCapture* cap = capture ? &capture->encoder : nullptr;
        ad::Var li = detail::branch_logits(t, Modality::imaging, in, tok, enc_imaging,
                                           head_imaging_hidden, head_imaging_out, cfg, opts, cap);
        ad::Var lg = detail::branch_logits(t, Modality::genetics, in, tok, enc_genetics,
                                           head_genetics_hidden, head_genetics_out, cfg, opts, cap);
        ad::Var lc = detail::branch_logits(t, Modality::clinical, in, tok, enc_clinical,
                                           head_clinical_hidden, head_clinical_out, cfg, opts, cap);
        return t.scale(t.add(li, t.add(lg, lc)), 1.0 / 3.0);
    }

    template <typename F>
    void visit(F&& f) {
        visit_tensors(tok, "tok", f);
        visit_tensors(enc_imaging, "enc_imaging", f);
        visit_tensors(enc_genetics, "enc_genetics", f);
        visit_tensors(enc_clinical, "enc_clinical", f);
        visit_tensors(head_imaging_hidden, "head_imaging.hidden", f);
        visit_tensors(head_imaging_out, "head_imaging.out", f);
        visit_tensors(head_genetics_hidden, "head_genetics.hidden", f);
        visit_tensors(head_genetics_out, "head_genetics.out", f);
        visit_tensors(head_clinical_hidden, "head_clinical.hidden", f);
        visit_tensors(head_clinical_out, "head_clinical.out", f);
    }
};

// ---------------------------------------------------------------------------
// Stage-wise MLP fusion over raw flattened features: per-modality layers of
// 64 units, second stage 32, final stage 16, then 3 logits.

struct StagewiseModel {
    ModelConfig cfg;
    AffineParams imaging_stage, genetics_stage, clinical_stage;  // -> 64 each
    AffineParams second_stage;  // 192 -> 32
    AffineParams final_stage;   // 32 -> 16
    AffineParams out;           // 16 -> 3

    static constexpr int kModalityUnits = 64;
    static constexpr int kSecondUnits = 32;
    static constexpr int kFinalUnits = 16;

    int imaging_width() const { return cfg.n_roi * kNumImagingTraits; }
    int genetics_width() const { return cfg.n_snp * (kNumSnpAttributes + 1); }  // + chromosome
    int clinical_width() const { return cfg.n_clinical; }

    static StagewiseModel init(const ModelConfig& cfg, uint64_t seed) {
        Rng rng(derive_seed(seed, 0x73746167ULL));
        StagewiseModel m;
        m.cfg = cfg;
        m.imaging_stage = make_affine(m.imaging_width(), kModalityUnits, rng);
        m.genetics_stage = make_affine(m.genetics_width(), kModalityUnits, rng);
        m.clinical_stage = make_affine(m.clinical_width(), kModalityUnits, rng);
        m.second_stage = make_affine(3 * kModalityUnits, kSecondUnits, rng);
        m.final_stage = make_affine(kSecondUnits, kFinalUnits, rng);
        m.out = make_affine(kFinalUnits, 3, rng);
        return m;
    }

    ad::Var logits_graph(ad::Tape& t, const InputVars& in, const ForwardOpts& opts = {},
                         ModelCapture* = nullptr) const {
        ad::Var img = t.flatten_row(in.imaging);
        Mat chrom(t.value(in.snp_attrs).rows(), 1);
        for (long s = 0; s < chrom.rows(); ++s) chrom(s, 0) = in.chromosomes[static_cast<size_t>(s)];
        ad::Var gen = t.flatten_row(t.concat_cols(in.snp_attrs, t.constant(chrom)));
        ad::Var cli = t.transpose(in.clinical);

        ad::Var hi = t.gelu(t.affine(img, t.param(imaging_stage.W), t.param(imaging_stage.b)));
        ad::Var hg = t.gelu(t.affine(gen, t.param(genetics_stage.W), t.param(genetics_stage.b)));
        ad::Var hc = t.gelu(t.affine(cli, t.param(clinical_stage.W), t.param(clinical_stage.b)));
        ad::Var joint = t.concat_cols(hi, t.concat_cols(hg, hc));
        ad::Var h2 = t.gelu(t.affine(joint, t.param(second_stage.W), t.param(second_stage.b)));
        if (opts.dropout_active()) h2 = t.dropout(h2, opts.dropout, *opts.rng);
        ad::Var h3 = t.gelu(t.affine(h2, t.param(final_stage.W), t.param(final_stage.b)));
        return t.affine(h3, t.param(out.W), t.param(out.b));
    }

    template <typename F>
    void visit(F&& f) {
        visit_tensors(imaging_stage, "imaging_stage", f);
        visit_tensors(genetics_stage, "genetics_stage", f);
        visit_tensors(clinical_stage, "clinical_stage", f);
        visit_tensors(second_stage, "second_stage", f);
        visit_tensors(final_stage, "final_stage", f);
        visit_tensors(out, "out", f);
    }
};

// ---------------------------------------------------------------------------
// Uniform model handling

enum class ModelKind {
    tricoat,
    early_fusion,
    late_fusion,
    stagewise,
    single_imaging,
    single_genetics,
    single_clinical,
};

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "tricoat") return ModelKind::tricoat;
    if (s == "early" || s == "early_fusion") return ModelKind::early_fusion;
    if (s == "late" || s == "late_fusion") return ModelKind::late_fusion;
    if (s == "stagewise") return ModelKind::stagewise;
    if (s == "single_imaging") return ModelKind::single_imaging;
    if (s == "single_genetics") return ModelKind::single_genetics;
    if (s == "single_clinical") return ModelKind::single_clinical;
    throw ConfigError("unknown model kind '" + s + "'");
}

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::tricoat: return "tricoat";
        case ModelKind::early_fusion: return "early";
        case ModelKind::late_fusion: return "late";
        case ModelKind::stagewise: return "stagewise";
        case ModelKind::single_imaging: return "single_imaging";
        case ModelKind::single_genetics: return "single_genetics";
        default: return "single_clinical";
    }
}

using AnyModel = std::variant<TriCoatModel, EarlyFusionModel, LateFusionModel, StagewiseModel,
                              SingleModalityModel>;

inline AnyModel init_model(ModelKind kind, const ModelConfig& cfg, uint64_t seed) {
    switch (kind) {
        case ModelKind::tricoat: return TriCoatModel::init(cfg, seed);
        case ModelKind::early_fusion: return EarlyFusionModel::init(cfg, seed);
        case ModelKind::late_fusion: return LateFusionModel::init(cfg, seed);
        case ModelKind::stagewise: return StagewiseModel::init(cfg, seed);
        case ModelKind::single_imaging: return SingleModalityModel::init(Modality::imaging, cfg, seed);
        case ModelKind::single_genetics:
            return SingleModalityModel::init(Modality::genetics, cfg, seed);
        default: return SingleModalityModel::init(Modality::clinical, cfg, seed);
    }
}

inline ModelKind kind_of(const AnyModel& model) {
    if (std::holds_alternative<TriCoatModel>(model)) return ModelKind::tricoat;
    if (std::holds_alternative<EarlyFusionModel>(model)) return ModelKind::early_fusion;
    if (std::holds_alternative<LateFusionModel>(model)) return ModelKind::late_fusion;
    if (std::holds_alternative<StagewiseModel>(model)) return ModelKind::stagewise;
    switch (std::get<SingleModalityModel>(model).modality) {
        case Modality::imaging: return ModelKind::single_imaging;
        case Modality::genetics: return ModelKind::single_genetics;
        default: return ModelKind::single_clinical;
    }
}

inline ad::Var model_logits_graph(ad::Tape& t, const AnyModel& model, const InputVars& in,
                                  const ForwardOpts& opts = {}, ModelCapture* capture = nullptr) {
    return std::visit([&](const auto& m) { return m.logits_graph(t, in, opts, capture); }, model);
}

inline std::vector<std::pair<std::string, Mat*>> model_tensors(AnyModel& model) {
    std::vector<std::pair<std::string, Mat*>> out;
    std::visit([&](auto& m) { m.visit([&](const std::string& name, Mat& t) { out.emplace_back(name, &t); }); },
               model);
    return out;
}

// Evaluation-mode logits / probabilities on a local tape.
inline Eigen::RowVector3d model_logits(const AnyModel& model, const SubjectInputs& in,
                                       ModelCapture* capture = nullptr) {
    ad::Tape t;
    ad::Var out = model_logits_graph(t, model, bind_inputs(t, in), ForwardOpts::eval(), capture);
    return t.value(out).row(0);
}

inline Eigen::Vector3d model_probs(const AnyModel& model, const SubjectInputs& in) {
    return ad::softmax_vector(model_logits(model, in));
}

// Spec'd per-model forward wrappers.

inline std::tuple<Eigen::RowVector3d, Mat, Mat> tricoat_forward(const TriCoatModel& m,
                                                                const SubjectInputs& in) {
    ad::Tape t;
    ModelCapture cap;
    ad::Var out = m.logits_graph(t, bind_inputs(t, in), ForwardOpts::eval(), &cap);
    return {t.value(out).row(0), cap.coattn_genetics, cap.coattn_imaging};
}

inline Eigen::RowVector3d early_fusion_forward(const EarlyFusionModel& m, const SubjectInputs& in) {
    ad::Tape t;
    return t.value(m.logits_graph(t, bind_inputs(t, in))).row(0);
}

inline Eigen::RowVector3d late_fusion_forward(const LateFusionModel& m, const SubjectInputs& in) {
    ad::Tape t;
    return t.value(m.logits_graph(t, bind_inputs(t, in))).row(0);
}

inline Eigen::RowVector3d stagewise_forward(const StagewiseModel& m, const SubjectInputs& in) {
    ad::Tape t;
    return t.value(m.logits_graph(t, bind_inputs(t, in))).row(0);
}

}  // namespace tricoat
