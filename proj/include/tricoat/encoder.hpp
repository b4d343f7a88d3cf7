#pragma once

// Pre-norm transformer encoder, applied independently per modality:
//   h  = x + MHA(LN(x))
//   x' = h + FF(LN(h))
// No positional encodings (tokens carry their identity) and no final norm.

#include <Eigen/Core>
#include <string>
#include <vector>

#include "tricoat/nn.hpp"
#include "tricoat/tape.hpp"

namespace tricoat {

struct EncoderConfig {
    int n_layers = 4;
    int n_heads = 4;
    int model_dim = 256;
    int ff_hidden = 1024;  // 4k default
    double dropout = 0.1;

    void validate() const {
        if (n_layers < 0) throw ConfigError("encoder layers must be >= 0");
        if (n_heads < 1) throw ConfigError("encoder heads must be >= 1");
        if (model_dim % n_heads != 0)
            throw ConfigError("model dimension " + std::to_string(model_dim) +
                              " not divisible by " + std::to_string(n_heads) + " heads");
        if (ff_hidden < model_dim)
            throw ConfigError("feed-forward hidden size must be >= model dimension");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    }
};

// Dropout comes from here rather than the config so evaluation passes are
// deterministic regardless of the configured training rate.
struct ForwardOpts {
    bool train = false;
    double dropout = 0.0;
    Rng* rng = nullptr;

    static ForwardOpts eval() { return {}; }
    static ForwardOpts training(double rate, Rng& rng) { return {true, rate, &rng}; }

    bool dropout_active() const { return train && dropout > 0.0 && rng != nullptr; }
};

// Attention probability matrices captured during a forward pass (one entry
// per layer per head for self-attention).
struct AttnCapture {
    std::vector<Mat> self_attention;
};

// Multihead self-attention over x (T x k): per head, scaled dot-product
// softmax(Q K^T / sqrt(d_head)) V, heads concatenated, output projection.
inline ad::Var multihead_self_attention(ad::Tape& t, ad::Var x, const AttentionParams& p,
                                        int n_heads, const ForwardOpts& opts,
                                        AttnCapture* capture = nullptr) {
    const int k = static_cast<int>(t.value(x).cols());
    const int d_head = k / n_heads;
    ad::Var q = t.affine(x, t.param(p.query.W), t.param(p.query.b));
    ad::Var kk = t.affine(x, t.param(p.key.W), t.param(p.key.b));
    ad::Var v = t.affine(x, t.param(p.value.W), t.param(p.value.b));

    ad::Var heads;
    for (int h = 0; h < n_heads; ++h) {
        ad::Var qh = t.slice_cols(q, h * d_head, d_head);
        ad::Var kh = t.slice_cols(kk, h * d_head, d_head);
        ad::Var vh = t.slice_cols(v, h * d_head, d_head);
        ad::Var scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(d_head)));
        ad::Var attn = t.softmax_rows(scores);
        if (capture) capture->self_attention.push_back(t.value(attn));
        if (opts.dropout_active()) attn = t.dropout(attn, opts.dropout, *opts.rng);
        ad::Var oh = t.matmul(attn, vh);
        heads = h == 0 ? oh : t.concat_cols(heads, oh);
    }
    return t.affine(heads, t.param(p.output.W), t.param(p.output.b));
}

inline ad::Var encoder_layer_graph(ad::Tape& t, ad::Var x, const EncoderLayerParams& p,
                                   const EncoderConfig& cfg, const ForwardOpts& opts,
                                   AttnCapture* capture) {
    ad::Var normed = t.layernorm_rows(x, t.param(p.norm_attn.gain), t.param(p.norm_attn.bias));
    ad::Var attn = multihead_self_attention(t, normed, p.attn, cfg.n_heads, opts, capture);
    ad::Var h = t.add(attn, x);

    ad::Var normed2 = t.layernorm_rows(h, t.param(p.norm_ff.gain), t.param(p.norm_ff.bias));
    ad::Var ff = t.gelu(t.affine(normed2, t.param(p.ff_in.W), t.param(p.ff_in.b)));
    ff = t.affine(ff, t.param(p.ff_out.W), t.param(p.ff_out.b));
    if (opts.dropout_active()) ff = t.dropout(ff, opts.dropout, *opts.rng);
    return t.add(ff, h);
}

inline ad::Var encode_graph(ad::Tape& t, ad::Var tokens, const EncoderParams& params,
                            const EncoderConfig& cfg, const ForwardOpts& opts = {},
                            AttnCapture* capture = nullptr) {
    cfg.validate();
    if (static_cast<int>(params.layers.size()) != cfg.n_layers)
        throw ConfigError("encoder has " + std::to_string(params.layers.size()) +
                          " parameter layers, config says " + std::to_string(cfg.n_layers));
    ad::Var x = tokens;
    for (int l = 0; l < cfg.n_layers; ++l) {
        x = encoder_layer_graph(t, x, params.layers[l], cfg, opts, capture);
        if (!t.value(x).allFinite())
            throw NumericError("encoder produced non-finite values in layer " + std::to_string(l));
    }
    return x;
}

// Evaluation-mode convenience: encodes a token matrix on a local tape.
inline Mat encode(const Mat& tokens, const EncoderParams& params, const EncoderConfig& cfg,
                  AttnCapture* capture = nullptr) {
    ad::Tape t;
    ad::Var out = encode_graph(t, t.constant(tokens), params, cfg, ForwardOpts::eval(), capture);
    return t.value(out);
}

// Single-level wrapper matching the attention arithmetic directly; used by
// tests and kept as the public seam for the attention primitive.
inline Mat self_attention(const Mat& x, const AttentionParams& p, int n_heads,
                          AttnCapture* capture = nullptr) {
    ad::Tape t;
    ad::Var out = multihead_self_attention(t, t.constant(x), p, n_heads, ForwardOpts::eval(), capture);
    return t.value(out);
}

}  // namespace tricoat
