#pragma once

// Modality tokenizers. Imaging ROIs project 4 traits to the model dimension,
// SNPs combine a projected attribute vector with a chromosome embedding, and
// clinical scores project from one dimension. A learnable class token may be
// prepended to each sequence.

#include <Eigen/Core>
#include <string>
#include <vector>

#include "tricoat/cohort.hpp"
#include "tricoat/nn.hpp"
#include "tricoat/tape.hpp"

namespace tricoat {

enum class Modality { imaging, genetics, clinical };

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::imaging: return "imaging";
        case Modality::genetics: return "genetics";
        default: return "clinical";
    }
}

struct TokenizerConfig {
    int n_roi = 72;
    int n_snp = 70;
    int n_clinical = 7;
    int model_dim = 256;
    bool use_class_tokens = true;

    void validate() const {
        if (model_dim < 2 || model_dim % 2 != 0)
            throw ConfigError("model dimension must be even and >= 2 (SNP tokens use half)");
        if (n_roi < 1 || n_snp < 1 || n_clinical < 1)
            throw ConfigError("token counts must be positive");
    }
};

struct TokenizerParams {
    AffineParams imaging_projection;   // 4 -> k
    AffineParams snp_projection;       // 4 -> k/2
    Mat chromosome_embedding;          // 23 x k/2, chromosome c uses row c-1
    AffineParams clinical_projection;  // 1 -> k
    Mat class_token_imaging;           // 1 x k
    Mat class_token_genetics;
    Mat class_token_clinical;
};

template <typename F>
void visit_tensors(TokenizerParams& p, const std::string& prefix, F&& f) {
    visit_tensors(p.imaging_projection, prefix + ".imaging_proj", f);
    visit_tensors(p.snp_projection, prefix + ".snp_proj", f);
    f(prefix + ".chromosome_embedding", p.chromosome_embedding);
    visit_tensors(p.clinical_projection, prefix + ".clinical_proj", f);
    f(prefix + ".class_token_imaging", p.class_token_imaging);
    f(prefix + ".class_token_genetics", p.class_token_genetics);
    f(prefix + ".class_token_clinical", p.class_token_clinical);
}

inline TokenizerParams make_tokenizer(const TokenizerConfig& cfg, Rng& rng) {
    cfg.validate();
    const int k = cfg.model_dim;
    TokenizerParams p;
    p.imaging_projection = make_affine(kNumImagingTraits, k, rng);
    p.snp_projection = make_affine(kNumSnpAttributes, k / 2, rng);
    p.chromosome_embedding = xavier_uniform(kNumChromosomes, k / 2, rng);
    p.clinical_projection = make_affine(1, k, rng);
    auto small = [&](int n) {
        Mat m(1, n);
        for (int j = 0; j < n; ++j) m(0, j) = rng.uniform(-0.02, 0.02);
        return m;
    };
    p.class_token_imaging = small(k);
    p.class_token_genetics = small(k);
    p.class_token_clinical = small(k);
    return p;
}

// Model-facing view of one subject; attribution tracks gradients through
// these matrices. Chromosomes stay integral (embedding indices).
struct SubjectInputs {
    Mat imaging;    // n_roi x 4
    Mat snp_attrs;  // n_snp x 4: dosage, odds ratio, rare allele freq, intergenic
    std::vector<int> chromosomes;  // n_snp entries in 1..23
    Mat clinical;   // n_clinical x 1

    static SubjectInputs from_record(const SubjectRecord& rec) {
        SubjectInputs in;
        in.imaging = rec.imaging;
        in.snp_attrs.resize(static_cast<long>(rec.genetics.size()), kNumSnpAttributes);
        in.chromosomes.reserve(rec.genetics.size());
        for (size_t s = 0; s < rec.genetics.size(); ++s) {
            const auto& snp = rec.genetics[s];
            in.snp_attrs(static_cast<long>(s), 0) = static_cast<double>(snp.dosage);
            in.snp_attrs(static_cast<long>(s), 1) = snp.odds_ratio;
            in.snp_attrs(static_cast<long>(s), 2) = snp.rare_allele_freq;
            in.snp_attrs(static_cast<long>(s), 3) = static_cast<double>(snp.intergenic);
            in.chromosomes.push_back(snp.chromosome);
        }
        in.clinical.resize(rec.clinical.size(), 1);
        in.clinical.col(0) = rec.clinical;
        return in;
    }
};

struct TokenSequence {
    Mat tokens;  // (T+1) x k with a class token, T x k without
    Modality modality = Modality::imaging;
    int base_length = 0;  // T
    int model_dim = 0;    // k
    bool has_class_token = false;
};

namespace detail {

inline void check_shape(const Mat& m, long rows, long cols, const std::string& what) {
    if (m.rows() != rows || m.cols() != cols)
        throw DataError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                        ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

inline ad::Var maybe_prepend_class_token(ad::Tape& t, ad::Var tokens, const Mat& class_token,
                                         bool enabled) {
    if (!enabled) return tokens;
    return t.concat_rows(t.param(class_token), tokens);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Graph builders (shared by training, evaluation and attribution)

inline ad::Var tokenize_imaging_graph(ad::Tape& t, ad::Var imaging, const TokenizerParams& p,
                                      const TokenizerConfig& cfg) {
    detail::check_shape(t.value(imaging), cfg.n_roi, kNumImagingTraits, "tokenize_imaging input");
    ad::Var rows = t.affine(imaging, t.param(p.imaging_projection.W), t.param(p.imaging_projection.b));
    return detail::maybe_prepend_class_token(t, rows, p.class_token_imaging, cfg.use_class_tokens);
}

inline ad::Var tokenize_genetics_graph(ad::Tape& t, ad::Var snp_attrs,
                                       const std::vector<int>& chromosomes,
                                       const TokenizerParams& p, const TokenizerConfig& cfg) {
    detail::check_shape(t.value(snp_attrs), cfg.n_snp, kNumSnpAttributes, "tokenize_genetics input");
    if (static_cast<int>(chromosomes.size()) != cfg.n_snp)
        throw DataError("tokenize_genetics: chromosome list length mismatch");
    std::vector<int> rows;
    rows.reserve(chromosomes.size());
    for (int c : chromosomes) {
        if (c < 1 || c > kNumChromosomes)
            throw DataError("tokenize_genetics: chromosome " + std::to_string(c) +
                            " outside 1.." + std::to_string(kNumChromosomes));
        rows.push_back(c - 1);
    }
    ad::Var snp_half = t.affine(snp_attrs, t.param(p.snp_projection.W), t.param(p.snp_projection.b));
    ad::Var chr_half = t.lookup_rows(t.param(p.chromosome_embedding), rows);
    ad::Var tokens = t.concat_cols(snp_half, chr_half);
    return detail::maybe_prepend_class_token(t, tokens, p.class_token_genetics, cfg.use_class_tokens);
}

inline ad::Var tokenize_clinical_graph(ad::Tape& t, ad::Var clinical, const TokenizerParams& p,
                                       const TokenizerConfig& cfg) {
    detail::check_shape(t.value(clinical), cfg.n_clinical, 1, "tokenize_clinical input");
    ad::Var rows = t.affine(clinical, t.param(p.clinical_projection.W), t.param(p.clinical_projection.b));
    return detail::maybe_prepend_class_token(t, rows, p.class_token_clinical, cfg.use_class_tokens);
}

// ---------------------------------------------------------------------------
// Value-level wrappers

namespace detail {

inline TokenSequence wrap_sequence(Mat tokens, Modality m, int base_length,
                                   const TokenizerConfig& cfg) {
    if (!tokens.allFinite()) throw NumericError("tokenizer produced non-finite values");
    TokenSequence seq;
    seq.tokens = std::move(tokens);
    seq.modality = m;
    seq.base_length = base_length;
    seq.model_dim = cfg.model_dim;
    seq.has_class_token = cfg.use_class_tokens;
    return seq;
}

}  // namespace detail

inline TokenSequence tokenize_imaging(const SubjectRecord& rec, const TokenizerParams& p,
                                      const TokenizerConfig& cfg) {
    ad::Tape t;
    ad::Var out = tokenize_imaging_graph(t, t.constant(rec.imaging), p, cfg);
    return detail::wrap_sequence(t.value(out), Modality::imaging, cfg.n_roi, cfg);
}

inline TokenSequence tokenize_genetics(const SubjectRecord& rec, const TokenizerParams& p,
                                       const TokenizerConfig& cfg) {
    auto in = SubjectInputs::from_record(rec);
    ad::Tape t;
    ad::Var out = tokenize_genetics_graph(t, t.constant(in.snp_attrs), in.chromosomes, p, cfg);
    return detail::wrap_sequence(t.value(out), Modality::genetics, cfg.n_snp, cfg);
}

inline TokenSequence tokenize_clinical(const SubjectRecord& rec, const TokenizerParams& p,
                                       const TokenizerConfig& cfg) {
    Mat col(rec.clinical.size(), 1);
    col.col(0) = rec.clinical;
    ad::Tape t;
    ad::Var out = tokenize_clinical_graph(t, t.constant(col), p, cfg);
    return detail::wrap_sequence(t.value(out), Modality::clinical, cfg.n_clinical, cfg);
}

}  // namespace tricoat
