#pragma once

// Parameter containers shared by the tokenizers, encoders and fusion heads,
// plus initialization, Adam, and the binary checkpoint container. Every
// parameter struct exposes visit_tensors(), which enumerates (name, matrix)
// pairs in a fixed order; the optimizer and the checkpoint reader/writer are
// built on that single enumeration.

#include <Eigen/Core>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tricoat/common.hpp"

namespace tricoat {

using Mat = Eigen::MatrixXd;

struct AffineParams {
    Mat W;  // in x out
    Mat b;  // 1 x out
};

struct LayerNormParams {
    Mat gain;  // 1 x k
    Mat bias;  // 1 x k
};

struct AttentionParams {
    AffineParams query, key, value, output;
};

struct EncoderLayerParams {
    LayerNormParams norm_attn, norm_ff;
    AttentionParams attn;
    AffineParams ff_in, ff_out;
};

struct EncoderParams {
    std::vector<EncoderLayerParams> layers;
};

template <typename F>
void visit_tensors(AffineParams& p, const std::string& prefix, F&& f) {
    f(prefix + ".W", p.W);
    f(prefix + ".b", p.b);
}

template <typename F>
void visit_tensors(LayerNormParams& p, const std::string& prefix, F&& f) {
    f(prefix + ".gain", p.gain);
    f(prefix + ".bias", p.bias);
}

template <typename F>
void visit_tensors(AttentionParams& p, const std::string& prefix, F&& f) {
    visit_tensors(p.query, prefix + ".q", f);
    visit_tensors(p.key, prefix + ".k", f);
    visit_tensors(p.value, prefix + ".v", f);
    visit_tensors(p.output, prefix + ".out", f);
}

template <typename F>
void visit_tensors(EncoderLayerParams& p, const std::string& prefix, F&& f) {
    visit_tensors(p.norm_attn, prefix + ".norm_attn", f);
    visit_tensors(p.attn, prefix + ".attn", f);
    visit_tensors(p.norm_ff, prefix + ".norm_ff", f);
    visit_tensors(p.ff_in, prefix + ".ff_in", f);
    visit_tensors(p.ff_out, prefix + ".ff_out", f);
}

template <typename F>
void visit_tensors(EncoderParams& p, const std::string& prefix, F&& f) {
    for (size_t l = 0; l < p.layers.size(); ++l)
        visit_tensors(p.layers[l], prefix + ".layer" + std::to_string(l), f);
}

// ---------------------------------------------------------------------------
// Initialization

inline Mat xavier_uniform(int rows, int cols, Rng& rng) {
    double limit = std::sqrt(6.0 / (rows + cols));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-limit, limit);
    return m;
}

inline AffineParams make_affine(int in, int out, Rng& rng) {
    return {xavier_uniform(in, out, rng), Mat::Zero(1, out)};
}

inline AffineParams make_affine_identity(int dim) {
    return {Mat::Identity(dim, dim), Mat::Zero(1, dim)};
}

inline LayerNormParams make_layernorm(int k) {
    return {Mat::Ones(1, k), Mat::Zero(1, k)};
}

inline AttentionParams make_attention(int k, Rng& rng) {
    return {make_affine(k, k, rng), make_affine(k, k, rng), make_affine(k, k, rng),
            make_affine(k, k, rng)};
}

inline EncoderLayerParams make_encoder_layer(int k, int ff_hidden, Rng& rng) {
    EncoderLayerParams p;
    p.norm_attn = make_layernorm(k);
    p.norm_ff = make_layernorm(k);
    p.attn = make_attention(k, rng);
    p.ff_in = make_affine(k, ff_hidden, rng);
    p.ff_out = make_affine(ff_hidden, k, rng);
    return p;
}

inline EncoderParams make_encoder(int n_layers, int k, int ff_hidden, Rng& rng) {
    EncoderParams p;
    for (int l = 0; l < n_layers; ++l) p.layers.push_back(make_encoder_layer(k, ff_hidden, rng));
    return p;
}

// ---------------------------------------------------------------------------
// Adam

// Adam over a fixed tensor list. The list order must not change between
// steps; it comes from visit_tensors() on the owning model.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads) {
        if (params.size() != grads.size())
            throw NumericError("AdamOptimizer: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (const auto* p : params) {
                m_.push_back(Mat::Zero(p->rows(), p->cols()));
                v_.push_back(Mat::Zero(p->rows(), p->cols()));
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
            Mat mhat = m_[i] / bc1;
            Mat vhat = v_[i] / bc2;
            *params[i] -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
        }
    }

    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint container
//
// Binary layout (little-endian):
//   magic "TCKP", u32 version,
//   u64 tensor count, then per tensor: u32 name length, name bytes,
//   u64 rows, u64 cols, rows*cols f64 in row-major order,
//   u64 metadata length, metadata bytes (JSON).
// Doubles are copied bit-for-bit, so save/load round-trips exactly.

struct TensorStore {
    std::vector<std::pair<std::string, Mat>> tensors;
    std::string metadata_json = "{}";

    const Mat* find(const std::string& name) const {
        for (const auto& [n, m] : tensors)
            if (n == name) return &m;
        return nullptr;
    }

    void save(const std::filesystem::path& path) const {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write checkpoint: " + path.string());
        out.write("TCKP", 4);
        write_u32(out, 1);
        write_u64(out, tensors.size());
        for (const auto& [name, m] : tensors) {
            write_u32(out, static_cast<uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u64(out, static_cast<uint64_t>(m.rows()));
            write_u64(out, static_cast<uint64_t>(m.cols()));
            for (long i = 0; i < m.rows(); ++i)
                for (long j = 0; j < m.cols(); ++j) write_f64(out, m(i, j));
        }
        write_u64(out, metadata_json.size());
        out.write(metadata_json.data(), static_cast<std::streamsize>(metadata_json.size()));
        if (!out) throw DataError("short write on checkpoint: " + path.string());
    }

    static TensorStore load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("missing checkpoint: " + path.string());
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, "TCKP", 4) != 0)
            throw DataError("not a checkpoint file: " + path.string());
        uint32_t version = read_u32(in);
        if (version != 1)
            throw DataError("unsupported checkpoint version " + std::to_string(version));
        TensorStore store;
        uint64_t count = read_u64(in);
        for (uint64_t t = 0; t < count; ++t) {
            uint32_t name_len = read_u32(in);
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            uint64_t rows = read_u64(in);
            uint64_t cols = read_u64(in);
            Mat m(static_cast<long>(rows), static_cast<long>(cols));
            for (uint64_t i = 0; i < rows; ++i)
                for (uint64_t j = 0; j < cols; ++j)
                    m(static_cast<long>(i), static_cast<long>(j)) = read_f64(in);
            store.tensors.emplace_back(std::move(name), std::move(m));
        }
        uint64_t meta_len = read_u64(in);
        store.metadata_json.resize(meta_len);
        in.read(store.metadata_json.data(), static_cast<std::streamsize>(meta_len));
        if (!in) throw DataError("truncated checkpoint: " + path.string());
        return store;
    }

private:
    static void write_u32(std::ostream& out, uint32_t v) {
        unsigned char buf[4];
        for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<const char*>(buf), 4);
    }
    static void write_u64(std::ostream& out, uint64_t v) {
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<const char*>(buf), 8);
    }
    static void write_f64(std::ostream& out, double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_u64(out, bits);
    }
    static uint32_t read_u32(std::istream& in) {
        unsigned char buf[4];
        in.read(reinterpret_cast<char*>(buf), 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[i]) << (8 * i);
        return v;
    }
    static uint64_t read_u64(std::istream& in) {
        unsigned char buf[8];
        in.read(reinterpret_cast<char*>(buf), 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
        return v;
    }
    static double read_f64(std::istream& in) {
        uint64_t bits = read_u64(in);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

// Snapshot / restore between a visitable parameter struct and a TensorStore.
template <typename Visitable>
TensorStore snapshot_tensors(Visitable& params, const std::string& prefix) {
    TensorStore store;
    visit_tensors(params, prefix, [&](const std::string& name, Mat& m) {
        store.tensors.emplace_back(name, m);
    });
    return store;
}

template <typename Visitable>
void restore_tensors(Visitable& params, const std::string& prefix, const TensorStore& store) {
    visit_tensors(params, prefix, [&](const std::string& name, Mat& m) {
        const Mat* src = store.find(name);
        if (!src) throw DataError("checkpoint is missing tensor '" + name + "'");
        if (src->rows() != m.rows() || src->cols() != m.cols())
            throw DataError("checkpoint tensor '" + name + "' has shape " +
                            std::to_string(src->rows()) + "x" + std::to_string(src->cols()) +
                            ", expected " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()));
        m = *src;
    });
}

}  // namespace tricoat
