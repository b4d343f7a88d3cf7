#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Tape records one forward computation as a sequence of nodes; backward()
// walks the nodes in reverse, accumulating adjoints. Model parameters are
// registered through param(), which deduplicates by address so a tensor used
// twice in a graph receives one summed gradient. A fresh tape is built per
// forward pass; nothing is retained across passes.

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <vector>

#include "tricoat/common.hpp"

namespace tricoat::ad {

using Mat = Eigen::MatrixXd;

struct Var {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

class Tape {
public:
    Tape() = default;
    // Node lambdas capture `this`; the tape stays put once ops exist.
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf without gradient tracking.
    Var constant(Mat value) { return push(std::move(value), nullptr); }

    // Leaf with gradient tracking (model inputs for attribution).
    Var leaf(Mat value) {
        Var v = push(std::move(value), nullptr);
        nodes_[v.idx].needs_grad = true;
        return v;
    }

    // Registers a parameter tensor. Repeat registrations of the same tensor
    // return the existing node, so adjoints accumulate in one place.
    Var param(const Mat& tensor) {
        auto it = params_.find(&tensor);
        if (it != params_.end()) return Var{it->second};
        Var v = leaf(tensor);
        params_.emplace(&tensor, v.idx);
        return v;
    }

    const Mat& value(Var v) const { return nodes_[v.idx].value; }

    // Adjoint of a node after backward(); zero matrix if it never received one.
    Mat gradient(Var v) const {
        const Node& n = nodes_[v.idx];
        if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
        return n.grad;
    }

    // Adjoint of a registered parameter; nullptr when the parameter did not
    // participate in this graph.
    const Mat* param_gradient(const Mat& tensor) const {
        auto it = params_.find(&tensor);
        if (it == params_.end()) return nullptr;
        const Node& n = nodes_[it->second];
        return n.grad.size() == 0 ? nullptr : &n.grad;
    }

    // ---- operations ------------------------------------------------------

    Var matmul(Var a, Var b) {
        Mat out = value(a) * value(b);
        return push(std::move(out), [this, a, b](const Mat& g) {
            accumulate(a, g * value(b).transpose());
            accumulate(b, value(a).transpose() * g);
        }, needs(a) || needs(b));
    }

    Var transpose(Var a) {
        Mat out = value(a).transpose();
        return push(std::move(out), [this, a](const Mat& g) { accumulate(a, g.transpose()); },
                    needs(a));
    }

    Var add(Var a, Var b) {
        Mat out = value(a) + value(b);
        return push(std::move(out), [this, a, b](const Mat& g) {
            accumulate(a, g);
            accumulate(b, g);
        }, needs(a) || needs(b));
    }

    Var sub(Var a, Var b) {
        Mat out = value(a) - value(b);
        return push(std::move(out), [this, a, b](const Mat& g) {
            accumulate(a, g);
            accumulate(b, -g);
        }, needs(a) || needs(b));
    }

    // Adds a 1 x c row vector to every row.
    Var add_rowvec(Var a, Var bias) {
        Mat out = value(a).rowwise() + value(bias).row(0);
        return push(std::move(out), [this, a, bias](const Mat& g) {
            accumulate(a, g);
            accumulate(bias, g.colwise().sum());
        }, needs(a) || needs(bias));
    }

    Var scale(Var a, double s) {
        Mat out = value(a) * s;
        return push(std::move(out), [this, a, s](const Mat& g) { accumulate(a, g * s); },
                    needs(a));
    }

    Var hadamard(Var a, Var b) {
        Mat out = value(a).cwiseProduct(value(b));
        return push(std::move(out), [this, a, b](const Mat& g) {
            accumulate(a, g.cwiseProduct(value(b)));
            accumulate(b, g.cwiseProduct(value(a)));
        }, needs(a) || needs(b));
    }

    // y = x W + 1 b, the affine building block (W: in x out, b: 1 x out).
    Var affine(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

    // Row-wise softmax with max subtraction for overflow safety.
    Var softmax_rows(Var a) {
        const Mat& x = value(a);
        Mat out(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i) {
            double m = x.row(i).maxCoeff();
            Eigen::ArrayXd e = (x.row(i).array() - m).exp();
            out.row(i) = (e / e.sum()).matrix();
        }
        int out_idx = next_index();
        return push(std::move(out), [this, a, out_idx](const Mat& g) {
            const Mat& p = nodes_[out_idx].value;
            Mat gx(p.rows(), p.cols());
            for (int i = 0; i < p.rows(); ++i) {
                double dot = g.row(i).dot(p.row(i));
                gx.row(i) = p.row(i).cwiseProduct(g.row(i) - Mat::Constant(1, p.cols(), dot));
            }
            accumulate(a, gx);
        }, needs(a));
    }

    // Per-row layer normalization with learnable gain/bias (1 x k each).
    Var layernorm_rows(Var a, Var gain, Var bias, double eps = 1e-5) {
        const Mat& x = value(a);
        const int k = static_cast<int>(x.cols());
        Mat xhat(x.rows(), k);
        Eigen::VectorXd inv_sd(x.rows());
        for (int i = 0; i < x.rows(); ++i) {
            double mu = x.row(i).mean();
            double var = (x.row(i).array() - mu).square().mean();
            inv_sd(i) = 1.0 / std::sqrt(var + eps);
            xhat.row(i) = (x.row(i).array() - mu).matrix() * inv_sd(i);
        }
        Mat out = (xhat.array().rowwise() * value(gain).row(0).array()).matrix().rowwise() +
                  value(bias).row(0);
        auto xhat_shared = std::make_shared<Mat>(std::move(xhat));
        auto inv_shared = std::make_shared<Eigen::VectorXd>(std::move(inv_sd));
        return push(std::move(out),
                    [this, a, gain, bias, xhat_shared, inv_shared, k](const Mat& g) {
            const Mat& xh = *xhat_shared;
            Mat dxhat = g.array().rowwise() * value(gain).row(0).array();
            Mat gx(g.rows(), k);
            for (int i = 0; i < g.rows(); ++i) {
                double mean_dx = dxhat.row(i).mean();
                double mean_dx_xhat = dxhat.row(i).cwiseProduct(xh.row(i)).mean();
                gx.row(i) = (*inv_shared)(i) *
                            (dxhat.row(i).array() - mean_dx - xh.row(i).array() * mean_dx_xhat)
                                .matrix();
            }
            accumulate(a, gx);
            accumulate(gain, g.cwiseProduct(xh).colwise().sum());
            accumulate(bias, g.colwise().sum());
        }, needs(a) || needs(gain) || needs(bias));
    }

    // Exact GELU, x * Phi(x) with the Gaussian CDF.
    Var gelu(Var a) {
        const Mat& x = value(a);
        Mat out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
        return push(std::move(out), [this, a](const Mat& g) {
            const Mat& x = value(a);
            Mat d = x.unaryExpr([](double v) {
                double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
                return cdf + v * pdf;
            });
            accumulate(a, g.cwiseProduct(d));
        }, needs(a));
    }

    Var relu(Var a) {
        Mat out = value(a).cwiseMax(0.0);
        return push(std::move(out), [this, a](const Mat& g) {
            const Mat& x = value(a);
            accumulate(a, g.cwiseProduct(
                              (x.array() > 0.0).cast<double>().matrix()));
        }, needs(a));
    }

    Var concat_rows(Var a, Var b) {
        const Mat& xa = value(a);
        const Mat& xb = value(b);
        Mat out(xa.rows() + xb.rows(), xa.cols());
        out.topRows(xa.rows()) = xa;
        out.bottomRows(xb.rows()) = xb;
        long na = xa.rows();
        return push(std::move(out), [this, a, b, na](const Mat& g) {
            accumulate(a, g.topRows(na));
            accumulate(b, g.bottomRows(g.rows() - na));
        }, needs(a) || needs(b));
    }

    Var concat_cols(Var a, Var b) {
        const Mat& xa = value(a);
        const Mat& xb = value(b);
        Mat out(xa.rows(), xa.cols() + xb.cols());
        out.leftCols(xa.cols()) = xa;
        out.rightCols(xb.cols()) = xb;
        long ca = xa.cols();
        return push(std::move(out), [this, a, b, ca](const Mat& g) {
            accumulate(a, g.leftCols(ca));
            accumulate(b, g.rightCols(g.cols() - ca));
        }, needs(a) || needs(b));
    }

    Var slice_rows(Var a, int start, int count) {
        Mat out = value(a).middleRows(start, count);
        return push(std::move(out), [this, a, start, count](const Mat& g) {
            Mat full = Mat::Zero(value(a).rows(), value(a).cols());
            full.middleRows(start, count) = g;
            accumulate(a, full);
        }, needs(a));
    }

    Var slice_cols(Var a, int start, int count) {
        Mat out = value(a).middleCols(start, count);
        return push(std::move(out), [this, a, start, count](const Mat& g) {
            Mat full = Mat::Zero(value(a).rows(), value(a).cols());
            full.middleCols(start, count) = g;
            accumulate(a, full);
        }, needs(a));
    }

    Var row(Var a, int i) { return slice_rows(a, i, 1); }

    // Row-major flatten to 1 x (r*c).
    Var flatten_row(Var a) {
        const Mat& x = value(a);
        Mat out(1, x.rows() * x.cols());
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j) out(0, i * x.cols() + j) = x(i, j);
        return push(std::move(out), [this, a](const Mat& g) {
            const Mat& x = value(a);
            Mat gx(x.rows(), x.cols());
            for (int i = 0; i < x.rows(); ++i)
                for (int j = 0; j < x.cols(); ++j) gx(i, j) = g(0, i * x.cols() + j);
            accumulate(a, gx);
        }, needs(a));
    }

    // Gathers table rows by index (embedding lookup); gradient scatter-adds.
    Var lookup_rows(Var table, std::vector<int> indices) {
        const Mat& t = value(table);
        Mat out(static_cast<long>(indices.size()), t.cols());
        for (size_t i = 0; i < indices.size(); ++i) out.row(static_cast<long>(i)) = t.row(indices[i]);
        auto idx = std::make_shared<std::vector<int>>(std::move(indices));
        return push(std::move(out), [this, table, idx](const Mat& g) {
            Mat gt = Mat::Zero(value(table).rows(), value(table).cols());
            for (size_t i = 0; i < idx->size(); ++i)
                gt.row((*idx)[i]) += g.row(static_cast<long>(i));
            accumulate(table, gt);
        }, needs(table));
    }

    // Inverted dropout with an externally drawn keep mask.
    Var dropout(Var a, double rate, Rng& rng) {
        if (rate <= 0.0) return a;
        const Mat& x = value(a);
        auto mask = std::make_shared<Mat>(x.rows(), x.cols());
        double keep = 1.0 - rate;
        for (int i = 0; i < x.rows(); ++i)
            for (int j = 0; j < x.cols(); ++j)
                (*mask)(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
        Mat out = x.cwiseProduct(*mask);
        return push(std::move(out), [this, a, mask](const Mat& g) {
            accumulate(a, g.cwiseProduct(*mask));
        }, needs(a));
    }

    // Softmax cross-entropy against a class index, fused for stability.
    // logits: 1 x C. Returns a 1 x 1 scalar node.
    Var cross_entropy_logits(Var logits, int target) {
        const Mat& z = value(logits);
        double m = z.row(0).maxCoeff();
        Eigen::ArrayXd e = (z.row(0).array() - m).exp();
        double lse = m + std::log(e.sum());
        Mat out(1, 1);
        out(0, 0) = lse - z(0, target);
        auto probs = std::make_shared<Eigen::ArrayXd>(e / e.sum());
        return push(std::move(out), [this, logits, target, probs](const Mat& g) {
            Mat gz = (probs->matrix().transpose() * g(0, 0));
            gz(0, target) -= g(0, 0);
            accumulate(logits, gz);
        }, needs(logits));
    }

    Var sum_all(Var a) {
        Mat out(1, 1);
        out(0, 0) = value(a).sum();
        return push(std::move(out), [this, a](const Mat& g) {
            accumulate(a, Mat::Constant(value(a).rows(), value(a).cols(), g(0, 0)));
        }, needs(a));
    }

    // ---- backward --------------------------------------------------------

    // Seeds d(out) = 1 and propagates adjoints to every leaf. `out` must be
    // a 1 x 1 node.
    void backward(Var out) {
        Node& o = nodes_[out.idx];
        if (o.value.rows() != 1 || o.value.cols() != 1)
            throw NumericError("backward: output node is not scalar");
        o.grad = Mat::Constant(1, 1, 1.0);
        for (int i = out.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.backward && n.grad.size() != 0) n.backward(n.grad);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;  // empty until first accumulation
        std::function<void(const Mat&)> backward;
        bool needs_grad = false;
    };

    int next_index() const { return static_cast<int>(nodes_.size()); }

    Var push(Mat value, std::function<void(const Mat&)> bw, bool needs_grad = false) {
        Node n;
        n.value = std::move(value);
        n.backward = std::move(bw);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    bool needs(Var v) const { return nodes_[v.idx].needs_grad; }

    void accumulate(Var v, const Mat& g) {
        Node& n = nodes_[v.idx];
        if (!n.needs_grad && !n.backward) return;  // constant leaf
        if (n.grad.size() == 0)
            n.grad = g;
        else
            n.grad += g;
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Mat*, int> params_;
};

inline Eigen::VectorXd softmax_vector(const Eigen::RowVectorXd& logits) {
    double m = logits.maxCoeff();
    Eigen::ArrayXd e = (logits.array() - m).exp();
    return (e / e.sum()).matrix();
}

}  // namespace tricoat::ad
