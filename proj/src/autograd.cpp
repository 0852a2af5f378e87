#include "melweave/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "melweave/error.hpp"

namespace melweave {

void attend_row(const double* query, const double* keys, const double* values, std::size_t stride,
                std::size_t count, int heads, int head_dim, double* out, double* probs) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<double> local;
    double* weights = probs;
    if (weights == nullptr) {
        local.resize(static_cast<std::size_t>(heads) * count);
        weights = local.data();
    }
    for (int h = 0; h < heads; ++h) {
        const std::size_t offset = static_cast<std::size_t>(h) * head_dim;
        double* w = weights + static_cast<std::size_t>(h) * count;
        double max_score = -INFINITY;
        for (std::size_t j = 0; j < count; ++j) {
            const double* key = keys + j * stride + offset;
            double dot = 0.0;
            for (int c = 0; c < head_dim; ++c) {
                dot += query[offset + c] * key[c];
            }
            w[j] = dot * scale;
            max_score = std::max(max_score, w[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < count; ++j) {
            w[j] = std::exp(w[j] - max_score);
            total += w[j];
        }
        for (std::size_t j = 0; j < count; ++j) {
            w[j] /= total;
        }
        double* o = out + offset;
        for (int c = 0; c < head_dim; ++c) {
            o[c] = 0.0;
        }
        for (std::size_t j = 0; j < count; ++j) {
            const double* value = values + j * stride + offset;
            for (int c = 0; c < head_dim; ++c) {
                o[c] += w[j] * value[c];
            }
        }
    }
}

namespace ag {

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(ErrorCode::ShapeError, std::string(op) + ": shape mismatch");
    }
}

}  // namespace

Var Tape::push(Matrix value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::leaf(Matrix value) { return push(std::move(value), true); }

Var Tape::bind(const Matrix& value, Matrix* sink) {
    Node node;
    node.external = &value;
    node.sink = sink;
    node.requires_grad = sink != nullptr;
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Matrix& Tape::value(Var v) const {
    const Node& node = nodes_[v.id];
    return node.external ? *node.external : node.value;
}

const Matrix& Tape::grad(Var v) const {
    const Node& node = nodes_[v.id];
    return node.sink ? *node.sink : node.grad;
}

Matrix& Tape::grad_buffer(Var v) {
    Node& node = nodes_[v.id];
    if (node.sink) {
        return *node.sink;
    }
    if (node.grad.size() == 0) {
        const Matrix& val = value(v);
        node.grad = Matrix::Zero(val.rows(), val.cols());
    }
    return node.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
    if (!needs(v)) {
        return;
    }
    Node& node = nodes_[v.id];
    if (!node.sink && node.grad.size() == 0) {
        node.grad = g;
        return;
    }
    grad_buffer(v) += g;
}

Var Tape::add(Var a, Var b) {
    check_same_shape(value(a), value(b), "add");
    Var out = push(value(a) + value(b), needs(a) || needs(b));
    nodes_[out.id].backward = [this, a, b](const Matrix& g) {
        accumulate(a, g);
        accumulate(b, g);
    };
    return out;
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "mul");
    Var out = push(value(a).cwiseProduct(value(b)), needs(a) || needs(b));
    nodes_[out.id].backward = [this, a, b](const Matrix& g) {
        if (needs(a)) accumulate(a, g.cwiseProduct(value(b)));
        if (needs(b)) accumulate(b, g.cwiseProduct(value(a)));
    };
    return out;
}

Var Tape::scale(Var a, double s) {
    Var out = push(value(a) * s, needs(a));
    nodes_[out.id].backward = [this, a, s](const Matrix& g) { accumulate(a, g * s); };
    return out;
}

Var Tape::matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) {
        throw Error(ErrorCode::ShapeError, "matmul: inner dimensions differ");
    }
    Var out = push(value(a) * value(b), needs(a) || needs(b));
    nodes_[out.id].backward = [this, a, b](const Matrix& g) {
        if (needs(a)) accumulate(a, g * value(b).transpose());
        if (needs(b)) accumulate(b, value(a).transpose() * g);
    };
    return out;
}

Var Tape::linear(Var x, Var w, Var b) {
    const Matrix& xv = value(x);
    const Matrix& wv = value(w);
    const Matrix& bv = value(b);
    if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
        throw Error(ErrorCode::ShapeError, "linear: incompatible shapes");
    }
    Matrix y = xv * wv;
    y.rowwise() += bv.row(0);
    Var out = push(std::move(y), needs(x) || needs(w) || needs(b));
    nodes_[out.id].backward = [this, x, w, b](const Matrix& g) {
        if (needs(x)) accumulate(x, g * value(w).transpose());
        if (needs(w)) accumulate(w, value(x).transpose() * g);
        if (needs(b)) accumulate(b, g.colwise().sum());
    };
    return out;
}

Var Tape::gelu(Var x) {
    Var out = push(value(x).unaryExpr([](double v) { return melweave::gelu(v); }), needs(x));
    nodes_[out.id].backward = [this, x](const Matrix& g) {
        accumulate(x, g.cwiseProduct(value(x).unaryExpr([](double v) { return gelu_grad(v); })));
    };
    return out;
}

Var Tape::exp(Var x) {
    Var out = push(value(x).array().exp().matrix(), needs(x));
    nodes_[out.id].backward = [this, x, out](const Matrix& g) {
        accumulate(x, g.cwiseProduct(value(out)));
    };
    return out;
}

Var Tape::clamp(Var x, double lo, double hi) {
    Var out = push(value(x).cwiseMax(lo).cwiseMin(hi), needs(x));
    nodes_[out.id].backward = [this, x, lo, hi](const Matrix& g) {
        const Matrix& xv = value(x);
        Matrix gi = g;
        for (Eigen::Index i = 0; i < gi.size(); ++i) {
            const double v = xv.data()[i];
            if (v < lo || v > hi) gi.data()[i] = 0.0;
        }
        accumulate(x, gi);
    };
    return out;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Matrix& xv = value(x);
    const Eigen::Index rows = xv.rows();
    const Eigen::Index cols = xv.cols();
    if (value(gamma).cols() != cols || value(beta).cols() != cols) {
        throw Error(ErrorCode::ShapeError, "layer_norm: parameter width mismatch");
    }
    Matrix normed(rows, cols);
    Vector inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mean = xv.row(i).mean();
        const double var = (xv.row(i).array() - mean).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        normed.row(i) = (xv.row(i).array() - mean) * inv_std(i);
    }
    Matrix y = normed.array().rowwise() * value(gamma).row(0).array();
    y.rowwise() += value(beta).row(0);
    Var out = push(std::move(y), needs(x) || needs(gamma) || needs(beta));
    nodes_[out.id].backward = [this, x, gamma, beta, normed = std::move(normed),
                               inv_std = std::move(inv_std)](const Matrix& g) {
        if (needs(gamma)) accumulate(gamma, g.cwiseProduct(normed).colwise().sum());
        if (needs(beta)) accumulate(beta, g.colwise().sum());
        if (needs(x)) {
            Matrix dnormed = g.array().rowwise() * value(gamma).row(0).array();
            Matrix dx(g.rows(), g.cols());
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                const double mean_d = dnormed.row(i).mean();
                const double mean_dn = dnormed.row(i).dot(normed.row(i)) / static_cast<double>(g.cols());
                dx.row(i) = inv_std(i) * (dnormed.row(i).array() - mean_d - normed.row(i).array() * mean_dn);
            }
            accumulate(x, dx);
        }
    };
    return out;
}

Var Tape::causal_attention(Var q, Var k, Var v, int heads) {
    const Matrix& qv = value(q);
    const Matrix& kv = value(k);
    const Matrix& vv = value(v);
    check_same_shape(qv, kv, "attention");
    check_same_shape(qv, vv, "attention");
    const Eigen::Index rows = qv.rows();
    const Eigen::Index width = qv.cols();
    if (heads <= 0 || width % heads != 0) {
        throw Error(ErrorCode::ShapeError, "attention: width not divisible by heads");
    }
    const int head_dim = static_cast<int>(width / heads);
    // probs[i] holds heads x (i + 1) weights for query row i.
    std::vector<std::vector<double>> probs(static_cast<std::size_t>(rows));
    Matrix y(rows, width);
    for (Eigen::Index i = 0; i < rows; ++i) {
        auto& p = probs[static_cast<std::size_t>(i)];
        p.resize(static_cast<std::size_t>(heads) * static_cast<std::size_t>(i + 1));
        attend_row(qv.row(i).data(), kv.data(), vv.data(), static_cast<std::size_t>(width),
                   static_cast<std::size_t>(i + 1), heads, head_dim, y.row(i).data(), p.data());
    }
    Var out = push(std::move(y), needs(q) || needs(k) || needs(v));
    nodes_[out.id].backward = [this, q, k, v, heads, head_dim, probs = std::move(probs)](const Matrix& g) {
        const Matrix& qv = value(q);
        const Matrix& kv = value(k);
        const Matrix& vv = value(v);
        const Eigen::Index rows = qv.rows();
        const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
        Matrix dq = Matrix::Zero(rows, qv.cols());
        Matrix dk = Matrix::Zero(rows, qv.cols());
        Matrix dv = Matrix::Zero(rows, qv.cols());
        std::vector<double> dp;
        for (Eigen::Index i = 0; i < rows; ++i) {
            const auto count = static_cast<std::size_t>(i + 1);
            const auto& p = probs[static_cast<std::size_t>(i)];
            dp.resize(count);
            for (int h = 0; h < heads; ++h) {
                const Eigen::Index off = static_cast<Eigen::Index>(h) * head_dim;
                const double* w = p.data() + static_cast<std::size_t>(h) * count;
                auto go = g.row(i).segment(off, head_dim);
                double weighted = 0.0;
                for (std::size_t j = 0; j < count; ++j) {
                    const auto jj = static_cast<Eigen::Index>(j);
                    dv.row(jj).segment(off, head_dim) += w[j] * go;
                    dp[j] = go.dot(vv.row(jj).segment(off, head_dim));
                    weighted += w[j] * dp[j];
                }
                for (std::size_t j = 0; j < count; ++j) {
                    const auto jj = static_cast<Eigen::Index>(j);
                    const double ds = w[j] * (dp[j] - weighted) * scale;
                    dq.row(i).segment(off, head_dim) += ds * kv.row(jj).segment(off, head_dim);
                    dk.row(jj).segment(off, head_dim) += ds * qv.row(i).segment(off, head_dim);
                }
            }
        }
        accumulate(q, dq);
        accumulate(k, dk);
        accumulate(v, dv);
    };
    return out;
}

Var Tape::gather_rows(Var table, std::vector<int> rows) {
    const Matrix& tv = value(table);
    Matrix y(static_cast<Eigen::Index>(rows.size()), tv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= tv.rows()) {
            throw Error(ErrorCode::ShapeError, "gather_rows: row index out of range");
        }
        y.row(static_cast<Eigen::Index>(i)) = tv.row(rows[i]);
    }
    Var out = push(std::move(y), needs(table));
    nodes_[out.id].backward = [this, table, rows = std::move(rows)](const Matrix& g) {
        if (!needs(table)) return;
        Matrix& buf = grad_buffer(table);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            buf.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
        }
    };
    return out;
}

Var Tape::assemble_rows(std::vector<Var> parts, std::vector<std::vector<int>> dest, int rows) {
    if (parts.empty() || parts.size() != dest.size()) {
        throw Error(ErrorCode::ShapeError, "assemble_rows: parts/dest mismatch");
    }
    const Eigen::Index cols = value(parts[0]).cols();
    Matrix y = Matrix::Zero(rows, cols);
    bool any = false;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Matrix& pv = value(parts[p]);
        if (pv.cols() != cols || pv.rows() != static_cast<Eigen::Index>(dest[p].size())) {
            throw Error(ErrorCode::ShapeError, "assemble_rows: part shape mismatch");
        }
        for (std::size_t j = 0; j < dest[p].size(); ++j) {
            if (dest[p][j] < 0 || dest[p][j] >= rows) {
                throw Error(ErrorCode::ShapeError, "assemble_rows: destination out of range");
            }
            y.row(dest[p][j]) = pv.row(static_cast<Eigen::Index>(j));
        }
        any = any || needs(parts[p]);
    }
    Var out = push(std::move(y), any);
    nodes_[out.id].backward = [this, parts = std::move(parts), dest = std::move(dest)](const Matrix& g) {
        for (std::size_t p = 0; p < parts.size(); ++p) {
            if (!needs(parts[p])) continue;
            Matrix gp(static_cast<Eigen::Index>(dest[p].size()), g.cols());
            for (std::size_t j = 0; j < dest[p].size(); ++j) {
                gp.row(static_cast<Eigen::Index>(j)) = g.row(dest[p][j]);
            }
            accumulate(parts[p], gp);
        }
    };
    return out;
}

Var Tape::gather_blocks(Var x, int width, std::vector<std::pair<int, int>> src) {
    const Matrix& xv = value(x);
    Matrix y(static_cast<Eigen::Index>(src.size()), width);
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto [row, block] = src[i];
        if (row < 0 || row >= xv.rows() || block < 0 || (block + 1) * width > xv.cols()) {
            throw Error(ErrorCode::ShapeError, "gather_blocks: index out of range");
        }
        y.row(static_cast<Eigen::Index>(i)) = xv.row(row).segment(block * width, width);
    }
    Var out = push(std::move(y), needs(x));
    nodes_[out.id].backward = [this, x, width, src = std::move(src)](const Matrix& g) {
        if (!needs(x)) return;
        Matrix& buf = grad_buffer(x);
        for (std::size_t i = 0; i < src.size(); ++i) {
            buf.row(src[i].first).segment(src[i].second * width, width) += g.row(static_cast<Eigen::Index>(i));
        }
    };
    return out;
}

Var Tape::custom(std::vector<Var> inputs, Matrix value_in, CustomBackward backward) {
    bool any = false;
    for (Var v : inputs) any = any || needs(v);
    Var out = push(std::move(value_in), any);
    nodes_[out.id].backward = [this, inputs = std::move(inputs), backward = std::move(backward)](const Matrix& g) {
        std::vector<Matrix> grads = backward(g);
        for (std::size_t i = 0; i < inputs.size() && i < grads.size(); ++i) {
            if (grads[i].size() > 0) accumulate(inputs[i], grads[i]);
        }
    };
    return out;
}

void Tape::backward(Var root) {
    const Matrix& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw Error(ErrorCode::ShapeError, "backward: root must be a scalar");
    }
    if (!needs(root)) return;
    accumulate(root, Matrix::Constant(1, 1, 1.0));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || !node.backward || node.grad.size() == 0) continue;
        node.backward(node.grad);
    }
}

}  // namespace ag
}  // namespace melweave
