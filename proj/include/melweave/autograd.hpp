#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace melweave {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

// Causal multi-head attention for one query row against `count` cached rows.
// keys/values are row-major with `stride` doubles per row; each head reads
// its own head_dim slice. `out` receives heads * head_dim values. When
// `probs` is non-null it receives heads * count softmax weights.
void attend_row(const double* query, const double* keys, const double* values, std::size_t stride,
                std::size_t count, int heads, int head_dim, double* out, double* probs);

inline double gelu(double x) {
    constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(kAlpha * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
    constexpr double kAlpha = 0.7978845608028654;
    const double inner = kAlpha * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kAlpha * (1.0 + 3.0 * 0.044715 * x * x);
}

namespace ag {

struct Var {
    std::uint32_t id = 0;
};

// Reverse-mode tape over row-major double matrices. Nodes live until the
// tape is destroyed; backward() runs the recorded closures in reverse order.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var leaf(Matrix value);
    // Leaf whose value lives outside the tape; gradients are added to *sink.
    Var bind(const Matrix& value, Matrix* sink);

    const Matrix& value(Var v) const;
    // Gradient of the last backward() root; empty if none reached this node.
    const Matrix& grad(Var v) const;

    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var matmul(Var a, Var b);
    // x * w + b with b a 1 x out row broadcast over rows.
    Var linear(Var x, Var w, Var b);
    Var gelu(Var x);
    Var exp(Var x);
    Var clamp(Var x, double lo, double hi);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var causal_attention(Var q, Var k, Var v, int heads);
    // out.row(i) = table.row(rows[i])
    Var gather_rows(Var table, std::vector<int> rows);
    // Builds a rows x cols matrix; part p's row j lands at dest[p][j].
    // Rows not covered stay zero.
    Var assemble_rows(std::vector<Var> parts, std::vector<std::vector<int>> dest, int rows);
    // out.row(i) = x.row(src[i].first).segment(src[i].second * width, width)
    Var gather_blocks(Var x, int width, std::vector<std::pair<int, int>> src);

    // Generic differentiable node. `backward` gets the output gradient and
    // returns one gradient per input (empty matrices are skipped).
    using CustomBackward = std::function<std::vector<Matrix>(const Matrix& grad_out)>;
    Var custom(std::vector<Var> inputs, Matrix value, CustomBackward backward);

    // Seeds d(root)/d(root) = 1 for a 1 x 1 root.
    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        const Matrix* external = nullptr;
        Matrix grad;
        Matrix* sink = nullptr;
        bool requires_grad = false;
        std::function<void(const Matrix& grad_out)> backward;
    };

    Var push(Matrix value, bool requires_grad);
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }
    void accumulate(Var v, const Matrix& g);
    Matrix& grad_buffer(Var v);

    std::vector<Node> nodes_;
};

}  // namespace ag
}  // namespace melweave
