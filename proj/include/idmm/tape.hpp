#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "idmm/errors.hpp"
#include "idmm/kernels.hpp"
#include "idmm/tensor.hpp"
#include "idmm/threadpool.hpp"

namespace idmm {

// Reverse-mode differentiation tape. Nodes are append-only, so node order
// is a topological order and the backward pass is a single reverse sweep.
// The op set is exactly what the transformer backbone needs; the losses on
// top of the features use closed-form gradients instead of this tape.
//
// Gradient accumulation uses += semantics so shared inputs (residual
// streams, tied parameters) collect contributions from every consumer.
template <class T>
class TapeT {
public:
    enum class Op {
        Leaf,
        Matmul,      // [m x k]*[k x n]
        Add,         // same shape
        AddRow,      // matrix + row vector
        Mul,         // elementwise
        Scale,       // constant factor
        LayerNorm,   // row-wise, learnable gamma/beta
        Gelu,
        Softmax,     // row-wise
        AttnScores,  // fused per-head q.k^T over a packed qkv matrix
        AttnMix,     // fused probs.v over a packed qkv matrix
        AddClsPos,   // prepend class token and add position table, per sample
        GatherRows,
        Reshape,
        ConcatRows,
        SliceRows,
        SliceCols,
        MeanAll,
    };

    struct Node {
        Op op;
        std::array<int, 3> in{-1, -1, -1};
        TensorT<T> value;
        std::vector<T> grad;       // same length as value when active
        std::vector<T> saved;      // op-specific forward state (layernorm stats)
        std::vector<std::int64_t> aux;  // op-specific indices
        std::int64_t p0 = 0, p1 = 0, p2 = 0;  // op-specific integer params
        T scale = T(1);
        bool needs_grad = false;
    };

    std::vector<Node> nodes;

    void clear() { nodes.clear(); }

    const TensorT<T>& value(int id) const { return nodes[id].value; }

    // Gradient of the last backward target w.r.t. node id.
    const std::vector<T>& grad(int id) const { return nodes[id].grad; }

    int leaf(TensorT<T> v) {
        v.check_finite("leaf");
        Node n;
        n.op = Op::Leaf;
        n.needs_grad = v.requires_grad;
        n.value = std::move(v);
        return push(std::move(n));
    }

    int matmul(int a, int b) {
        const auto& A = nodes[a].value;
        const auto& B = nodes[b].value;
        if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
            throw DimError("matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
        Node n = make(Op::Matmul, a, b, TensorT<T>({A.dim(0), B.dim(1)}));
        gemm_nn(A.data(), B.data(), n.value.data(), A.dim(0), A.dim(1), B.dim(1), false);
        return push(std::move(n));
    }

    int add(int a, int b) {
        const auto& A = nodes[a].value;
        const auto& B = nodes[b].value;
        if (!A.same_shape(B))
            throw DimError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
        Node n = make(Op::Add, a, b, TensorT<T>(A.shape()));
        const std::int64_t len = A.numel();
        const T* pa = A.data();
        const T* pb = B.data();
        T* pc = n.value.data();
        for (std::int64_t i = 0; i < len; ++i) pc[i] = pa[i] + pb[i];
        return push(std::move(n));
    }

    int add_row(int a, int b) {
        const auto& A = nodes[a].value;
        const auto& B = nodes[b].value;
        if (B.numel() != A.cols())
            throw DimError("add_row: vector length " + B.shape_str() + " vs matrix " + A.shape_str());
        Node n = make(Op::AddRow, a, b, TensorT<T>(A.shape()));
        const std::int64_t m = A.rows(), c = A.cols();
        const T* pb = B.data();
        parallel_for(0, m, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t i = i0; i < i1; ++i) {
                const T* pa = A.row(i);
                T* pc = n.value.row(i);
                for (std::int64_t j = 0; j < c; ++j) pc[j] = pa[j] + pb[j];
            }
        });
        return push(std::move(n));
    }

    int mul(int a, int b) {
        const auto& A = nodes[a].value;
        const auto& B = nodes[b].value;
        if (!A.same_shape(B))
            throw DimError("mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
        Node n = make(Op::Mul, a, b, TensorT<T>(A.shape()));
        const std::int64_t len = A.numel();
        for (std::int64_t i = 0; i < len; ++i) n.value[i] = A[i] * B[i];
        return push(std::move(n));
    }

    int scale(int a, T s) {
        const auto& A = nodes[a].value;
        Node n = make(Op::Scale, a, -1, TensorT<T>(A.shape()));
        n.scale = s;
        const std::int64_t len = A.numel();
        for (std::int64_t i = 0; i < len; ++i) n.value[i] = s * A[i];
        return push(std::move(n));
    }

    int layernorm(int x, int gamma, int beta, T eps) {
        const auto& X = nodes[x].value;
        const auto& G = nodes[gamma].value;
        const auto& Bt = nodes[beta].value;
        const std::int64_t m = X.rows(), c = X.cols();
        if (G.numel() != c || Bt.numel() != c)
            throw DimError("layernorm: scale/shift length mismatch");
        Node n = make(Op::LayerNorm, x, gamma, TensorT<T>(X.shape()));
        n.in[2] = beta;
        n.scale = eps;
        n.saved.resize(static_cast<std::size_t>(2 * m));  // mean, rstd per row
        T* stats = n.saved.data();
        const T* pg = G.data();
        const T* pb = Bt.data();
        parallel_for(0, m, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t i = i0; i < i1; ++i) {
                const T* px = X.row(i);
                T* py = n.value.row(i);
                T mu = T(0);
                for (std::int64_t j = 0; j < c; ++j) mu += px[j];
                mu /= static_cast<T>(c);
                T var = T(0);
                for (std::int64_t j = 0; j < c; ++j) {
                    const T d = px[j] - mu;
                    var += d * d;
                }
                var /= static_cast<T>(c);
                const T rstd = T(1) / std::sqrt(var + eps);
                stats[2 * i] = mu;
                stats[2 * i + 1] = rstd;
                for (std::int64_t j = 0; j < c; ++j)
                    py[j] = pg[j] * ((px[j] - mu) * rstd) + pb[j];
            }
        });
        return push(std::move(n));
    }

    int gelu(int x) {
        const auto& X = nodes[x].value;
        Node n = make(Op::Gelu, x, -1, TensorT<T>(X.shape()));
        const std::int64_t len = X.numel();
        const T* px = X.data();
        T* py = n.value.data();
        parallel_for(0, len, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t i = i0; i < i1; ++i) {
                const T v = px[i];
                py[i] = T(0.5) * v * (T(1) + std::erf(v * T(0.7071067811865475)));
            }
        });
        return push(std::move(n));
    }

    // Row-wise softmax with max subtraction.
    int softmax(int x) {
        const auto& X = nodes[x].value;
        if (!X.all_finite()) throw NumericError("softmax: non-finite logits");
        Node n = make(Op::Softmax, x, -1, TensorT<T>(X.shape()));
        const std::int64_t m = X.rows(), c = X.cols();
        parallel_for(0, m, [&](std::int64_t i0, std::int64_t i1) {
            for (std::int64_t i = i0; i < i1; ++i) {
                const T* px = X.row(i);
                T* py = n.value.row(i);
                T mx = px[0];
                for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, px[j]);
                T sum = T(0);
                for (std::int64_t j = 0; j < c; ++j) {
                    py[j] = std::exp(px[j] - mx);
                    sum += py[j];
                }
                const T inv = T(1) / sum;
                for (std::int64_t j = 0; j < c; ++j) py[j] *= inv;
            }
        });
        return push(std::move(n));
    }

    // qkv: [samples*tokens x 3*dim] packed as [q | k | v]; output scores
    // [samples*heads*tokens x tokens], scaled by 1/sqrt(head_dim).
    int attn_scores(int qkv, std::int64_t samples, std::int64_t tokens, std::int64_t heads) {
        const auto& Q = nodes[qkv].value;
        const std::int64_t dim = Q.cols() / 3;
        const std::int64_t dh = dim / heads;
        if (Q.rows() != samples * tokens || dim * 3 != Q.cols() || dh * heads != dim)
            throw DimError("attn_scores: bad packing " + Q.shape_str());
        Node n = make(Op::AttnScores, qkv, -1, TensorT<T>({samples * heads * tokens, tokens}));
        n.p0 = samples;
        n.p1 = tokens;
        n.p2 = heads;
        const T sc = T(1) / std::sqrt(static_cast<T>(dh));
        n.scale = sc;
        parallel_for(0, samples, [&](std::int64_t b0, std::int64_t b1) {
            for (std::int64_t b = b0; b < b1; ++b)
                for (std::int64_t h = 0; h < heads; ++h)
                    for (std::int64_t t = 0; t < tokens; ++t) {
                        const T* q = Q.row(b * tokens + t) + h * dh;
                        T* out = n.value.row((b * heads + h) * tokens + t);
                        for (std::int64_t u = 0; u < tokens; ++u) {
                            const T* k = Q.row(b * tokens + u) + dim + h * dh;
                            out[u] = sc * dot_lanes<T, 8>(q, k, dh);
                        }
                    }
        });
        return push(std::move(n));
    }

    // probs: [samples*heads*tokens x tokens]; qkv as in attn_scores.
    // Output: [samples*tokens x dim], heads re-interleaved.
    int attn_mix(int probs, int qkv, std::int64_t samples, std::int64_t tokens, std::int64_t heads) {
        const auto& P = nodes[probs].value;
        const auto& Q = nodes[qkv].value;
        const std::int64_t dim = Q.cols() / 3;
        const std::int64_t dh = dim / heads;
        if (P.rows() != samples * heads * tokens || P.cols() != tokens)
            throw DimError("attn_mix: bad probs shape " + P.shape_str());
        Node n = make(Op::AttnMix, probs, qkv, TensorT<T>({samples * tokens, dim}));
        n.p0 = samples;
        n.p1 = tokens;
        n.p2 = heads;
        parallel_for(0, samples, [&](std::int64_t b0, std::int64_t b1) {
            for (std::int64_t b = b0; b < b1; ++b)
                for (std::int64_t h = 0; h < heads; ++h)
                    for (std::int64_t t = 0; t < tokens; ++t) {
                        const T* pr = P.row((b * heads + h) * tokens + t);
                        T* out = n.value.row(b * tokens + t) + h * dh;
                        for (std::int64_t d = 0; d < dh; ++d) out[d] = T(0);
                        for (std::int64_t u = 0; u < tokens; ++u) {
                            const T* v = Q.row(b * tokens + u) + 2 * dim + h * dh;
                            const T p = pr[u];
                            for (std::int64_t d = 0; d < dh; ++d) out[d] += p * v[d];
                        }
                    }
        });
        return push(std::move(n));
    }

    // tokens: [samples*patch_tokens x dim]. Output prepends one class-token
    // row per sample and adds the position table (row 0 = class position).
    int add_cls_pos(int tokens, int cls, int pos, std::int64_t samples) {
        const auto& Tk = nodes[tokens].value;
        const auto& C = nodes[cls].value;
        const auto& P = nodes[pos].value;
        const std::int64_t dim = Tk.cols();
        const std::int64_t tp = Tk.rows() / samples;
        const std::int64_t tt = tp + 1;
        if (Tk.rows() != samples * tp || C.numel() != dim || P.rows() != tt || P.cols() != dim)
            throw DimError("add_cls_pos: inconsistent shapes");
        Node n = make(Op::AddClsPos, tokens, cls, TensorT<T>({samples * tt, dim}));
        n.in[2] = pos;
        n.p0 = samples;
        parallel_for(0, samples, [&](std::int64_t b0, std::int64_t b1) {
            for (std::int64_t b = b0; b < b1; ++b) {
                T* out = n.value.row(b * tt);
                for (std::int64_t j = 0; j < dim; ++j) out[j] = C[j] + P(0, j);
                for (std::int64_t t = 0; t < tp; ++t) {
                    const T* src = Tk.row(b * tp + t);
                    const T* pp = P.row(t + 1);
                    T* dst = n.value.row(b * tt + t + 1);
                    for (std::int64_t j = 0; j < dim; ++j) dst[j] = src[j] + pp[j];
                }
            }
        });
        return push(std::move(n));
    }

    int gather_rows(int x, std::vector<std::int64_t> indices) {
        const auto& X = nodes[x].value;
        for (std::int64_t idx : indices)
            if (idx < 0 || idx >= X.rows()) throw DimError("gather_rows: index out of range");
        Node n = make(Op::GatherRows, x, -1,
                      TensorT<T>({static_cast<std::int64_t>(indices.size()), X.cols()}));
        const std::int64_t c = X.cols();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const T* src = X.row(indices[i]);
            T* dst = n.value.row(static_cast<std::int64_t>(i));
            for (std::int64_t j = 0; j < c; ++j) dst[j] = src[j];
        }
        n.aux = std::move(indices);
        return push(std::move(n));
    }

    int reshape(int x, std::vector<std::int64_t> shape) {
        const auto& X = nodes[x].value;
        TensorT<T> v(std::move(shape));
        if (v.numel() != X.numel())
            throw DimError("reshape: element count mismatch");
        for (std::int64_t i = 0; i < X.numel(); ++i) v[i] = X[i];
        Node n = make(Op::Reshape, x, -1, std::move(v));
        return push(std::move(n));
    }

    int concat_rows(int a, int b) {
        const auto& A = nodes[a].value;
        const auto& B = nodes[b].value;
        if (A.cols() != B.cols())
            throw DimError("concat_rows: column mismatch");
        Node n = make(Op::ConcatRows, a, b, TensorT<T>({A.rows() + B.rows(), A.cols()}));
        const std::int64_t c = A.cols();
        for (std::int64_t i = 0; i < A.rows(); ++i)
            for (std::int64_t j = 0; j < c; ++j) n.value(i, j) = A(i, j);
        for (std::int64_t i = 0; i < B.rows(); ++i)
            for (std::int64_t j = 0; j < c; ++j) n.value(A.rows() + i, j) = B(i, j);
        n.p0 = A.rows();
        return push(std::move(n));
    }

    int slice_rows(int x, std::int64_t r0, std::int64_t len) {
        const auto& X = nodes[x].value;
        if (r0 < 0 || len <= 0 || r0 + len > X.rows())
            throw DimError("slice_rows: range out of bounds");
        Node n = make(Op::SliceRows, x, -1, TensorT<T>({len, X.cols()}));
        n.p0 = r0;
        for (std::int64_t i = 0; i < len; ++i)
            for (std::int64_t j = 0; j < X.cols(); ++j) n.value(i, j) = X(r0 + i, j);
        return push(std::move(n));
    }

    int slice_cols(int x, std::int64_t c0, std::int64_t len) {
        const auto& X = nodes[x].value;
        if (c0 < 0 || len <= 0 || c0 + len > X.cols())
            throw DimError("slice_cols: range out of bounds");
        Node n = make(Op::SliceCols, x, -1, TensorT<T>({X.rows(), len}));
        n.p0 = c0;
        for (std::int64_t i = 0; i < X.rows(); ++i)
            for (std::int64_t j = 0; j < len; ++j) n.value(i, j) = X(i, c0 + j);
        return push(std::move(n));
    }

    int mean_all(int x) {
        const auto& X = nodes[x].value;
        Node n = make(Op::MeanAll, x, -1, TensorT<T>({1}));
        T s = T(0);
        for (std::int64_t i = 0; i < X.numel(); ++i) s += X[i];
        n.value[0] = s / static_cast<T>(X.numel());
        return push(std::move(n));
    }

    // Scalar-loss entry point: seeds d(loss)/d(loss) = 1.
    void backward(int loss_node) {
        if (nodes[loss_node].value.numel() != 1)
            throw ParamError("backward: loss node must be scalar");
        TensorT<T> seed({1});
        seed[0] = T(1);
        backward_seeded(loss_node, seed);
    }

    // Vector-Jacobian entry point used when an external loss supplies
    // d(loss)/d(node). Grad buffers are reset on every call.
    void backward_seeded(int out_node, const TensorT<T>& seed) {
        if (!nodes[out_node].value.same_shape(seed))
            throw DimError("backward_seeded: seed shape mismatch");
        // Restrict the sweep to ancestors of the output that need grads.
        std::vector<char> reached(nodes.size(), 0);
        std::vector<int> stack{out_node};
        reached[out_node] = 1;
        while (!stack.empty()) {
            const int id = stack.back();
            stack.pop_back();
            for (int in : nodes[id].in)
                if (in >= 0 && nodes[in].needs_grad && !reached[in]) {
                    reached[in] = 1;
                    stack.push_back(in);
                }
        }
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (reached[i])
                nodes[i].grad.assign(static_cast<std::size_t>(nodes[i].value.numel()), T(0));
            else
                nodes[i].grad.clear();
        }
        auto& g0 = nodes[out_node].grad;
        for (std::int64_t i = 0; i < seed.numel(); ++i) g0[i] = seed[i];
        for (int id = out_node; id >= 0; --id) {
            if (!reached[id] || nodes[id].op == Op::Leaf) continue;
            backward_op(id);
        }
    }

private:
    Node make(Op op, int a, int b, TensorT<T> value) {
        Node n;
        n.op = op;
        n.in[0] = a;
        n.in[1] = b;
        n.needs_grad = (a >= 0 && nodes[a].needs_grad) || (b >= 0 && nodes[b].needs_grad);
        n.value = std::move(value);
        return n;
    }

    int push(Node n) {
        if (n.op != Op::Softmax)  // softmax validated its input already
            n.value.check_finite(op_name(n.op));
        nodes.push_back(std::move(n));
        return static_cast<int>(nodes.size()) - 1;
    }

    static const char* op_name(Op op) {
        switch (op) {
            case Op::Leaf: return "leaf";
            case Op::Matmul: return "matmul";
            case Op::Add: return "add";
            case Op::AddRow: return "add_row";
            case Op::Mul: return "mul";
            case Op::Scale: return "scale";
            case Op::LayerNorm: return "layernorm";
            case Op::Gelu: return "gelu";
            case Op::Softmax: return "softmax";
            case Op::AttnScores: return "attn_scores";
            case Op::AttnMix: return "attn_mix";
            case Op::AddClsPos: return "add_cls_pos";
            case Op::GatherRows: return "gather_rows";
            case Op::Reshape: return "reshape";
            case Op::ConcatRows: return "concat_rows";
            case Op::SliceRows: return "slice_rows";
            case Op::SliceCols: return "slice_cols";
            case Op::MeanAll: return "mean_all";
        }
        return "?";
    }

    bool wants(int id) const { return id >= 0 && !nodes[id].grad.empty(); }

    void backward_op(int id) {
        Node& n = nodes[id];
        const std::vector<T>& gy = n.grad;
        switch (n.op) {
            case Op::Matmul: {
                const auto& A = nodes[n.in[0]].value;
                const auto& B = nodes[n.in[1]].value;
                const std::int64_t m = A.dim(0), k = A.dim(1), c = B.dim(1);
                if (wants(n.in[0]))  // dA += gy * B^T
                    gemm_nt(gy.data(), B.data(), nodes[n.in[0]].grad.data(), m, c, k, true);
                if (wants(n.in[1]))  // dB += A^T * gy
                    gemm_tn(A.data(), gy.data(), nodes[n.in[1]].grad.data(), m, k, c, true);
                break;
            }
            case Op::Add: {
                for (int s = 0; s < 2; ++s)
                    if (wants(n.in[s])) {
                        auto& gx = nodes[n.in[s]].grad;
                        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                    }
                break;
            }
            case Op::AddRow: {
                const std::int64_t m = n.value.rows(), c = n.value.cols();
                if (wants(n.in[0])) {
                    auto& gx = nodes[n.in[0]].grad;
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                }
                if (wants(n.in[1])) {
                    T* gb = nodes[n.in[1]].grad.data();
                    parallel_for(0, c, [&](std::int64_t j0, std::int64_t j1) {
                        for (std::int64_t j = j0; j < j1; ++j) {
                            T s = T(0);
                            for (std::int64_t i = 0; i < m; ++i) s += gy[i * c + j];
                            gb[j] += s;
                        }
                    });
                }
                break;
            }
            case Op::Mul: {
                const auto& A = nodes[n.in[0]].value;
                const auto& B = nodes[n.in[1]].value;
                if (wants(n.in[0])) {
                    auto& gx = nodes[n.in[0]].grad;
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * B[static_cast<std::int64_t>(i)];
                }
                if (wants(n.in[1])) {
                    auto& gx = nodes[n.in[1]].grad;
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * A[static_cast<std::int64_t>(i)];
                }
                break;
            }
            case Op::Scale: {
                if (wants(n.in[0])) {
                    auto& gx = nodes[n.in[0]].grad;
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += n.scale * gy[i];
                }
                break;
            }
            case Op::LayerNorm: {
                const auto& X = nodes[n.in[0]].value;
                const auto& G = nodes[n.in[1]].value;
                const std::int64_t m = X.rows(), c = X.cols();
                const T* stats = n.saved.data();
                if (wants(n.in[0])) {
                    T* gx = nodes[n.in[0]].grad.data();
                    const T* pg = G.data();
                    parallel_for(0, m, [&](std::int64_t i0, std::int64_t i1) {
                        for (std::int64_t i = i0; i < i1; ++i) {
                            const T mu = stats[2 * i], rstd = stats[2 * i + 1];
                            const T* px = X.row(i);
                            const T* gyr = gy.data() + i * c;
                            T m1 = T(0), m2 = T(0);
                            for (std::int64_t j = 0; j < c; ++j) {
                                const T xh = (px[j] - mu) * rstd;
                                const T dxh = gyr[j] * pg[j];
                                m1 += dxh;
                                m2 += dxh * xh;
                            }
                            m1 /= static_cast<T>(c);
                            m2 /= static_cast<T>(c);
                            T* gxr = gx + i * c;
                            for (std::int64_t j = 0; j < c; ++j) {
                                const T xh = (px[j] - mu) * rstd;
                                gxr[j] += rstd * (gyr[j] * pg[j] - m1 - xh * m2);
                            }
                        }
                    });
                }
                if (wants(n.in[1]) || wants(n.in[2])) {
                    T* gg = wants(n.in[1]) ? nodes[n.in[1]].grad.data() : nullptr;
                    T* gb = wants(n.in[2]) ? nodes[n.in[2]].grad.data() : nullptr;
                    parallel_for(0, c, [&](std::int64_t j0, std::int64_t j1) {
                        for (std::int64_t j = j0; j < j1; ++j) {
                            T sg = T(0), sb = T(0);
                            for (std::int64_t i = 0; i < m; ++i) {
                                const T xh = (X(i, j) - stats[2 * i]) * stats[2 * i + 1];
                                sg += gy[i * c + j] * xh;
                                sb += gy[i * c + j];
                            }
                            if (gg) gg[j] += sg;
                            if (gb) gb[j] += sb;
                        }
                    });
                }
                break;
            }
            case Op::Gelu: {
                if (!wants(n.in[0])) break;
                const auto& X = nodes[n.in[0]].value;
                T* gx = nodes[n.in[0]].grad.data();
                const std::int64_t len = X.numel();
                const T* px = X.data();
                parallel_for(0, len, [&](std::int64_t i0, std::int64_t i1) {
                    for (std::int64_t i = i0; i < i1; ++i) {
                        const T v = px[i];
                        const T cdf = T(0.5) * (T(1) + std::erf(v * T(0.7071067811865475)));
                        const T pdf = std::exp(T(-0.5) * v * v) * T(0.3989422804014327);
                        gx[i] += gy[i] * (cdf + v * pdf);
                    }
                });
                break;
            }
            case Op::Softmax: {
                if (!wants(n.in[0])) break;
                const std::int64_t m = n.value.rows(), c = n.value.cols();
                T* gx = nodes[n.in[0]].grad.data();
                parallel_for(0, m, [&](std::int64_t i0, std::int64_t i1) {
                    for (std::int64_t i = i0; i < i1; ++i) {
                        const T* p = n.value.row(i);
                        const T* gyr = gy.data() + i * c;
                        T dot = T(0);
                        for (std::int64_t j = 0; j < c; ++j) dot += gyr[j] * p[j];
                        T* gxr = gx + i * c;
                        for (std::int64_t j = 0; j < c; ++j) gxr[j] += p[j] * (gyr[j] - dot);
                    }
                });
                break;
            }
            case Op::AttnScores: {
                if (!wants(n.in[0])) break;
                const auto& Q = nodes[n.in[0]].value;
                T* gq = nodes[n.in[0]].grad.data();
                const std::int64_t samples = n.p0, tokens = n.p1, heads = n.p2;
                const std::int64_t dim = Q.cols() / 3;
                const std::int64_t dh = dim / heads;
                const std::int64_t stride = Q.cols();
                const T sc = n.scale;
                parallel_for(0, samples, [&](std::int64_t b0, std::int64_t b1) {
                    for (std::int64_t b = b0; b < b1; ++b)
                        for (std::int64_t h = 0; h < heads; ++h)
                            for (std::int64_t t = 0; t < tokens; ++t) {
                                const T* gs = gy.data() + ((b * heads + h) * tokens + t) * tokens;
                                T* gqr = gq + (b * tokens + t) * stride + h * dh;
                                for (std::int64_t u = 0; u < tokens; ++u) {
                                    const T g = sc * gs[u];
                                    const T* k = Q.row(b * tokens + u) + dim + h * dh;
                                    T* gkr = gq + (b * tokens + u) * stride + dim + h * dh;
                                    const T* q = Q.row(b * tokens + t) + h * dh;
                                    for (std::int64_t d = 0; d < dh; ++d) {
                                        gqr[d] += g * k[d];
                                        gkr[d] += g * q[d];
                                    }
                                }
                            }
                });
                break;
            }
            case Op::AttnMix: {
                const auto& P = nodes[n.in[0]].value;
                const auto& Q = nodes[n.in[1]].value;
                const std::int64_t samples = n.p0, tokens = n.p1, heads = n.p2;
                const std::int64_t dim = Q.cols() / 3;
                const std::int64_t dh = dim / heads;
                const std::int64_t stride = Q.cols();
                T* gp = wants(n.in[0]) ? nodes[n.in[0]].grad.data() : nullptr;
                T* gq = wants(n.in[1]) ? nodes[n.in[1]].grad.data() : nullptr;
                parallel_for(0, samples, [&](std::int64_t b0, std::int64_t b1) {
                    for (std::int64_t b = b0; b < b1; ++b)
                        for (std::int64_t h = 0; h < heads; ++h)
                            for (std::int64_t t = 0; t < tokens; ++t) {
                                const T* go = gy.data() + (b * tokens + t) * dim + h * dh;
                                const T* pr = P.row((b * heads + h) * tokens + t);
                                for (std::int64_t u = 0; u < tokens; ++u) {
                                    const T* v = Q.row(b * tokens + u) + 2 * dim + h * dh;
                                    if (gp) {
                                        T s = T(0);
                                        for (std::int64_t d = 0; d < dh; ++d) s += go[d] * v[d];
                                        gp[((b * heads + h) * tokens + t) * tokens + u] += s;
                                    }
                                    if (gq) {
                                        T* gv = gq + (b * tokens + u) * stride + 2 * dim + h * dh;
                                        const T p = pr[u];
                                        for (std::int64_t d = 0; d < dh; ++d) gv[d] += p * go[d];
                                    }
                                }
                            }
                });
                break;
            }
            case Op::AddClsPos: {
                const auto& Tk = nodes[n.in[0]].value;
                const std::int64_t samples = n.p0;
                const std::int64_t dim = Tk.cols();
                const std::int64_t tp = Tk.rows() / samples;
                const std::int64_t tt = tp + 1;
                if (wants(n.in[0])) {
                    T* gt = nodes[n.in[0]].grad.data();
                    parallel_for(0, samples, [&](std::int64_t b0, std::int64_t b1) {
                        for (std::int64_t b = b0; b < b1; ++b)
                            for (std::int64_t t = 0; t < tp; ++t) {
                                const T* g = gy.data() + (b * tt + t + 1) * dim;
                                T* dst = gt + (b * tp + t) * dim;
                                for (std::int64_t j = 0; j < dim; ++j) dst[j] += g[j];
                            }
                    });
                }
                if (wants(n.in[1])) {
                    T* gc = nodes[n.in[1]].grad.data();
                    for (std::int64_t b = 0; b < samples; ++b) {
                        const T* g = gy.data() + b * tt * dim;
                        for (std::int64_t j = 0; j < dim; ++j) gc[j] += g[j];
                    }
                }
                if (wants(n.in[2])) {
                    T* gpos = nodes[n.in[2]].grad.data();
                    parallel_for(0, tt, [&](std::int64_t t0, std::int64_t t1) {
                        for (std::int64_t t = t0; t < t1; ++t)
                            for (std::int64_t b = 0; b < samples; ++b) {
                                const T* g = gy.data() + (b * tt + t) * dim;
                                T* dst = gpos + t * dim;
                                for (std::int64_t j = 0; j < dim; ++j) dst[j] += g[j];
                            }
                    });
                }
                break;
            }
            case Op::GatherRows: {
                if (!wants(n.in[0])) break;
                T* gx = nodes[n.in[0]].grad.data();
                const std::int64_t c = n.value.cols();
                for (std::size_t i = 0; i < n.aux.size(); ++i) {
                    const T* g = gy.data() + static_cast<std::int64_t>(i) * c;
                    T* dst = gx + n.aux[i] * c;
                    for (std::int64_t j = 0; j < c; ++j) dst[j] += g[j];
                }
                break;
            }
            case Op::Reshape: {
                if (!wants(n.in[0])) break;
                auto& gx = nodes[n.in[0]].grad;
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                break;
            }
            case Op::ConcatRows: {
                const std::int64_t c = n.value.cols();
                const std::int64_t ra = n.p0;
                if (wants(n.in[0])) {
                    auto& gx = nodes[n.in[0]].grad;
                    for (std::int64_t i = 0; i < ra * c; ++i) gx[i] += gy[i];
                }
                if (wants(n.in[1])) {
                    auto& gx = nodes[n.in[1]].grad;
                    const std::size_t off = static_cast<std::size_t>(ra * c);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[off + i];
                }
                break;
            }
            case Op::SliceRows: {
                if (!wants(n.in[0])) break;
                T* gx = nodes[n.in[0]].grad.data();
                const std::int64_t c = n.value.cols();
                const std::size_t off = static_cast<std::size_t>(n.p0 * c);
                for (std::size_t i = 0; i < gy.size(); ++i) gx[off + i] += gy[i];
                break;
            }
            case Op::SliceCols: {
                if (!wants(n.in[0])) break;
                const auto& X = nodes[n.in[0]].value;
                T* gx = nodes[n.in[0]].grad.data();
                const std::int64_t len = n.value.cols();
                for (std::int64_t i = 0; i < n.value.rows(); ++i)
                    for (std::int64_t j = 0; j < len; ++j)
                        gx[i * X.cols() + n.p0 + j] += gy[static_cast<std::size_t>(i * len + j)];
                break;
            }
            case Op::MeanAll: {
                if (!wants(n.in[0])) break;
                auto& gx = nodes[n.in[0]].grad;
                const T g = gy[0] / static_cast<T>(gx.size());
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
                break;
            }
            case Op::Leaf:
                break;
        }
    }
};

using Tape = TapeT<float>;

} // namespace idmm
