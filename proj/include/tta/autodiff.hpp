#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tta/errors.hpp"
#include "tta/tensor.hpp"

// Minimal reverse-mode tape over whole tensors. A Tape owns nodes created by
// the op builders below; backward(root) accumulates gradients into every node
// that the root depends on. The op set is exactly what the dual-encoder
// forward pass and the attack losses need; it is not a general framework.
namespace tta::ad {

using NodeId = std::uint32_t;

namespace detail {

// C += A * B, row-major, ikj order.
inline void matmul_acc(Tensor& c, const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            double* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T.
inline void matmul_nt_acc(Tensor& c, const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        double* crow = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b.data() + j * k;
            double dot = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) dot += arow[kk] * brow[kk];
            crow[j] += dot;
        }
    }
}

// C += A^T * B, with A {M,K}, B {M,N}, C {K,N}.
inline void matmul_tn_acc(Tensor& c, const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * k;
        const double* brow = b.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* crow = c.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline constexpr double kGeluScale = 0.7978845608028654; // sqrt(2/pi)
inline constexpr double kGeluCubic = 0.044715;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kMaskValue = -1e30;

inline double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

inline double gelu_derivative(double x) {
    const double t = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
    const double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
}

} // namespace detail

class Tape {
public:
    NodeId leaf(Tensor value) { return push(std::move(value), nullptr); }

    // Leaf that never needs a gradient (model weights, precomputed targets).
    // The matmul-family backward closures skip accumulating into these, which
    // drops roughly a third of the attack's backward cost; gradients read
    // from constant nodes are not meaningful.
    NodeId constant(Tensor value) {
        NodeId id = push(std::move(value), nullptr);
        tracking_[id] = 0;
        return id;
    }

    bool tracks(NodeId id) const { return tracking_[id] != 0; }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }

    // Gradient of the last backward() root w.r.t. node id (zeros if the root
    // does not depend on it).
    const Tensor& grad(NodeId id) {
        ensure_grad(id);
        return grads_[id];
    }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(NodeId root) {
        if (value(root).size() != 1)
            throw ParameterError("backward: root must be scalar");
        grads_.assign(nodes_.size(), Tensor());
        touched_.assign(nodes_.size(), 0);
        grad_acc(root)[0] = 1.0;
        for (std::size_t i = root + 1; i-- > 0;) {
            cursor_ = i;
            if (touched_[i] && nodes_[i].back) nodes_[i].back(*this);
        }
    }

    // ---- elementwise / structural ops ----

    NodeId add(NodeId a, NodeId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (!va.same_dims(vb)) throw ParameterError("add: dims mismatch");
        Tensor out = va;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return push(std::move(out), [a, b](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& ga = t.grad_acc(a);
            Tensor& gb = t.grad_acc(b);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        });
    }

    // m {R,C} + v {C} broadcast over rows.
    NodeId add_rowvec(NodeId m, NodeId v) {
        const Tensor& vm = value(m);
        const Tensor& vv = value(v);
        if (vm.rank() != 2 || vv.rank() != 1 || vm.cols() != vv.size())
            throw ParameterError("add_rowvec: dims mismatch");
        Tensor out = vm;
        for (std::size_t r = 0; r < vm.rows(); ++r)
            for (std::size_t c = 0; c < vm.cols(); ++c) out.at(r, c) += vv[c];
        return push(std::move(out), [m, v](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& gm = t.grad_acc(m);
            Tensor& gv = t.grad_acc(v);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    gm.at(r, c) += g.at(r, c);
                    gv[c] += g.at(r, c);
                }
        });
    }

    NodeId scale(NodeId a, double factor) { return affine(a, factor, 0.0); }

    // Elementwise mul * x + shift.
    NodeId affine(NodeId a, double mul, double shift) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = mul * out[i] + shift;
        return push(std::move(out), [a, mul](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& ga = t.grad_acc(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += mul * g[i];
        });
    }

    NodeId slice_rows(NodeId a, std::size_t begin, std::size_t count) {
        const Tensor& va = value(a);
        if (va.rank() != 2 || begin + count > va.rows() || count == 0)
            throw ParameterError("slice_rows: range out of bounds");
        Tensor out = Tensor::matrix(count, va.cols());
        std::copy_n(va.data() + begin * va.cols(), count * va.cols(), out.data());
        return push(std::move(out), [a, begin](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& ga = t.grad_acc(a);
            double* dst = ga.data() + begin * ga.cols();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        });
    }

    NodeId slice_cols(NodeId a, std::size_t begin, std::size_t count) {
        const Tensor& va = value(a);
        if (va.rank() != 2 || begin + count > va.cols() || count == 0)
            throw ParameterError("slice_cols: range out of bounds");
        Tensor out = Tensor::matrix(va.rows(), count);
        for (std::size_t r = 0; r < va.rows(); ++r)
            std::copy_n(va.data() + r * va.cols() + begin, count, out.data() + r * count);
        return push(std::move(out), [a, begin, count](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& ga = t.grad_acc(a);
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < count; ++c)
                    ga.at(r, begin + c) += g.at(r, c);
        });
    }

    // Matrix row as a rank-1 vector.
    NodeId row(NodeId a, std::size_t r) {
        const Tensor& va = value(a);
        if (va.rank() != 2 || r >= va.rows())
            throw ParameterError("row: index out of bounds");
        Tensor out = Tensor::vector(va.cols());
        std::copy_n(va.data() + r * va.cols(), va.cols(), out.data());
        return push(std::move(out), [a, r](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& ga = t.grad_acc(a);
            double* dst = ga.data() + r * ga.cols();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        });
    }

    NodeId concat_rows(NodeId a, NodeId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.cols())
            throw ParameterError("concat_rows: dims mismatch");
        Tensor out = Tensor::matrix(va.rows() + vb.rows(), va.cols());
        std::copy_n(va.data(), va.size(), out.data());
        std::copy_n(vb.data(), vb.size(), out.data() + va.size());
        const std::size_t split = va.size();
        return push(std::move(out), [a, b, split](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& ga = t.grad_acc(a);
            Tensor& gb = t.grad_acc(b);
            for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
            for (std::size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
        });
    }

    NodeId concat_cols(std::span<const NodeId> parts) {
        if (parts.empty()) throw ParameterError("concat_cols: no parts");
        const std::size_t rows = value(parts[0]).rows();
        std::size_t total = 0;
        for (NodeId p : parts) {
            if (value(p).rank() != 2 || value(p).rows() != rows)
                throw ParameterError("concat_cols: dims mismatch");
            total += value(p).cols();
        }
        Tensor out = Tensor::matrix(rows, total);
        std::size_t offset = 0;
        for (NodeId p : parts) {
            const Tensor& vp = value(p);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(vp.data() + r * vp.cols(), vp.cols(),
                            out.data() + r * total + offset);
            offset += vp.cols();
        }
        std::vector<NodeId> owned(parts.begin(), parts.end());
        return push(std::move(out), [owned, rows, total](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            std::size_t offset = 0;
            for (NodeId p : owned) {
                Tensor& gp = t.grad_acc(p);
                const std::size_t c = gp.cols();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < c; ++j)
                        gp.at(r, j) += g[r * total + offset + j];
                offset += c;
            }
        });
    }

    NodeId mean_rows(NodeId a) {
        const Tensor& va = value(a);
        if (va.rank() != 2) throw ParameterError("mean_rows: rank-2 tensor required");
        const std::size_t n = va.rows(), d = va.cols();
        Tensor out = Tensor::vector(d);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) out[c] += va.at(r, c);
        for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(n);
        return push(std::move(out), [a, n](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& ga = t.grad_acc(a);
            const double inv = 1.0 / static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < g.size(); ++c)
                    ga.at(r, c) += g[c] * inv;
        });
    }

    // ---- linear algebra ----

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows())
            throw ParameterError("matmul: dims mismatch");
        Tensor out = Tensor::matrix(va.rows(), vb.cols());
        detail::matmul_acc(out, va, vb);
        return push(std::move(out), [a, b](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            if (t.tracks(a)) detail::matmul_nt_acc(t.grad_acc(a), g, t.value(b));
            if (t.tracks(b)) detail::matmul_tn_acc(t.grad_acc(b), t.value(a), g);
        });
    }

    // a * b^T with b given row-major (used for attention scores q k^T).
    NodeId matmul_nt(NodeId a, NodeId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.cols())
            throw ParameterError("matmul_nt: dims mismatch");
        Tensor out = Tensor::matrix(va.rows(), vb.rows());
        detail::matmul_nt_acc(out, va, vb);
        return push(std::move(out), [a, b](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            if (t.tracks(a)) detail::matmul_acc(t.grad_acc(a), g, t.value(b));
            if (t.tracks(b)) detail::matmul_tn_acc(t.grad_acc(b), g, t.value(a));
        });
    }

    // v {K} * m {K,N} -> {N}.
    NodeId vecmat(NodeId v, NodeId m) {
        const Tensor& vv = value(v);
        const Tensor& vm = value(m);
        if (vv.rank() != 1 || vm.rank() != 2 || vv.size() != vm.rows())
            throw ParameterError("vecmat: dims mismatch");
        const std::size_t k = vv.size(), n = vm.cols();
        Tensor out = Tensor::vector(n);
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = vv[kk];
            for (std::size_t j = 0; j < n; ++j) out[j] += av * vm.at(kk, j);
        }
        return push(std::move(out), [v, m](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            const Tensor& vv = t.value(v);
            const Tensor& vm = t.value(m);
            if (t.tracks(v)) {
                Tensor& gv = t.grad_acc(v);
                for (std::size_t kk = 0; kk < vv.size(); ++kk) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < g.size(); ++j) acc += vm.at(kk, j) * g[j];
                    gv[kk] += acc;
                }
            }
            if (t.tracks(m)) {
                Tensor& gm = t.grad_acc(m);
                for (std::size_t kk = 0; kk < vv.size(); ++kk)
                    for (std::size_t j = 0; j < g.size(); ++j)
                        gm.at(kk, j) += vv[kk] * g[j];
            }
        });
    }

    // ---- nonlinear ops ----

    NodeId gelu(NodeId a) {
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(out[i]);
        return push(std::move(out), [a](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            const Tensor& x = t.value(a);
            Tensor& ga = t.grad_acc(a);
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * detail::gelu_derivative(x[i]);
        });
    }

    // Row-wise softmax; with causal=true, entries j > i of row i are masked
    // out before normalization (text tower attention).
    NodeId softmax_rows(NodeId a, bool causal = false) {
        const Tensor& va = value(a);
        if (va.rank() != 2) throw ParameterError("softmax_rows: rank-2 tensor required");
        if (causal && va.rows() != va.cols())
            throw ParameterError("softmax_rows: causal mask requires square scores");
        Tensor out = va;
        for (std::size_t r = 0; r < out.rows(); ++r) {
            auto row = out.row_span(r);
            if (causal)
                for (std::size_t c = r + 1; c < row.size(); ++c) row[c] = detail::kMaskValue;
            double top = row[0];
            for (double x : row) top = std::max(top, x);
            double sum = 0.0;
            for (double& x : row) {
                x = std::exp(x - top);
                sum += x;
            }
            for (double& x : row) x /= sum;
        }
        return push(std::move(out), [a](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            const Tensor& s = t.value(t.cursor_);
            Tensor& ga = t.grad_acc(a);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < g.cols(); ++c) dot += g.at(r, c) * s.at(r, c);
                for (std::size_t c = 0; c < g.cols(); ++c)
                    ga.at(r, c) += s.at(r, c) * (g.at(r, c) - dot);
            }
        });
    }

    // Per-row layer normalization with learned gain/bias. Accepts a rank-1
    // input as a single row.
    NodeId layer_norm(NodeId a, NodeId gamma, NodeId beta) {
        const Tensor& va = value(a);
        const Tensor& vg = value(gamma);
        const Tensor& vb = value(beta);
        const std::size_t d = va.rank() == 1 ? va.size() : va.cols();
        const std::size_t n = va.rank() == 1 ? 1 : va.rows();
        if (vg.size() != d || vb.size() != d)
            throw ParameterError("layer_norm: parameter dims mismatch");
        Tensor out = va;
        for (std::size_t r = 0; r < n; ++r) {
            double* x = out.data() + r * d;
            double mean = 0.0;
            for (std::size_t c = 0; c < d; ++c) mean += x[c];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t c = 0; c < d; ++c) var += (x[c] - mean) * (x[c] - mean);
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
            for (std::size_t c = 0; c < d; ++c)
                x[c] = (x[c] - mean) * inv * vg[c] + vb[c];
        }
        return push(std::move(out), [a, gamma, beta, n, d](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            const Tensor& x = t.value(a);
            const Tensor& vg = t.value(gamma);
            Tensor& ga = t.grad_acc(a);
            Tensor& ggamma = t.grad_acc(gamma);
            Tensor& gbeta = t.grad_acc(beta);
            const double dn = static_cast<double>(d);
            for (std::size_t r = 0; r < n; ++r) {
                const double* xr = x.data() + r * d;
                const double* gr = g.data() + r * d;
                double* gar = ga.data() + r * d;
                double mean = 0.0;
                for (std::size_t c = 0; c < d; ++c) mean += xr[c];
                mean /= dn;
                double var = 0.0;
                for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
                var /= dn;
                const double inv = 1.0 / std::sqrt(var + detail::kLayerNormEps);
                double sum_gx = 0.0;   // sum of dxhat
                double sum_gxx = 0.0;  // sum of dxhat * xhat
                for (std::size_t c = 0; c < d; ++c) {
                    const double xhat = (xr[c] - mean) * inv;
                    const double dxhat = gr[c] * vg[c];
                    sum_gx += dxhat;
                    sum_gxx += dxhat * xhat;
                    ggamma[c] += gr[c] * xhat;
                    gbeta[c] += gr[c];
                }
                for (std::size_t c = 0; c < d; ++c) {
                    const double xhat = (xr[c] - mean) * inv;
                    const double dxhat = gr[c] * vg[c];
                    gar[c] += inv * (dxhat - sum_gx / dn - xhat * sum_gxx / dn);
                }
            }
        });
    }

    // Rearranges an {H,W,C} image into a {num_patches, patch*patch*C} matrix.
    // Patch p = (py, px) in row-major patch order; within a patch, features
    // run over (dy, dx, channel).
    NodeId extract_patches(NodeId image, std::size_t patch) {
        const Tensor& vi = value(image);
        if (vi.rank() != 3) throw ParameterError("extract_patches: image tensor required");
        const std::size_t h = vi.dims()[0], w = vi.dims()[1], ch = vi.dims()[2];
        if (h % patch != 0 || w % patch != 0)
            throw ParameterError("extract_patches: image size not divisible by patch size");
        const std::size_t ph = h / patch, pw = w / patch;
        const std::size_t feat = patch * patch * ch;
        Tensor out = Tensor::matrix(ph * pw, feat);
        for (std::size_t py = 0; py < ph; ++py)
            for (std::size_t px = 0; px < pw; ++px) {
                double* dst = out.data() + (py * pw + px) * feat;
                for (std::size_t dy = 0; dy < patch; ++dy)
                    for (std::size_t dx = 0; dx < patch; ++dx)
                        for (std::size_t c = 0; c < ch; ++c)
                            *dst++ = vi[((py * patch + dy) * w + (px * patch + dx)) * ch + c];
            }
        return push(std::move(out), [image, patch](Tape& t) {
            const Tensor& g = t.grads_[t.cursor_];
            Tensor& gi = t.grad_acc(image);
            const std::size_t h = gi.dims()[0], w = gi.dims()[1], ch = gi.dims()[2];
            const std::size_t ph = h / patch, pw = w / patch;
            const std::size_t feat = patch * patch * ch;
            for (std::size_t py = 0; py < ph; ++py)
                for (std::size_t px = 0; px < pw; ++px) {
                    const double* src = g.data() + (py * pw + px) * feat;
                    for (std::size_t dy = 0; dy < patch; ++dy)
                        for (std::size_t dx = 0; dx < patch; ++dx)
                            for (std::size_t c = 0; c < ch; ++c)
                                gi[((py * patch + dy) * w + (px * patch + dx)) * ch + c] += *src++;
                }
        });
    }

    // Inner product of two same-shape tensors as a {1} scalar node.
    NodeId inner(NodeId a, NodeId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (!va.same_dims(vb)) throw ParameterError("inner: dims mismatch");
        double dot = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) dot += va[i] * vb[i];
        return push(Tensor::scalar(dot), [a, b](Tape& t) {
            const double g = t.grads_[t.cursor_][0];
            const Tensor& va = t.value(a);
            const Tensor& vb = t.value(b);
            Tensor& ga = t.grad_acc(a);
            Tensor& gb = t.grad_acc(b);
            for (std::size_t i = 0; i < va.size(); ++i) {
                ga[i] += g * vb[i];
                gb[i] += g * va[i];
            }
        });
    }

    // Cosine similarity of two equal-length vectors as a {1} scalar node.
    // Value clamped to [-1, 1]; the clamp is treated as identity in the
    // gradient (only reachable at exact colinearity).
    NodeId cosine(NodeId a, NodeId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.size() != vb.size())
            throw ParameterError("cosine: dims mismatch");
        double na = 0.0, nb = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            na += va[i] * va[i];
            nb += vb[i] * vb[i];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        if (na == 0.0 || nb == 0.0)
            throw DegenerateInputError("cosine: zero-norm input");
        double dot = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i)
            dot += (va[i] / na) * (vb[i] / nb);
        Tensor out = Tensor::scalar(std::clamp(dot, -1.0, 1.0));
        return push(std::move(out), [a, b, na, nb, dot](Tape& t) {
            const double g = t.grads_[t.cursor_][0];
            const Tensor& va = t.value(a);
            const Tensor& vb = t.value(b);
            Tensor& ga = t.grad_acc(a);
            Tensor& gb = t.grad_acc(b);
            for (std::size_t i = 0; i < va.size(); ++i) {
                const double ahat = va[i] / na;
                const double bhat = vb[i] / nb;
                ga[i] += g * (bhat - dot * ahat) / na;
                gb[i] += g * (ahat - dot * bhat) / nb;
            }
        });
    }

    // 1 - cosine(a, b).
    NodeId cosine_distance(NodeId a, NodeId b) { return affine(cosine(a, b), -1.0, 1.0); }

private:
    struct Node {
        Tensor value;
        std::function<void(Tape&)> back;
    };

    NodeId push(Tensor value, std::function<void(Tape&)> back) {
        if (!value.all_finite())
            throw EvaluationError("tape: op produced a non-finite value");
        nodes_.push_back(Node{std::move(value), std::move(back)});
        tracking_.push_back(1);
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void ensure_grad(NodeId id) {
        if (grads_.size() != nodes_.size()) {
            grads_.assign(nodes_.size(), Tensor());
            touched_.assign(nodes_.size(), 0);
        }
        if (!touched_[id]) {
            grads_[id] = Tensor(nodes_[id].value.dims());
            touched_[id] = 1;
        }
    }

    Tensor& grad_acc(NodeId id) {
        ensure_grad(id);
        return grads_[id];
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
    std::vector<char> touched_;
    std::vector<char> tracking_;
    // Index of the node whose backward closure is currently running; closures
    // read their own output gradient through it.
    std::size_t cursor_ = 0;
};

} // namespace tta::ad
