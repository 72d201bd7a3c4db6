#pragma once

// Reverse-mode autodiff over dense tensors. A GradTape records forward ops in
// creation order together with the state their backward pass needs; replaying
// the tape backward accumulates gradients additively into every node that
// (transitively) depends on a trainable leaf. One tape serves one training
// step on one thread.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "patchwave/rng.hpp"
#include "patchwave/tensor.hpp"

namespace patchwave {

using ValueId = int32_t;

namespace detail {

// C = A(m×k)·B(k×n), row-major. ikj order so the inner loop runs over
// contiguous rows of B and C. Each output row has a single writer, so the
// result is identical for any thread count.
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        const T* arow = a + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            if (aik == T(0)) continue;
            const T* brow = b + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C = A(m×n)·Bᵀ with B (k×n): c[i][kk] = dot(a_i, b_kk). B is transposed
// into a scratch buffer so the bulk of the work runs through the fast nn
// kernel instead of strided dot products.
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k, bool accumulate) {
    std::vector<T> bt(static_cast<size_t>(n * k));
    constexpr int64_t tile = 64;
    for (int64_t j0 = 0; j0 < n; j0 += tile) {
        const int64_t j1 = std::min(n, j0 + tile);
        for (int64_t kk0 = 0; kk0 < k; kk0 += tile) {
            const int64_t kk1 = std::min(k, kk0 + tile);
            for (int64_t kk = kk0; kk < kk1; ++kk) {
                for (int64_t j = j0; j < j1; ++j) bt[static_cast<size_t>(j * k + kk)] = b[kk * n + j];
            }
        }
    }
    gemm_nn(a, bt.data(), c, m, n, k, accumulate);
}

// C = Aᵀ·G with A (m×k), G (m×n): c[kk][j] = sum_i a[i][kk]·g[i][j].
// Parallelised over kk so each output row has a single writer.
template <class T>
void gemm_tn(const T* a, const T* g, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t kk = 0; kk < k; ++kk) {
        T* crow = c + kk * n;
        if (!accumulate) std::fill(crow, crow + n, T(0));
        for (int64_t i = 0; i < m; ++i) {
            const T aik = a[i * k + kk];
            if (aik == T(0)) continue;
            const T* grow = g + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += aik * grow[j];
        }
    }
}

}  // namespace detail

template <class T>
class GradTape {
public:
    using BackwardFn = std::function<void(GradTape&)>;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // allocated by backward() when needs_grad
        bool needs_grad = false;
        bool trainable_leaf = false;
        BackwardFn backward;
        const char* op = "";
    };

    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    // Finiteness checking enforces the tensor invariant after every forward
    // op. Disable only when profiling.
    bool check_finite = true;

    ValueId leaf(const Tensor<T>& t, bool trainable) {
        Node n;
        n.value = t;
        n.needs_grad = trainable;
        n.trainable_leaf = trainable;
        n.op = "leaf";
        nodes_.push_back(std::move(n));
        return last();
    }

    ValueId constant(Tensor<T> t) {
        Node n;
        n.value = std::move(t);
        n.op = "const";
        nodes_.push_back(std::move(n));
        return last();
    }

    ValueId emplace(Tensor<T> value, bool needs_grad, const char* op) {
        if (check_finite && !value.all_finite()) {
            throw training_error(std::string("non-finite values produced by op '") + op + "'");
        }
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.op = op;
        nodes_.push_back(std::move(n));
        return last();
    }

    void set_backward(ValueId id, BackwardFn fn) { nodes_[static_cast<size_t>(id)].backward = std::move(fn); }

    Tensor<T>& val(ValueId id) { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor<T>& val(ValueId id) const { return nodes_[static_cast<size_t>(id)].value; }
    Tensor<T>& grad(ValueId id) { return nodes_[static_cast<size_t>(id)].grad; }
    bool needs_grad(ValueId id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    size_t size() const { return nodes_.size(); }

    // Scalars held alive by the tape (activation values plus gradients);
    // feeds the complexity benchmark's portable memory counter.
    int64_t total_scalars() const {
        int64_t n = 0;
        for (const auto& node : nodes_) {
            n += node.value.numel();
            n += static_cast<int64_t>(node.grad.data.size());
        }
        return n;
    }

    // Backward from a scalar loss. Gradients of leaves accumulate additively
    // across repeated backward() calls, per the tape contract.
    void backward(ValueId loss) {
        Node& ln = nodes_[static_cast<size_t>(loss)];
        if (ln.value.numel() != 1) throw shape_error("backward: loss must be scalar");
        if (!ln.needs_grad) return;  // nothing trainable upstream
        for (ValueId id = 0; id <= loss; ++id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.needs_grad && n.grad.data.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        }
        ln.grad.data[0] += T(1);
        for (ValueId id = loss; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.needs_grad && n.backward) n.backward(*this);
        }
    }

private:
    ValueId last() const { return static_cast<ValueId>(nodes_.size() - 1); }
    std::vector<Node> nodes_;
};

namespace detail {

// Emit a node and, when gradients are required, bind a backward closure that
// knows the produced id.
template <class T, class MakeBackward>
ValueId emit(GradTape<T>& t, Tensor<T> value, bool needs_grad, const char* op, MakeBackward&& mk) {
    ValueId id = t.emplace(std::move(value), needs_grad, op);
    if (needs_grad) t.set_backward(id, mk(id));
    return id;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitive ops
// ---------------------------------------------------------------------------

// c = a·b. Gradient contract: da = g·bᵀ, db = aᵀ·g.
template <class T>
ValueId matmul(GradTape<T>& t, ValueId a, ValueId b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    if (av.shape.size() != 2 || bv.shape.size() != 2) throw shape_error("matmul: operands must be 2-D");
    if (av.shape[1] != bv.shape[0]) {
        throw shape_error("matmul: inner dimensions differ " + shape_str(av.shape) + " vs " +
                          shape_str(bv.shape));
    }
    const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor<T> out({m, n});
    detail::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return detail::emit(t, std::move(out), ng, "matmul", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            if (tt.needs_grad(a)) {
                detail::gemm_nt(g, tt.val(b).data.data(), tt.grad(a).data.data(), m, n, k, true);
            }
            if (tt.needs_grad(b)) {
                detail::gemm_tn(tt.val(a).data.data(), g, tt.grad(b).data.data(), m, k, n, true);
            }
        };
    });
}

template <class T>
ValueId add(GradTape<T>& t, ValueId a, ValueId b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    if (av.shape != bv.shape) {
        throw shape_error("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    }
    Tensor<T> out = av;
    const T* bp = bv.data.data();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bp[i];
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    const int64_t n = av.numel();
    return detail::emit(t, std::move(out), ng, "add", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            if (tt.needs_grad(a)) {
                T* da = tt.grad(a).data.data();
                for (int64_t i = 0; i < n; ++i) da[i] += g[i];
            }
            if (tt.needs_grad(b)) {
                T* db = tt.grad(b).data.data();
                for (int64_t i = 0; i < n; ++i) db[i] += g[i];
            }
        };
    });
}

// Broadcast a length-n bias over the rows of an m×n matrix.
template <class T>
ValueId add_bias(GradTape<T>& t, ValueId x, ValueId bias) {
    const auto& xv = t.val(x);
    const auto& bv = t.val(bias);
    if (xv.shape.size() != 2) throw shape_error("add_bias: x must be 2-D");
    if (bv.numel() != xv.shape[1]) {
        throw shape_error("add_bias: bias length " + std::to_string(bv.numel()) +
                          " != columns " + std::to_string(xv.shape[1]));
    }
    const int64_t m = xv.shape[0], n = xv.shape[1];
    Tensor<T> out = xv;
    const T* bp = bv.data.data();
    for (int64_t i = 0; i < m; ++i) {
        T* row = out.data.data() + i * n;
        for (int64_t j = 0; j < n; ++j) row[j] += bp[j];
    }
    const bool ng = t.needs_grad(x) || t.needs_grad(bias);
    return detail::emit(t, std::move(out), ng, "add_bias", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            if (tt.needs_grad(x)) {
                T* dx = tt.grad(x).data.data();
                for (int64_t i = 0; i < m * n; ++i) dx[i] += g[i];
            }
            if (tt.needs_grad(bias)) {
                T* db = tt.grad(bias).data.data();
                for (int64_t i = 0; i < m; ++i) {
                    const T* grow = g + i * n;
                    for (int64_t j = 0; j < n; ++j) db[j] += grow[j];
                }
            }
        };
    });
}

template <class T>
ValueId scale(GradTape<T>& t, ValueId x, T factor) {
    Tensor<T> out = t.val(x);
    for (auto& v : out.data) v *= factor;
    const bool ng = t.needs_grad(x);
    const int64_t n = out.numel();
    return detail::emit(t, std::move(out), ng, "scale", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            T* dx = tt.grad(x).data.data();
            for (int64_t i = 0; i < n; ++i) dx[i] += factor * g[i];
        };
    });
}

template <class T>
ValueId relu(GradTape<T>& t, ValueId x) {
    Tensor<T> out = t.val(x);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    const bool ng = t.needs_grad(x);
    const int64_t n = out.numel();
    return detail::emit(t, std::move(out), ng, "relu", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            const T* xp = tt.val(x).data.data();
            T* dx = tt.grad(x).data.data();
            for (int64_t i = 0; i < n; ++i) {
                if (xp[i] > T(0)) dx[i] += g[i];
            }
        };
    });
}

// Row-wise softmax with max subtraction. Every output row sums to 1.
template <class T>
ValueId softmax_rows(GradTape<T>& t, ValueId x) {
    const auto& xv = t.val(x);
    if (xv.shape.size() != 2) throw shape_error("softmax_rows: x must be 2-D");
    const int64_t m = xv.shape[0], n = xv.shape[1];
    Tensor<T> out({m, n});
    for (int64_t i = 0; i < m; ++i) {
        const T* row = xv.data.data() + i * n;
        T* orow = out.data.data() + i * n;
        T mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int64_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        const T inv = T(1) / sum;
        for (int64_t j = 0; j < n; ++j) orow[j] *= inv;
    }
    const bool ng = t.needs_grad(x);
    return detail::emit(t, std::move(out), ng, "softmax_rows", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            const T* y = tt.val(self).data.data();
            T* dx = tt.grad(x).data.data();
            for (int64_t i = 0; i < m; ++i) {
                const T* grow = g + i * n;
                const T* yrow = y + i * n;
                T dot = 0;
                for (int64_t j = 0; j < n; ++j) dot += grow[j] * yrow[j];
                T* drow = dx + i * n;
                for (int64_t j = 0; j < n; ++j) drow[j] += yrow[j] * (grow[j] - dot);
            }
        };
    });
}

// Per-row normalisation over the last dimension, then affine (gain, bias).
template <class T>
ValueId layer_norm(GradTape<T>& t, ValueId x, ValueId gain, ValueId bias, T eps = T(1e-5)) {
    const auto& xv = t.val(x);
    const auto& gv = t.val(gain);
    const auto& bv = t.val(bias);
    if (xv.shape.empty()) throw shape_error("layer_norm: scalar input");
    const int64_t d = xv.shape.back();
    if (gv.numel() != d || bv.numel() != d) {
        throw shape_error("layer_norm: gain/bias length must equal last dimension " + std::to_string(d));
    }
    const int64_t rows = xv.numel() / d;
    Tensor<T> out(xv.shape);
    // xhat and inv_std are needed by the backward pass
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * d));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    for (int64_t i = 0; i < rows; ++i) {
        const T* row = xv.data.data() + i * d;
        T mean = 0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T istd = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(i)] = istd;
        T* hrow = xhat->data() + i * d;
        T* orow = out.data.data() + i * d;
        for (int64_t j = 0; j < d; ++j) {
            hrow[j] = (row[j] - mean) * istd;
            orow[j] = hrow[j] * gv.data[static_cast<size_t>(j)] + bv.data[static_cast<size_t>(j)];
        }
    }
    const bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
    return detail::emit(t, std::move(out), ng, "layer_norm", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            const T* gainp = tt.val(gain).data.data();
            for (int64_t i = 0; i < rows; ++i) {
                const T* grow = g + i * d;
                const T* hrow = xhat->data() + i * d;
                if (tt.needs_grad(x)) {
                    const T istd = (*inv_std)[static_cast<size_t>(i)];
                    T m1 = 0, m2 = 0;
                    for (int64_t j = 0; j < d; ++j) {
                        const T dh = grow[j] * gainp[j];
                        m1 += dh;
                        m2 += dh * hrow[j];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    T* dxrow = tt.grad(x).data.data() + i * d;
                    for (int64_t j = 0; j < d; ++j) {
                        const T dh = grow[j] * gainp[j];
                        dxrow[j] += istd * (dh - m1 - hrow[j] * m2);
                    }
                }
                if (tt.needs_grad(gain)) {
                    T* dg = tt.grad(gain).data.data();
                    for (int64_t j = 0; j < d; ++j) dg[j] += grow[j] * hrow[j];
                }
                if (tt.needs_grad(bias)) {
                    T* db = tt.grad(bias).data.data();
                    for (int64_t j = 0; j < d; ++j) db[j] += grow[j];
                }
            }
        };
    });
}

// Inverted dropout. training=false (or rate 0) is the bit-identical identity.
template <class T>
ValueId dropout(GradTape<T>& t, ValueId x, double rate, bool training, CounterRng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw config_error("dropout: rate must be in [0, 1)");
    const auto& xv = t.val(x);
    const bool ng = t.needs_grad(x);
    const int64_t n = xv.numel();
    if (!training || rate == 0.0) {
        Tensor<T> out = xv;
        return detail::emit(t, std::move(out), ng, "dropout", [=](ValueId self) {
            return [=](GradTape<T>& tt) {
                const T* g = tt.grad(self).data.data();
                T* dx = tt.grad(x).data.data();
                for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
            };
        });
    }
    const T inv_keep = T(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n));
    Tensor<T> out = xv;
    for (int64_t i = 0; i < n; ++i) {
        const bool keep = rng.next_double() >= rate;
        (*mask)[static_cast<size_t>(i)] = keep;
        out.data[static_cast<size_t>(i)] = keep ? out.data[static_cast<size_t>(i)] * inv_keep : T(0);
    }
    return detail::emit(t, std::move(out), ng, "dropout", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            T* dx = tt.grad(x).data.data();
            for (int64_t i = 0; i < n; ++i) {
                if ((*mask)[static_cast<size_t>(i)]) dx[i] += g[i] * inv_keep;
            }
        };
    });
}

// Tile an N×D matrix over `nblocks` row blocks.
template <class T>
ValueId broadcast_rows(GradTape<T>& t, ValueId e, int64_t nblocks) {
    const auto& ev = t.val(e);
    if (ev.shape.size() != 2) throw shape_error("broadcast_rows: input must be 2-D");
    if (nblocks < 1) throw config_error("broadcast_rows: nblocks must be positive");
    const int64_t n = ev.shape[0], d = ev.shape[1];
    Tensor<T> out({nblocks * n, d});
    for (int64_t b = 0; b < nblocks; ++b) {
        std::copy(ev.data.begin(), ev.data.end(), out.data.begin() + b * n * d);
    }
    const bool ng = t.needs_grad(e);
    return detail::emit(t, std::move(out), ng, "broadcast_rows", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            T* de = tt.grad(e).data.data();
            for (int64_t b = 0; b < nblocks; ++b) {
                const T* gb = g + b * n * d;
                for (int64_t i = 0; i < n * d; ++i) de[i] += gb[i];
            }
        };
    });
}

// Replace the rows flagged in `mask` with a learned token (1×D or length-D).
template <class T>
ValueId row_substitute(GradTape<T>& t, ValueId x, std::shared_ptr<const std::vector<uint8_t>> mask,
                       ValueId token) {
    const auto& xv = t.val(x);
    const auto& kv = t.val(token);
    if (xv.shape.size() != 2) throw shape_error("row_substitute: x must be 2-D");
    const int64_t m = xv.shape[0], d = xv.shape[1];
    if (kv.numel() != d) throw shape_error("row_substitute: token length must equal row width");
    if (static_cast<int64_t>(mask->size()) != m) throw shape_error("row_substitute: mask length mismatch");
    Tensor<T> out = xv;
    for (int64_t i = 0; i < m; ++i) {
        if ((*mask)[static_cast<size_t>(i)]) {
            std::copy(kv.data.begin(), kv.data.end(), out.data.begin() + i * d);
        }
    }
    const bool ng = t.needs_grad(x) || t.needs_grad(token);
    return detail::emit(t, std::move(out), ng, "row_substitute", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            for (int64_t i = 0; i < m; ++i) {
                const bool sub = (*mask)[static_cast<size_t>(i)];
                if (!sub && tt.needs_grad(x)) {
                    T* dx = tt.grad(x).data.data() + i * d;
                    const T* grow = g + i * d;
                    for (int64_t j = 0; j < d; ++j) dx[j] += grow[j];
                } else if (sub && tt.needs_grad(token)) {
                    T* dk = tt.grad(token).data.data();
                    const T* grow = g + i * d;
                    for (int64_t j = 0; j < d; ++j) dk[j] += grow[j];
                }
            }
        };
    });
}

// Select rows by index (duplicates allowed); backward scatter-adds.
template <class T>
ValueId gather_rows(GradTape<T>& t, ValueId x, std::shared_ptr<const std::vector<int64_t>> idx) {
    const auto& xv = t.val(x);
    if (xv.shape.size() != 2) throw shape_error("gather_rows: x must be 2-D");
    const int64_t m = xv.shape[0], n = xv.shape[1];
    const int64_t k = static_cast<int64_t>(idx->size());
    Tensor<T> out({k, n});
    for (int64_t i = 0; i < k; ++i) {
        const int64_t r = (*idx)[static_cast<size_t>(i)];
        if (r < 0 || r >= m) throw shape_error("gather_rows: index out of range");
        std::copy(xv.data.begin() + r * n, xv.data.begin() + (r + 1) * n, out.data.begin() + i * n);
    }
    const bool ng = t.needs_grad(x);
    return detail::emit(t, std::move(out), ng, "gather_rows", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            T* dx = tt.grad(x).data.data();
            for (int64_t i = 0; i < k; ++i) {
                const int64_t r = (*idx)[static_cast<size_t>(i)];
                const T* grow = g + i * n;
                for (int64_t j = 0; j < n; ++j) dx[r * n + j] += grow[j];
            }
        };
    });
}

// Same data, new shape (copies; tapes hold immutable values).
template <class T>
ValueId reshape(GradTape<T>& t, ValueId x, Shape shape) {
    const auto& xv = t.val(x);
    if (shape_numel(shape) != xv.numel()) {
        throw shape_error("reshape: element count mismatch " + shape_str(xv.shape) + " -> " + shape_str(shape));
    }
    Tensor<T> out(std::move(shape), xv.data);
    const bool ng = t.needs_grad(x);
    const int64_t n = xv.numel();
    return detail::emit(t, std::move(out), ng, "reshape", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            T* dx = tt.grad(x).data.data();
            for (int64_t i = 0; i < n; ++i) dx[i] += g[i];
        };
    });
}

// Stack two matrices with equal column counts vertically.
template <class T>
ValueId concat_rows(GradTape<T>& t, ValueId a, ValueId b) {
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    if (av.shape.size() != 2 || bv.shape.size() != 2 || av.shape[1] != bv.shape[1]) {
        throw shape_error("concat_rows: column counts must match");
    }
    const int64_t ma = av.shape[0], mb = bv.shape[0], n = av.shape[1];
    Tensor<T> out({ma + mb, n});
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + ma * n);
    const bool ng = t.needs_grad(a) || t.needs_grad(b);
    return detail::emit(t, std::move(out), ng, "concat_rows", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            if (tt.needs_grad(a)) {
                T* da = tt.grad(a).data.data();
                for (int64_t i = 0; i < ma * n; ++i) da[i] += g[i];
            }
            if (tt.needs_grad(b)) {
                T* db = tt.grad(b).data.data();
                const T* gb = g + ma * n;
                for (int64_t i = 0; i < mb * n; ++i) db[i] += gb[i];
            }
        };
    });
}

template <class T>
ValueId sum_all(GradTape<T>& t, ValueId x) {
    const auto& xv = t.val(x);
    T s = 0;
    for (T v : xv.data) s += v;
    Tensor<T> out({1}, {s});
    const bool ng = t.needs_grad(x);
    const int64_t n = xv.numel();
    return detail::emit(t, std::move(out), ng, "sum_all", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T g = tt.grad(self).data[0];
            T* dx = tt.grad(x).data.data();
            for (int64_t i = 0; i < n; ++i) dx[i] += g;
        };
    });
}

// Mean over the batch of -log softmax(logits)[label].
// Gradient contract: d logits = (softmax - onehot) / batch.
template <class T>
ValueId cross_entropy(GradTape<T>& t, ValueId logits, std::shared_ptr<const std::vector<int>> labels) {
    const auto& lv = t.val(logits);
    if (lv.shape.size() != 2) throw shape_error("cross_entropy: logits must be 2-D");
    const int64_t b = lv.shape[0], k = lv.shape[1];
    if (static_cast<int64_t>(labels->size()) != b) {
        throw shape_error("cross_entropy: label count mismatch");
    }
    for (int y : *labels) {
        if (y < 0 || y >= k) throw label_error("cross_entropy: label out of range [0, K)");
    }
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(b * k));
    T loss = 0;
    for (int64_t i = 0; i < b; ++i) {
        const T* row = lv.data.data() + i * k;
        T* prow = probs->data() + i * k;
        T mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int64_t j = 0; j < k; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        const T inv = T(1) / sum;
        for (int64_t j = 0; j < k; ++j) prow[j] *= inv;
        loss -= std::log(prow[(*labels)[static_cast<size_t>(i)]]);
    }
    loss /= static_cast<T>(b);
    Tensor<T> out({1}, {loss});
    const bool ng = t.needs_grad(logits);
    return detail::emit(t, std::move(out), ng, "cross_entropy", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T g = tt.grad(self).data[0];
            T* dl = tt.grad(logits).data.data();
            const T invb = T(1) / static_cast<T>(b);
            for (int64_t i = 0; i < b; ++i) {
                const T* prow = probs->data() + i * k;
                T* drow = dl + i * k;
                const int y = (*labels)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < k; ++j) {
                    T p = prow[j];
                    if (j == y) p -= T(1);
                    drow[j] += g * p * invb;
                }
            }
        };
    });
}

// Mean of squared differences.
template <class T>
ValueId mse(GradTape<T>& t, ValueId pred, ValueId target) {
    const auto& pv = t.val(pred);
    const auto& tv = t.val(target);
    if (pv.shape != tv.shape) {
        throw shape_error("mse: shape mismatch " + shape_str(pv.shape) + " vs " + shape_str(tv.shape));
    }
    const int64_t n = pv.numel();
    T loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        const T dlt = pv.data[static_cast<size_t>(i)] - tv.data[static_cast<size_t>(i)];
        loss += dlt * dlt;
    }
    loss /= static_cast<T>(n);
    Tensor<T> out({1}, {loss});
    const bool ng = t.needs_grad(pred) || t.needs_grad(target);
    return detail::emit(t, std::move(out), ng, "mse", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T g = tt.grad(self).data[0];
            const T* pp = tt.val(pred).data.data();
            const T* tp = tt.val(target).data.data();
            const T c = g * T(2) / static_cast<T>(n);
            if (tt.needs_grad(pred)) {
                T* dp = tt.grad(pred).data.data();
                for (int64_t i = 0; i < n; ++i) dp[i] += c * (pp[i] - tp[i]);
            }
            if (tt.needs_grad(target)) {
                T* dt = tt.grad(target).data.data();
                for (int64_t i = 0; i < n; ++i) dt[i] -= c * (pp[i] - tp[i]);
            }
        };
    });
}

// Scaled dot-product attention over independent row blocks with the head
// dimension packed along columns: q, k, v are (nblocks·n)×(h·dk). Block b,
// head hd attends within rows [b·n, (b+1)·n) and columns [hd·dk, (hd+1)·dk).
// Dropout, when active, is applied to the post-softmax attention matrix.
template <class T>
ValueId block_attention(GradTape<T>& t, ValueId q, ValueId k, ValueId v, int64_t nblocks, int64_t h,
                        double attn_dropout, bool training, CounterRng& rng) {
    const auto& qv = t.val(q);
    const auto& kv = t.val(k);
    const auto& vv = t.val(v);
    if (qv.shape != kv.shape || qv.shape != vv.shape || qv.shape.size() != 2) {
        throw shape_error("block_attention: q/k/v must share a 2-D shape");
    }
    if (attn_dropout < 0.0 || attn_dropout >= 1.0) throw config_error("block_attention: dropout in [0,1)");
    const int64_t rows = qv.shape[0], width = qv.shape[1];
    if (rows % nblocks != 0) throw shape_error("block_attention: rows not divisible by nblocks");
    if (width % h != 0) throw shape_error("block_attention: width not divisible by head count");
    const int64_t n = rows / nblocks;
    const int64_t dk = width / h;
    const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));
    const bool use_drop = training && attn_dropout > 0.0;
    const T inv_keep = use_drop ? T(1.0 / (1.0 - attn_dropout)) : T(1);

    // Post-softmax attention (pre-dropout) saved per block/head for backward;
    // mask saved only when dropout is live.
    auto attn = std::make_shared<std::vector<T>>(static_cast<size_t>(nblocks * h * n * n));
    auto mask = use_drop ? std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(nblocks * h * n * n))
                         : nullptr;

    if (use_drop) {
        // Masks are drawn sequentially so the stream is independent of any
        // parallel execution of the arithmetic below.
        for (auto& m : *mask) m = rng.next_double() >= attn_dropout;
    }

    Tensor<T> out({rows, width});
    const T* qp = qv.data.data();
    const T* kp = kv.data.data();
    const T* vp = vv.data.data();
    T* op = out.data.data();

#pragma omp parallel for schedule(static) collapse(2)
    for (int64_t b = 0; b < nblocks; ++b) {
        for (int64_t hd = 0; hd < h; ++hd) {
            std::vector<T> scores(static_cast<size_t>(n) * static_cast<size_t>(n));
            const int64_t row0 = b * n;
            const int64_t col0 = hd * dk;
            // scores = Q Kᵀ / sqrt(dk)
            for (int64_t i = 0; i < n; ++i) {
                const T* qrow = qp + (row0 + i) * width + col0;
                for (int64_t j = 0; j < n; ++j) {
                    const T* krow = kp + (row0 + j) * width + col0;
                    T acc = 0;
                    for (int64_t c = 0; c < dk; ++c) acc += qrow[c] * krow[c];
                    scores[static_cast<size_t>(i * n + j)] = acc * inv_sqrt_dk;
                }
            }
            // softmax rows
            T* arow0 = attn->data() + (b * h + hd) * n * n;
            for (int64_t i = 0; i < n; ++i) {
                T* srow = scores.data() + i * n;
                T mx = srow[0];
                for (int64_t j = 1; j < n; ++j) mx = std::max(mx, srow[j]);
                T sum = 0;
                for (int64_t j = 0; j < n; ++j) {
                    srow[j] = std::exp(srow[j] - mx);
                    sum += srow[j];
                }
                const T inv = T(1) / sum;
                T* arow = arow0 + i * n;
                for (int64_t j = 0; j < n; ++j) arow[j] = srow[j] * inv;
            }
            // out = (dropped attention) · V
            const uint8_t* mrow0 = use_drop ? mask->data() + (b * h + hd) * n * n : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                T* orow = op + (row0 + i) * width + col0;
                std::fill(orow, orow + dk, T(0));
                const T* arow = arow0 + i * n;
                for (int64_t j = 0; j < n; ++j) {
                    T w = arow[j];
                    if (use_drop) {
                        if (!mrow0[i * n + j]) continue;
                        w *= inv_keep;
                    }
                    if (w == T(0)) continue;
                    const T* vrow = vp + (row0 + j) * width + col0;
                    for (int64_t c = 0; c < dk; ++c) orow[c] += w * vrow[c];
                }
            }
        }
    }

    const bool ng = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
    return detail::emit(t, std::move(out), ng, "block_attention", [=](ValueId self) {
        return [=](GradTape<T>& tt) {
            const T* g = tt.grad(self).data.data();
            const T* qp2 = tt.val(q).data.data();
            const T* kp2 = tt.val(k).data.data();
            const T* vp2 = tt.val(v).data.data();
            const bool nq = tt.needs_grad(q);
            const bool nk = tt.needs_grad(k);
            const bool nv = tt.needs_grad(v);
            T* dq = nq ? tt.grad(q).data.data() : nullptr;
            T* dkg = nk ? tt.grad(k).data.data() : nullptr;
            T* dv = nv ? tt.grad(v).data.data() : nullptr;
#pragma omp parallel for schedule(static) collapse(2)
            for (int64_t b = 0; b < nblocks; ++b) {
                for (int64_t hd = 0; hd < h; ++hd) {
                    const int64_t row0 = b * n;
                    const int64_t col0 = hd * dk;
                    const T* arow0 = attn->data() + (b * h + hd) * n * n;
                    const uint8_t* mrow0 = use_drop ? mask->data() + (b * h + hd) * n * n : nullptr;
                    std::vector<T> ds(static_cast<size_t>(n) * static_cast<size_t>(n));
                    // dV and dA
                    for (int64_t i = 0; i < n; ++i) {
                        const T* grow = g + (row0 + i) * width + col0;
                        for (int64_t j = 0; j < n; ++j) {
                            T w = arow0[i * n + j];
                            T live = T(1);
                            if (use_drop) live = mrow0[i * n + j] ? inv_keep : T(0);
                            // dV_j += (w·live)·g_i
                            if (nv && w * live != T(0)) {
                                T* dvrow = dv + (row0 + j) * width + col0;
                                const T wl = w * live;
                                for (int64_t c = 0; c < dk; ++c) dvrow[c] += wl * grow[c];
                            }
                            // dA_ij = live · dot(g_i, v_j)
                            const T* vrow = vp2 + (row0 + j) * width + col0;
                            T acc = 0;
                            for (int64_t c = 0; c < dk; ++c) acc += grow[c] * vrow[c];
                            ds[static_cast<size_t>(i * n + j)] = acc * live;
                        }
                    }
                    // dS = A ∘ (dA − rowsum(dA ∘ A)); then dQ, dK
                    for (int64_t i = 0; i < n; ++i) {
                        const T* arow = arow0 + i * n;
                        T* dsrow = ds.data() + i * n;
                        T dot = 0;
                        for (int64_t j = 0; j < n; ++j) dot += dsrow[j] * arow[j];
                        for (int64_t j = 0; j < n; ++j) dsrow[j] = arow[j] * (dsrow[j] - dot) * inv_sqrt_dk;
                        if (nq) {
                            T* dqrow = dq + (row0 + i) * width + col0;
                            for (int64_t j = 0; j < n; ++j) {
                                const T s = dsrow[j];
                                if (s == T(0)) continue;
                                const T* krow = kp2 + (row0 + j) * width + col0;
                                for (int64_t c = 0; c < dk; ++c) dqrow[c] += s * krow[c];
                            }
                        }
                        if (nk) {
                            const T* qrow = qp2 + (row0 + i) * width + col0;
                            for (int64_t j = 0; j < n; ++j) {
                                const T s = dsrow[j];
                                if (s == T(0)) continue;
                                T* dkrow = dkg + (row0 + j) * width + col0;
                                for (int64_t c = 0; c < dk; ++c) dkrow[c] += s * qrow[c];
                            }
                        }
                    }
                }
            }
        };
    });
}

}  // namespace patchwave
