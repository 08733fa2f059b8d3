#include "uvet/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>

#include "uvet/kernels.hpp"
#include "uvet/rng.hpp"

namespace uvet::ad {

namespace testhooks {

namespace {
std::atomic<bool> g_softmax_flip{false};
}

void set_softmax_backward_sign_flip(bool enabled) { g_softmax_flip.store(enabled); }
bool softmax_backward_sign_flip() { return g_softmax_flip.load(); }

}  // namespace testhooks

NodeId Tape::push(Tensor value, bool requires_grad, PullFn pull) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.is_leaf = !pull;
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad, PullFn{});
}

Tensor& Tape::adjoint(NodeId id) {
    if (adjoints_[id].empty()) adjoints_[id] = Tensor::zeros(nodes_[id].value.shape());
    return adjoints_[id];
}

void Tape::accumulate(NodeId id, const Tensor& grad) {
    kern::add_inplace(adjoint(id), grad);
}

NodeId Tape::add(NodeId a, NodeId b) {
    Tensor v = kern::add(value(a), value(b));
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(v), rg, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, g);
        if (t.requires_grad(b)) t.accumulate(b, g);
    });
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Tensor v = kern::sub(value(a), value(b));
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(v), rg, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, g);
        if (t.requires_grad(b)) kern::axpy_inplace(t.adjoint(b), -1.0, g);
    });
}

NodeId Tape::mul(NodeId a, NodeId b) {
    Tensor v = kern::mul(value(a), value(b));
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(v), rg, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, kern::mul(g, t.value(b)));
        if (t.requires_grad(b)) t.accumulate(b, kern::mul(g, t.value(a)));
    });
}

NodeId Tape::scale(NodeId a, double s) {
    Tensor v = kern::scale(value(a), s);
    return push(std::move(v), requires_grad(a), [a, s](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) kern::axpy_inplace(t.adjoint(a), s, g);
    });
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    Tensor v = kern::matmul(value(a), value(b));
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(v), rg, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, kern::matmul_nt(g, t.value(b)));
        if (t.requires_grad(b)) t.accumulate(b, kern::matmul_tn(t.value(a), g));
    });
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    Tensor v = kern::matmul_nt(value(a), value(b));
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(std::move(v), rg, [a, b](Tape& t, const Tensor& g) {
        // C = A B^T: dA = dC B, dB = dC^T A
        if (t.requires_grad(a)) t.accumulate(a, kern::matmul(g, t.value(b)));
        if (t.requires_grad(b)) t.accumulate(b, kern::matmul_tn(g, t.value(a)));
    });
}

NodeId Tape::add_rowvec(NodeId a, NodeId v) {
    Tensor out = kern::add_rowvec(value(a), value(v));
    const bool rg = requires_grad(a) || requires_grad(v);
    return push(std::move(out), rg, [a, v](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, g);
        if (t.requires_grad(v)) {
            Tensor cs = kern::col_sum(g);
            t.accumulate(v, reshape(std::move(cs), t.value(v).shape()));
        }
    });
}

NodeId Tape::softmax_rows(NodeId a) {
    Tensor y = kern::softmax_rows(value(a));
    const NodeId out = static_cast<NodeId>(nodes_.size());
    return push(std::move(y), requires_grad(a), [a, out](Tape& t, const Tensor& g) {
        if (!t.requires_grad(a)) return;
        Tensor dx = kern::softmax_rows_backward(t.value(out), g);
        if (testhooks::softmax_backward_sign_flip()) dx = kern::scale(dx, -1.0);
        t.accumulate(a, dx);
    });
}

NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
    auto cache = std::make_shared<kern::LayerNormCache>();
    Tensor y = kern::layer_norm(value(x), value(gain), value(bias), eps, cache.get());
    const bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
    return push(std::move(y), rg, [x, gain, bias, cache](Tape& t, const Tensor& g) {
        if (t.requires_grad(x)) {
            t.accumulate(x, kern::layer_norm_backward_x(g, *cache, t.value(gain)));
        }
        if (t.requires_grad(gain)) {
            Tensor dg = kern::col_sum(kern::mul(g, cache->xhat));
            t.accumulate(gain, reshape(std::move(dg), t.value(gain).shape()));
        }
        if (t.requires_grad(bias)) {
            Tensor db = kern::col_sum(g);
            t.accumulate(bias, reshape(std::move(db), t.value(bias).shape()));
        }
    });
}

NodeId Tape::gelu(NodeId x) {
    Tensor y = kern::gelu(value(x));
    return push(std::move(y), requires_grad(x), [x](Tape& t, const Tensor& g) {
        if (t.requires_grad(x)) t.accumulate(x, kern::gelu_backward(t.value(x), g));
    });
}

NodeId Tape::mse(NodeId a, NodeId b) {
    const double v = kern::mse(value(a), value(b));
    const bool rg = requires_grad(a) || requires_grad(b);
    return push(Tensor::scalar(v), rg, [a, b](Tape& t, const Tensor& g) {
        const double s = 2.0 * g.at(0) / static_cast<double>(t.value(a).size());
        Tensor diff = kern::sub(t.value(a), t.value(b));
        if (t.requires_grad(a)) kern::axpy_inplace(t.adjoint(a), s, diff);
        if (t.requires_grad(b)) kern::axpy_inplace(t.adjoint(b), -s, diff);
    });
}

NodeId Tape::gather(NodeId a, std::vector<std::size_t> index, Shape out_shape) {
    if (shape_product(out_shape) != index.size()) {
        throw DimensionError("gather: index length does not match output shape");
    }
    const Tensor& src = value(a);
    Tensor out(std::move(out_shape));
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= src.size()) throw DimensionError("gather: index out of range");
        out.at(i) = src.at(index[i]);
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
    return push(std::move(out), requires_grad(a), [a, idx](Tape& t, const Tensor& g) {
        if (!t.requires_grad(a)) return;
        Tensor& adj = t.adjoint(a);
        for (std::size_t i = 0; i < idx->size(); ++i) adj.at((*idx)[i]) += g.at(i);
    });
}

NodeId Tape::concat_rows(NodeId top, NodeId bottom) {
    const Tensor& a = value(top);
    const Tensor& b = value(bottom);
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
        throw DimensionError("concat_rows: " + shape_str(a.shape()) + " over " + shape_str(b.shape()));
    }
    Tensor out({a.rows() + b.rows(), a.cols()});
    std::copy(a.data(), a.data() + a.size(), out.data());
    std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
    const bool rg = requires_grad(top) || requires_grad(bottom);
    const std::size_t split = a.size();
    return push(std::move(out), rg, [top, bottom, split](Tape& t, const Tensor& g) {
        if (t.requires_grad(top)) {
            Tensor& adj = t.adjoint(top);
            for (std::size_t i = 0; i < split; ++i) adj.at(i) += g.at(i);
        }
        if (t.requires_grad(bottom)) {
            Tensor& adj = t.adjoint(bottom);
            for (std::size_t i = 0; i < adj.size(); ++i) adj.at(i) += g.at(split + i);
        }
    });
}

NodeId Tape::slice_cols(NodeId a, std::size_t c0, std::size_t c1) {
    const Tensor& src = value(a);
    if (src.ndim() != 2 || c0 >= c1 || c1 > src.cols()) {
        throw DimensionError("slice_cols: bad column range");
    }
    const std::size_t m = src.rows(), w = c1 - c0, n = src.cols();
    Tensor out({m, w});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) out(i, j) = src(i, c0 + j);
    }
    return push(std::move(out), requires_grad(a), [a, c0, w, n](Tape& t, const Tensor& g) {
        if (!t.requires_grad(a)) return;
        Tensor& adj = t.adjoint(a);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < w; ++j) adj.at(i * n + c0 + j) += g(i, j);
        }
    });
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no parts");
    const std::size_t m = value(parts[0]).rows();
    std::size_t total = 0;
    bool rg = false;
    for (NodeId p : parts) {
        const Tensor& v = value(p);
        if (v.ndim() != 2 || v.rows() != m) throw DimensionError("concat_cols: row mismatch");
        total += v.cols();
        rg = rg || requires_grad(p);
    }
    Tensor out({m, total});
    std::size_t off = 0;
    for (NodeId p : parts) {
        const Tensor& v = value(p);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
        }
        off += v.cols();
    }
    auto ps = std::make_shared<std::vector<NodeId>>(parts);
    return push(std::move(out), rg, [ps](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (NodeId p : *ps) {
            const std::size_t w = t.value(p).cols();
            if (t.requires_grad(p)) {
                Tensor& adj = t.adjoint(p);
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < w; ++j) adj(i, j) += g(i, off + j);
                }
            }
            off += w;
        }
    });
}

NodeId Tape::row_scale(NodeId a, std::vector<double> weights) {
    Tensor v = kern::row_scale(value(a), weights);
    auto w = std::make_shared<std::vector<double>>(std::move(weights));
    return push(std::move(v), requires_grad(a), [a, w](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, kern::row_scale(g, *w));
    });
}

NodeId Tape::mul_const(NodeId a, Tensor factor) {
    Tensor v = kern::mul(value(a), factor);
    auto f = std::make_shared<Tensor>(std::move(factor));
    return push(std::move(v), requires_grad(a), [a, f](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, kern::mul(g, *f));
    });
}

GradMap Tape::backward(NodeId root) {
    if (root >= nodes_.size()) throw UsageError("backward: unknown root node");
    const Tensor& v = nodes_[root].value;
    if (v.size() != 1) throw UsageError("backward without an explicit seed requires a scalar root");
    return backward(root, Tensor::full(v.shape(), 1.0));
}

GradMap Tape::backward(NodeId root, const Tensor& seed) {
    if (consumed_) throw UsageError("backward on an already-consumed tape");
    consumed_ = true;
    if (root >= nodes_.size()) throw UsageError("backward: unknown root node");
    require_same_shape(seed, nodes_[root].value, "backward seed");

    adjoints_.assign(nodes_.size(), Tensor{});
    adjoints_[root] = seed;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.is_leaf || adjoints_[i].empty()) continue;
        n.pull(*this, adjoints_[i]);
        adjoints_[i] = Tensor{};  // released; later nodes never read it again
    }

    GradMap grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].is_leaf || !nodes_[i].requires_grad) continue;
        Tensor g = adjoints_[i].empty() ? Tensor::zeros(nodes_[i].value.shape())
                                        : std::move(adjoints_[i]);
        grads.emplace(static_cast<NodeId>(i), std::move(g));
    }
    adjoints_.clear();
    return grads;
}

double grad_check(const TracedFn& fn, const Tensor& x, double h, std::size_t n_coords,
                  std::uint64_t rng_seed) {
    if (h <= 0.0) throw ConfigError("grad_check: h must be positive");

    Tensor analytic;
    {
        Tape tape;
        NodeId in = tape.leaf(x, /*requires_grad=*/true);
        NodeId out = fn(tape, in);
        if (tape.value(out).size() != 1) throw UsageError("grad_check: fn must be scalar-valued");
        GradMap grads = tape.backward(out);
        analytic = std::move(grads.at(in));
    }

    auto eval = [&fn](const Tensor& point) {
        Tape tape;
        NodeId in = tape.leaf(point, /*requires_grad=*/false);
        return tape.value(fn(tape, in)).scalar_value();
    };

    Rng rng(rng_seed);
    double worst = 0.0;
    for (std::size_t c = 0; c < n_coords; ++c) {
        const std::size_t i = x.size() == 0 ? 0 : static_cast<std::size_t>(rng.below(x.size()));
        Tensor plus = x, minus = x;
        plus.at(i) += h;
        minus.at(i) -= h;
        const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
        const double a = analytic.at(i);
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
        worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace uvet::ad
