#include "mdfm/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mdfm::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

Graph& graph_of(const char* op, std::initializer_list<Var> vars) {
    Graph* g = nullptr;
    for (const Var& v : vars) {
        if (!v.valid()) throw std::invalid_argument(std::string(op) + ": unbound input");
        if (g && v.graph != g) throw std::invalid_argument(std::string(op) + ": inputs from different graphs");
        g = v.graph;
    }
    return *g;
}

// Decomposition of a shape around one axis: element (o, j, i) lives at
// (o * n + j) * inner + i.
struct AxisView {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
    std::size_t axis = 0;

    std::size_t at(std::size_t o, std::size_t j, std::size_t i) const { return (o * n + j) * inner + i; }
};

AxisView axis_view(const Shape& s, int axis, const char* op) {
    const int rank = static_cast<int>(s.size());
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                    " invalid for shape " + shape_str(s));
    }
    AxisView v;
    v.axis = static_cast<std::size_t>(a);
    for (int i = 0; i < a; ++i) v.outer *= s[static_cast<std::size_t>(i)];
    v.n = s[static_cast<std::size_t>(a)];
    for (int i = a + 1; i < rank; ++i) v.inner *= s[static_cast<std::size_t>(i)];
    return v;
}

Shape as_matrix(const Shape& s) {
    if (s.size() == 1) return {1, s[0]};
    return s;
}

template <class F>
Var unary(const char* op, Var x, F&& f, double (*dydx)(double x, double y)) {
    Graph& g = graph_of(op, {x});
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    const int xi = x.id;
    return g.record(op, std::move(out), {xi}, [xi, dydx](Graph& gr, int self, const Tensor& go) {
        const Tensor& xv2 = gr.value(xi);
        const Tensor& yv = gr.value(self);
        Tensor gx(xv2.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * dydx(xv2[i], yv[i]);
        gr.accumulate(xi, gx);
    });
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = graph_of("matmul", {a, b});
    const Shape sa = as_matrix(a.shape());
    const Shape sb = as_matrix(b.shape());
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_error("matmul", a.shape(), b.shape());
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out({m, n});
    MutMap(out.ptr(), m, n).noalias() = ConstMap(a.value().ptr(), m, k) * ConstMap(b.value().ptr(), k, n);
    const int ai = a.id, bi = b.id;
    return g.record("matmul", std::move(out), {ai, bi}, [ai, bi, m, k, n](Graph& gr, int, const Tensor& go) {
        ConstMap dc(go.ptr(), m, n);
        if (gr.requires_grad(ai)) {
            Tensor da({m, k});
            MutMap(da.ptr(), m, k).noalias() = dc * ConstMap(gr.value(bi).ptr(), k, n).transpose();
            gr.accumulate(ai, da);
        }
        if (gr.requires_grad(bi)) {
            Tensor db({k, n});
            MutMap(db.ptr(), k, n).noalias() = ConstMap(gr.value(ai).ptr(), m, k).transpose() * dc;
            gr.accumulate(bi, db);
        }
    });
}

Var add(Var a, Var b) {
    Graph& g = graph_of("add", {a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const int ai = a.id, bi = b.id;
    if (av.shape() == bv.shape()) {
        Tensor out(av.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        return g.record("add", std::move(out), {ai, bi}, [ai, bi](Graph& gr, int, const Tensor& go) {
            gr.accumulate(ai, go);
            gr.accumulate(bi, go);
        });
    }
    const bool row = bv.size() == av.cols() && bv.rows() == 1 && av.rank() >= 1;
    if (!row) shape_error("add", av.shape(), bv.shape());
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] + bv[c];
    return g.record("add", std::move(out), {ai, bi}, [ai, bi, rows, cols](Graph& gr, int, const Tensor& go) {
        gr.accumulate(ai, go);
        if (gr.requires_grad(bi)) {
            Tensor gb(gr.value(bi).shape());
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) gb[c] += go[r * cols + c];
            gr.accumulate(bi, gb);
        }
    });
}

Var hadamard(Var a, Var b) {
    Graph& g = graph_of("hadamard", {a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.size() != bv.size()) shape_error("hadamard", av.shape(), bv.shape());
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    const int ai = a.id, bi = b.id;
    return g.record("hadamard", std::move(out), {ai, bi}, [ai, bi](Graph& gr, int, const Tensor& go) {
        const Tensor& av2 = gr.value(ai);
        const Tensor& bv2 = gr.value(bi);
        if (gr.requires_grad(ai)) {
            Tensor ga(av2.shape());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * bv2[i];
            gr.accumulate(ai, ga);
        }
        if (gr.requires_grad(bi)) {
            Tensor gb(bv2.shape());
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = go[i] * av2[i];
            gr.accumulate(bi, gb);
        }
    });
}

Var mul_scalar(Var a, Var s) {
    Graph& g = graph_of("mul_scalar", {a, s});
    if (s.value().size() != 1) shape_error("mul_scalar", a.shape(), s.shape());
    const Tensor& av = a.value();
    const double sv = s.value()[0];
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sv;
    const int ai = a.id, si = s.id;
    return g.record("mul_scalar", std::move(out), {ai, si}, [ai, si](Graph& gr, int, const Tensor& go) {
        const Tensor& av2 = gr.value(ai);
        const double sv2 = gr.value(si)[0];
        if (gr.requires_grad(ai)) {
            Tensor ga(av2.shape());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * sv2;
            gr.accumulate(ai, ga);
        }
        if (gr.requires_grad(si)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < av2.size(); ++i) acc += go[i] * av2[i];
            gr.accumulate(si, Tensor(gr.value(si).shape(), acc));
        }
    });
}

Var scale(Var a, double c) {
    Graph& g = graph_of("scale", {a});
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    const int ai = a.id;
    return g.record("scale", std::move(out), {ai}, [ai, c](Graph& gr, int, const Tensor& go) {
        Tensor ga(go.shape());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * c;
        gr.accumulate(ai, ga);
    });
}

Var relu(Var x) {
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
    return unary(
        "gelu", x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
        [](double v, double) {
            const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        });
}

Var softmax(Var x, int axis) {
    Graph& g = graph_of("softmax", {x});
    const Tensor& xv = x.value();
    const AxisView av = axis_view(xv.shape(), axis, "softmax");
    Tensor out(xv.shape());
    for (std::size_t o = 0; o < av.outer; ++o) {
        for (std::size_t i = 0; i < av.inner; ++i) {
            double m = -INFINITY;
            for (std::size_t j = 0; j < av.n; ++j) m = std::max(m, xv[av.at(o, j, i)]);
            double s = 0.0;
            for (std::size_t j = 0; j < av.n; ++j) {
                const double e = std::exp(xv[av.at(o, j, i)] - m);
                out[av.at(o, j, i)] = e;
                s += e;
            }
            for (std::size_t j = 0; j < av.n; ++j) out[av.at(o, j, i)] /= s;
        }
    }
    const int xi = x.id;
    return g.record("softmax", std::move(out), {xi}, [xi, av](Graph& gr, int self, const Tensor& go) {
        const Tensor& yv = gr.value(self);
        Tensor gx(yv.shape());
        for (std::size_t o = 0; o < av.outer; ++o) {
            for (std::size_t i = 0; i < av.inner; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < av.n; ++j) dot += go[av.at(o, j, i)] * yv[av.at(o, j, i)];
                for (std::size_t j = 0; j < av.n; ++j) {
                    const std::size_t p = av.at(o, j, i);
                    gx[p] = yv[p] * (go[p] - dot);
                }
            }
        }
        gr.accumulate(xi, gx);
    });
}

Var layer_norm(Var x, Var gamma, Var beta, int axis, double eps) {
    Graph& g = graph_of("layer_norm", {x, gamma, beta});
    const Tensor& xv = x.value();
    const AxisView av = axis_view(xv.shape(), axis, "layer_norm");
    if (gamma.value().size() != av.n) shape_error("layer_norm", xv.shape(), gamma.shape());
    if (beta.value().size() != av.n) shape_error("layer_norm", xv.shape(), beta.shape());
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor xhat(xv.shape());
    Tensor rstd({av.outer * av.inner});
    Tensor out(xv.shape());
    const double n = static_cast<double>(av.n);
    for (std::size_t o = 0; o < av.outer; ++o) {
        for (std::size_t i = 0; i < av.inner; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < av.n; ++j) mean += xv[av.at(o, j, i)];
            mean /= n;
            double var = 0.0;
            for (std::size_t j = 0; j < av.n; ++j) {
                const double d = xv[av.at(o, j, i)] - mean;
                var += d * d;
            }
            var /= n;
            const double r = 1.0 / std::sqrt(var + eps);
            rstd[o * av.inner + i] = r;
            for (std::size_t j = 0; j < av.n; ++j) {
                const std::size_t p = av.at(o, j, i);
                xhat[p] = (xv[p] - mean) * r;
                out[p] = gv[j] * xhat[p] + bv[j];
            }
        }
    }
    const int xi = x.id, gi = gamma.id, bi = beta.id;
    return g.record("layer_norm", std::move(out), {xi, gi, bi},
                    [xi, gi, bi, av, n, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& gr, int, const Tensor& go) {
                        const Tensor& gv2 = gr.value(gi);
                        if (gr.requires_grad(gi) || gr.requires_grad(bi)) {
                            Tensor dg(gr.value(gi).shape());
                            Tensor db(gr.value(bi).shape());
                            for (std::size_t o = 0; o < av.outer; ++o)
                                for (std::size_t j = 0; j < av.n; ++j)
                                    for (std::size_t i = 0; i < av.inner; ++i) {
                                        const std::size_t p = av.at(o, j, i);
                                        dg[j] += go[p] * xhat[p];
                                        db[j] += go[p];
                                    }
                            gr.accumulate(gi, dg);
                            gr.accumulate(bi, db);
                        }
                        if (!gr.requires_grad(xi)) return;
                        Tensor gx(gr.value(xi).shape());
                        for (std::size_t o = 0; o < av.outer; ++o) {
                            for (std::size_t i = 0; i < av.inner; ++i) {
                                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                                for (std::size_t j = 0; j < av.n; ++j) {
                                    const std::size_t p = av.at(o, j, i);
                                    const double dxh = go[p] * gv2[j];
                                    mean_dxh += dxh;
                                    mean_dxh_xh += dxh * xhat[p];
                                }
                                mean_dxh /= n;
                                mean_dxh_xh /= n;
                                const double r = rstd[o * av.inner + i];
                                for (std::size_t j = 0; j < av.n; ++j) {
                                    const std::size_t p = av.at(o, j, i);
                                    const double dxh = go[p] * gv2[j];
                                    gx[p] = r * (dxh - mean_dxh - xhat[p] * mean_dxh_xh);
                                }
                            }
                        }
                        gr.accumulate(xi, gx);
                    });
}

Var dropout(Var x, double rate, std::mt19937_64* rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate " + std::to_string(rate) + " outside [0,1)");
    }
    if (rng == nullptr || rate == 0.0) return x;
    Graph& g = graph_of("dropout", {x});
    const Tensor& xv = x.value();
    Tensor mask(xv.shape());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const double u = static_cast<double>((*rng)() >> 11) * 0x1.0p-53;
        mask[i] = u >= rate ? keep_scale : 0.0;
    }
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    const int xi = x.id;
    return g.record("dropout", std::move(out), {xi}, [xi, mask = std::move(mask)](Graph& gr, int, const Tensor& go) {
        Tensor gx(go.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * mask[i];
        gr.accumulate(xi, gx);
    });
}

Var mean_pool(Var x, int axis) {
    Graph& g = graph_of("mean_pool", {x});
    const Tensor& xv = x.value();
    const AxisView av = axis_view(xv.shape(), axis, "mean_pool");
    if (av.n == 0) throw std::invalid_argument("mean_pool: empty axis in shape " + shape_str(xv.shape()));
    Shape os = xv.shape();
    os[av.axis] = 1;
    Tensor out(os);
    const double n = static_cast<double>(av.n);
    for (std::size_t o = 0; o < av.outer; ++o)
        for (std::size_t i = 0; i < av.inner; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < av.n; ++j) s += xv[av.at(o, j, i)];
            out[o * av.inner + i] = s / n;
        }
    const int xi = x.id;
    return g.record("mean_pool", std::move(out), {xi}, [xi, av, n](Graph& gr, int, const Tensor& go) {
        Tensor gx(gr.value(xi).shape());
        for (std::size_t o = 0; o < av.outer; ++o)
            for (std::size_t i = 0; i < av.inner; ++i) {
                const double v = go[o * av.inner + i] / n;
                for (std::size_t j = 0; j < av.n; ++j) gx[av.at(o, j, i)] = v;
            }
        gr.accumulate(xi, gx);
    });
}

Var sum(Var x) {
    Graph& g = graph_of("sum", {x});
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    const int xi = x.id;
    return g.record("sum", Tensor::scalar(s), {xi}, [xi](Graph& gr, int, const Tensor& go) {
        gr.accumulate(xi, Tensor(gr.value(xi).shape(), go[0]));
    });
}

Var embedding_lookup(Var table, std::span<const int> ids) {
    Graph& g = graph_of("embedding_lookup", {table});
    const Tensor& tv = table.value();
    if (tv.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be rank 2, got " + shape_str(tv.shape()));
    const std::size_t vocab = tv.dim(0), width = tv.dim(1);
    std::vector<int> rows(ids.begin(), ids.end());
    Tensor out({rows.size(), width});
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t] < 0 || static_cast<std::size_t>(rows[t]) >= vocab) {
            throw std::invalid_argument("embedding_lookup: token id " + std::to_string(rows[t]) +
                                        " out of range for table " + shape_str(tv.shape()));
        }
        std::copy_n(tv.ptr() + static_cast<std::size_t>(rows[t]) * width, width, out.ptr() + t * width);
    }
    const int ti = table.id;
    return g.record("embedding_lookup", std::move(out), {ti},
                    [ti, width, rows = std::move(rows)](Graph& gr, int, const Tensor& go) {
                        if (!gr.requires_grad(ti)) return;
                        Tensor& gt = gr.grad_slot(ti);
                        for (std::size_t t = 0; t < rows.size(); ++t) {
                            double* dst = gt.ptr() + static_cast<std::size_t>(rows[t]) * width;
                            const double* src = go.ptr() + t * width;
                            for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                        }
                    });
}

Var reshape(Var x, Shape shape) {
    Graph& g = graph_of("reshape", {x});
    if (shape_numel(shape) != x.value().size()) shape_error("reshape", x.shape(), shape);
    const int xi = x.id;
    return g.record("reshape", x.value().reshaped(std::move(shape)), {xi},
                    [xi](Graph& gr, int, const Tensor& go) { gr.accumulate(xi, go); });
}

Var flatten(Var x) { return reshape(x, {1, x.value().size()}); }

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: no inputs");
    Graph& g = graph_of("concat", {xs.front()});
    const Shape& s0 = xs.front().shape();
    const AxisView v0 = axis_view(s0, axis, "concat");
    std::vector<std::size_t> extents;
    std::vector<int> ids;
    std::size_t total = 0;
    for (const Var& x : xs) {
        graph_of("concat", {xs.front(), x});
        const Shape& s = x.shape();
        if (s.size() != s0.size()) shape_error("concat", s0, s);
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != v0.axis && s[d] != s0[d]) shape_error("concat", s0, s);
        extents.push_back(s[v0.axis]);
        ids.push_back(x.id);
        total += s[v0.axis];
    }
    Shape os = s0;
    os[v0.axis] = total;
    Tensor out(os);
    const std::size_t inner = v0.inner, outer = v0.outer;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const Tensor& xv = xs[k].value();
        const std::size_t block = extents[k] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(xv.ptr() + o * block, block, out.ptr() + (o * total + offset) * inner);
        offset += extents[k];
    }
    return g.record("concat", std::move(out), ids, [ids, extents, inner, outer, total](Graph& gr, int, const Tensor& go) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t block = extents[k] * inner;
            if (gr.requires_grad(ids[k])) {
                Tensor gk(gr.value(ids[k]).shape());
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(go.ptr() + (o * total + off) * inner, block, gk.ptr() + o * block);
                gr.accumulate(ids[k], gk);
            }
            off += extents[k];
        }
    });
}

Var slice(Var x, int axis, std::size_t begin, std::size_t end) {
    Graph& g = graph_of("slice", {x});
    const Tensor& xv = x.value();
    const AxisView av = axis_view(xv.shape(), axis, "slice");
    if (begin >= end || end > av.n) {
        throw std::invalid_argument("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") invalid for shape " + shape_str(xv.shape()));
    }
    Shape os = xv.shape();
    os[av.axis] = end - begin;
    Tensor out(os);
    const std::size_t block = (end - begin) * av.inner;
    for (std::size_t o = 0; o < av.outer; ++o)
        std::copy_n(xv.ptr() + av.at(o, begin, 0), block, out.ptr() + o * block);
    const int xi = x.id;
    return g.record("slice", std::move(out), {xi}, [xi, av, begin, block](Graph& gr, int, const Tensor& go) {
        if (!gr.requires_grad(xi)) return;
        Tensor& gx = gr.grad_slot(xi);
        for (std::size_t o = 0; o < av.outer; ++o) {
            double* dst = gx.ptr() + av.at(o, begin, 0);
            const double* src = go.ptr() + o * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
    });
}

Var scaled_dot_attention(Var q, Var k, Var v, std::size_t nhead) {
    Graph& g = graph_of("scaled_dot_attention", {q, k, v});
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    const Tensor& vv = v.value();
    if (qv.rank() != 2 || qv.shape() != kv.shape()) shape_error("scaled_dot_attention", qv.shape(), kv.shape());
    if (kv.shape() != vv.shape()) shape_error("scaled_dot_attention", kv.shape(), vv.shape());
    const std::size_t T = qv.dim(0), D = qv.dim(1);
    if (nhead == 0 || D % nhead != 0) {
        throw std::invalid_argument("scaled_dot_attention: width " + std::to_string(D) +
                                    " not divisible by " + std::to_string(nhead) + " heads");
    }
    const std::size_t dh = D / nhead;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor probs({nhead, T, T});
    Tensor out({T, D});
    for (std::size_t h = 0; h < nhead; ++h) {
        double* P = probs.ptr() + h * T * T;
        for (std::size_t i = 0; i < T; ++i) {
            double m = -INFINITY;
            for (std::size_t j = 0; j < T; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += qv[i * D + h * dh + c] * kv[j * D + h * dh + c];
                P[i * T + j] = s * sc;
                m = std::max(m, P[i * T + j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
                P[i * T + j] = std::exp(P[i * T + j] - m);
                z += P[i * T + j];
            }
            for (std::size_t j = 0; j < T; ++j) P[i * T + j] /= z;
            for (std::size_t j = 0; j < T; ++j) {
                const double p = P[i * T + j];
                for (std::size_t c = 0; c < dh; ++c) out[i * D + h * dh + c] += p * vv[j * D + h * dh + c];
            }
        }
    }
    const int qi = q.id, ki = k.id, vi = v.id;
    Tensor saved = probs;
    Var y = g.record("scaled_dot_attention", std::move(out), {qi, ki, vi},
                     [qi, ki, vi, T, D, dh, nhead, sc, probs = std::move(saved)](Graph& gr, int, const Tensor& go) {
                         const Tensor& qv2 = gr.value(qi);
                         const Tensor& kv2 = gr.value(ki);
                         const Tensor& vv2 = gr.value(vi);
                         Tensor dq({T, D}), dk({T, D}), dv({T, D});
                         std::vector<double> dP(T * T);
                         for (std::size_t h = 0; h < nhead; ++h) {
                             const double* P = probs.ptr() + h * T * T;
                             for (std::size_t i = 0; i < T; ++i) {
                                 double rowdot = 0.0;
                                 for (std::size_t j = 0; j < T; ++j) {
                                     double s = 0.0;
                                     for (std::size_t c = 0; c < dh; ++c)
                                         s += go[i * D + h * dh + c] * vv2[j * D + h * dh + c];
                                     dP[i * T + j] = s;
                                     rowdot += s * P[i * T + j];
                                     const double p = P[i * T + j];
                                     for (std::size_t c = 0; c < dh; ++c) dv[j * D + h * dh + c] += p * go[i * D + h * dh + c];
                                 }
                                 for (std::size_t j = 0; j < T; ++j) {
                                     const double ds = P[i * T + j] * (dP[i * T + j] - rowdot) * sc;
                                     if (ds == 0.0) continue;
                                     for (std::size_t c = 0; c < dh; ++c) {
                                         dq[i * D + h * dh + c] += ds * kv2[j * D + h * dh + c];
                                         dk[j * D + h * dh + c] += ds * qv2[i * D + h * dh + c];
                                     }
                                 }
                             }
                         }
                         gr.accumulate(qi, dq);
                         gr.accumulate(ki, dk);
                         gr.accumulate(vi, dv);
                     });
    g.set_aux(y.id, std::move(probs));
    return y;
}

Var cross_entropy(Var logits, int label) {
    Graph& g = graph_of("cross_entropy", {logits});
    const Tensor& z = logits.value();
    if (z.rows() != 1 || label < 0 || static_cast<std::size_t>(label) >= z.size()) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " invalid for logits " +
                                    shape_str(z.shape()));
    }
    double m = -INFINITY;
    for (double v : z.data()) m = std::max(m, v);
    double s = 0.0;
    for (double v : z.data()) s += std::exp(v - m);
    const double lse = m + std::log(s);
    const int zi = logits.id;
    return g.record("cross_entropy", Tensor::scalar(lse - z[static_cast<std::size_t>(label)]), {zi},
                    [zi, label, lse](Graph& gr, int, const Tensor& go) {
                        const Tensor& zv = gr.value(zi);
                        Tensor gz(zv.shape());
                        for (std::size_t i = 0; i < zv.size(); ++i) {
                            const double p = std::exp(zv[i] - lse);
                            gz[i] = go[0] * (p - (static_cast<int>(i) == label ? 1.0 : 0.0));
                        }
                        gr.accumulate(zi, gz);
                    });
}

Var flood(Var x, double b) {
    Graph& g = graph_of("flood", {x});
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    // |x - b| + b written piecewise so that x >= b returns x exactly.
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] >= b ? xv[i] : (b - xv[i]) + b;
    const int xi = x.id;
    return g.record("flood", std::move(out), {xi}, [xi, b](Graph& gr, int, const Tensor& go) {
        const Tensor& xv2 = gr.value(xi);
        Tensor gx(xv2.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) {
            const double d = xv2[i] - b;
            gx[i] = d > 0.0 ? go[i] : (d < 0.0 ? -go[i] : 0.0);
        }
        gr.accumulate(xi, gx);
    });
}

}  // namespace mdfm::ad
