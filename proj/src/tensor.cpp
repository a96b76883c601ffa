#include "seqtrans/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace seqtrans::nn {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// C[m x n] += A[m x k] . B[k x n]
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x n] += A[m x k] . B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k x n] += A[m x k]^T . B[m x n]
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < m; ++p) {
        const double* arow = a + p * k;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Array::Array(std::vector<std::size_t> s) : shape(std::move(s)), data(shape_product(shape), 0.0) {}

Array::Array(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_product(shape) != data.size())
        throw std::invalid_argument("Array: " + std::to_string(data.size()) +
                                    " values do not fill shape " + shape_str(shape));
}

Array Array::vec(std::vector<double> d) {
    const std::size_t n = d.size();
    return Array({n}, std::move(d));
}

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

const std::vector<std::size_t>& Tensor::shape() const { return tape_->node(id_).shape; }
std::span<const double> Tensor::values() const { return tape_->node(id_).val; }
std::span<const double> Tensor::grad() const { return tape_->node(id_).grad; }

double Tensor::item() const {
    const auto& n = tape_->node(id_);
    if (n.val.size() != 1)
        throw std::logic_error("item() on non-scalar tensor " + shape_str(n.shape));
    return n.val[0];
}

LstmParams LstmParams::zeros(std::size_t d, std::size_t input_dim) {
    LstmParams p;
    p.w_input = Array({4 * d, input_dim});
    p.w_hidden = Array({4 * d, d});
    p.bias = Array({4 * d});
    return p;
}

Tensor Tape::make(std::vector<std::size_t> shape, std::size_t n, bool requires_grad) {
    Node nd;
    nd.shape = std::move(shape);
    nd.val.resize(n);
    nd.requires_grad = grad_enabled_ && requires_grad;
    nodes_.push_back(std::move(nd));
    return Tensor(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

void Tape::check_owned(Tensor t) const {
    if (t.tape_ != this) throw std::logic_error("tensor does not belong to this tape");
}

Tensor Tape::leaf(const Array& a) {
    Tensor t = make(a.shape, a.size(), true);
    node(t.id_).val = a.data;
    return t;
}

Tensor Tape::constant(const Array& a) {
    Tensor t = make(a.shape, a.size(), false);
    node(t.id_).val = a.data;
    return t;
}

Tensor Tape::constant(std::vector<double> data, std::vector<std::size_t> shape) {
    return constant(Array(std::move(shape), std::move(data)));
}

Tensor Tape::matmul(Tensor a, Tensor b) {
    check_owned(a);
    check_owned(b);
    const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<std::size_t> shape =
        a.shape().size() < 2 ? std::vector<std::size_t>{n} : std::vector<std::size_t>{m, n};
    Tensor out = make(std::move(shape), m * n,
                      node(a.id_).requires_grad || node(b.id_).requires_grad);
    gemm_nn(node(a.id_).val.data(), node(b.id_).val.data(), node(out.id_).val.data(), m, k, n);
    if (node(out.id_).requires_grad) {
        const auto ai = a.id_, bi = b.id_, oi = out.id_;
        node(oi).backprop = [ai, bi, oi, m, k, n](Tape& t) {
            const double* g = t.node(oi).grad.data();
            if (t.node(ai).requires_grad)
                gemm_nt(g, t.node(bi).val.data(), t.node(ai).grad.data(), m, n, k);
            if (t.node(bi).requires_grad)
                gemm_tn(t.node(ai).val.data(), g, t.node(bi).grad.data(), m, k, n);
        };
    }
    return out;
}

Tensor Tape::matmul_nt(Tensor a, Tensor b) {
    check_owned(a);
    check_owned(b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (k != b.cols())
        throw std::invalid_argument("matmul_nt: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()) + "^T");
    std::vector<std::size_t> shape =
        a.shape().size() < 2 ? std::vector<std::size_t>{n} : std::vector<std::size_t>{m, n};
    Tensor out = make(std::move(shape), m * n,
                      node(a.id_).requires_grad || node(b.id_).requires_grad);
    gemm_nt(node(a.id_).val.data(), node(b.id_).val.data(), node(out.id_).val.data(), m, k, n);
    if (node(out.id_).requires_grad) {
        const auto ai = a.id_, bi = b.id_, oi = out.id_;
        node(oi).backprop = [ai, bi, oi, m, k, n](Tape& t) {
            const double* g = t.node(oi).grad.data();
            if (t.node(ai).requires_grad)
                gemm_nn(g, t.node(bi).val.data(), t.node(ai).grad.data(), m, n, k);
            if (t.node(bi).requires_grad)
                gemm_tn(g, t.node(ai).val.data(), t.node(bi).grad.data(), m, n, k);
        };
    }
    return out;
}

Tensor Tape::add(Tensor a, Tensor b) {
    check_owned(a);
    check_owned(b);
    if (a.shape() != b.shape())
        throw std::invalid_argument("add: shape mismatch, " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out = make(a.shape(), a.size(),
                      node(a.id_).requires_grad || node(b.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& av = node(a.id_).val;
    const auto& bv = node(b.id_).val;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (node(out.id_).requires_grad) {
        const auto ai = a.id_, bi = b.id_, oi = out.id_;
        node(oi).backprop = [ai, bi, oi](Tape& t) {
            const auto& g = t.node(oi).grad;
            if (t.node(ai).requires_grad) {
                auto& ga = t.node(ai).grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (t.node(bi).requires_grad) {
                auto& gb = t.node(bi).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
    }
    return out;
}

Tensor Tape::add_rowvec(Tensor x, Tensor v) {
    check_owned(x);
    check_owned(v);
    const std::size_t b = x.rows(), k = x.cols();
    if (v.size() != k)
        throw std::invalid_argument("add_rowvec: " + shape_str(x.shape()) + " vs " +
                                    shape_str(v.shape()));
    Tensor out = make(x.shape(), x.size(),
                      node(x.id_).requires_grad || node(v.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    const auto& vv = node(v.id_).val;
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < k; ++j) ov[r * k + j] = xv[r * k + j] + vv[j];
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, vi = v.id_, oi = out.id_;
        node(oi).backprop = [xi, vi, oi, b, k](Tape& t) {
            const auto& g = t.node(oi).grad;
            if (t.node(xi).requires_grad) {
                auto& gx = t.node(xi).grad;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (t.node(vi).requires_grad) {
                auto& gv = t.node(vi).grad;
                for (std::size_t r = 0; r < b; ++r)
                    for (std::size_t j = 0; j < k; ++j) gv[j] += g[r * k + j];
            }
        };
    }
    return out;
}

Tensor Tape::mul(Tensor a, Tensor b) {
    check_owned(a);
    check_owned(b);
    if (a.shape() != b.shape())
        throw std::invalid_argument("mul: shape mismatch, " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor out = make(a.shape(), a.size(),
                      node(a.id_).requires_grad || node(b.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& av = node(a.id_).val;
    const auto& bv = node(b.id_).val;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (node(out.id_).requires_grad) {
        const auto ai = a.id_, bi = b.id_, oi = out.id_;
        node(oi).backprop = [ai, bi, oi](Tape& t) {
            const auto& g = t.node(oi).grad;
            if (t.node(ai).requires_grad) {
                auto& ga = t.node(ai).grad;
                const auto& bv2 = t.node(bi).val;
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (t.node(bi).requires_grad) {
                auto& gb = t.node(bi).grad;
                const auto& av2 = t.node(ai).val;
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        };
    }
    return out;
}

Tensor Tape::concat_cols(Tensor a, Tensor b) {
    check_owned(a);
    check_owned(b);
    if (a.rows() != b.rows())
        throw std::invalid_argument("concat: batch dimensions disagree, " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t r = a.rows(), ka = a.cols(), kb = b.cols();
    const bool vec = a.shape().size() < 2 && b.shape().size() < 2;
    std::vector<std::size_t> shape =
        vec ? std::vector<std::size_t>{ka + kb} : std::vector<std::size_t>{r, ka + kb};
    Tensor out = make(std::move(shape), r * (ka + kb),
                      node(a.id_).requires_grad || node(b.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& av = node(a.id_).val;
    const auto& bv = node(b.id_).val;
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(av.begin() + i * ka, ka, ov.begin() + i * (ka + kb));
        std::copy_n(bv.begin() + i * kb, kb, ov.begin() + i * (ka + kb) + ka);
    }
    if (node(out.id_).requires_grad) {
        const auto ai = a.id_, bi = b.id_, oi = out.id_;
        node(oi).backprop = [ai, bi, oi, r, ka, kb](Tape& t) {
            const auto& g = t.node(oi).grad;
            for (std::size_t i = 0; i < r; ++i) {
                if (t.node(ai).requires_grad) {
                    auto& ga = t.node(ai).grad;
                    for (std::size_t j = 0; j < ka; ++j) ga[i * ka + j] += g[i * (ka + kb) + j];
                }
                if (t.node(bi).requires_grad) {
                    auto& gb = t.node(bi).grad;
                    for (std::size_t j = 0; j < kb; ++j)
                        gb[i * kb + j] += g[i * (ka + kb) + ka + j];
                }
            }
        };
    }
    return out;
}

Tensor Tape::slice_cols(Tensor x, std::size_t begin, std::size_t end) {
    check_owned(x);
    const std::size_t r = x.rows(), k = x.cols();
    if (begin > end || end > k)
        throw std::invalid_argument("slice_cols: [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + shape_str(x.shape()));
    const std::size_t w = end - begin;
    const bool vec = x.shape().size() < 2;
    std::vector<std::size_t> shape =
        vec ? std::vector<std::size_t>{w} : std::vector<std::size_t>{r, w};
    Tensor out = make(std::move(shape), r * w, node(x.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(xv.begin() + i * k + begin, w, ov.begin() + i * w);
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi, r, k, begin, w](Tape& t) {
            const auto& g = t.node(oi).grad;
            auto& gx = t.node(xi).grad;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * k + begin + j] += g[i * w + j];
        };
    }
    return out;
}

Tensor Tape::unary_map(Tensor x, double (*f)(double), double (*df)(double val, double out)) {
    check_owned(x);
    Tensor out = make(x.shape(), x.size(), node(x.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(xv[i]);
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi, df](Tape& t) {
            const auto& g = t.node(oi).grad;
            const auto& xv2 = t.node(xi).val;
            const auto& ov2 = t.node(oi).val;
            auto& gx = t.node(xi).grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv2[i], ov2[i]);
        };
    }
    return out;
}

Tensor Tape::sigmoid(Tensor x) {
    return unary_map(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double o) { return o * (1.0 - o); });
}

Tensor Tape::tanh(Tensor x) {
    return unary_map(
        x, [](double v) { return std::tanh(v); }, [](double, double o) { return 1.0 - o * o; });
}

Tensor Tape::exp(Tensor x) {
    return unary_map(
        x, [](double v) { return std::exp(v); }, [](double, double o) { return o; });
}

Tensor Tape::log(Tensor x) {
    return unary_map(
        x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor Tape::sqrt(Tensor x) {
    return unary_map(
        x, [](double v) { return std::sqrt(v); }, [](double, double o) { return 0.5 / o; });
}

Tensor Tape::clamp_min(Tensor x, double floor) {
    check_owned(x);
    Tensor out = make(x.shape(), x.size(), node(x.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::max(xv[i], floor);
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi, floor](Tape& t) {
            const auto& g = t.node(oi).grad;
            const auto& xv2 = t.node(xi).val;
            auto& gx = t.node(xi).grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv2[i] >= floor) gx[i] += g[i];
        };
    }
    return out;
}

Tensor Tape::scale(Tensor x, double s) {
    check_owned(x);
    Tensor out = make(x.shape(), x.size(), node(x.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * s;
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi, s](Tape& t) {
            const auto& g = t.node(oi).grad;
            auto& gx = t.node(xi).grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
        };
    }
    return out;
}

Tensor Tape::add_scalar(Tensor x, double s) {
    check_owned(x);
    Tensor out = make(x.shape(), x.size(), node(x.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + s;
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi](Tape& t) {
            const auto& g = t.node(oi).grad;
            auto& gx = t.node(xi).grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        };
    }
    return out;
}

Tensor Tape::row_sum(Tensor x) {
    check_owned(x);
    const std::size_t r = x.rows(), k = x.cols();
    Tensor out = make({r}, r, node(x.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += xv[i * k + j];
        ov[i] = acc;
    }
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi, r, k](Tape& t) {
            const auto& g = t.node(oi).grad;
            auto& gx = t.node(xi).grad;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i];
        };
    }
    return out;
}

Tensor Tape::sum(Tensor x) {
    check_owned(x);
    Tensor out = make({}, 1, node(x.id_).requires_grad);
    const auto& xv = node(x.id_).val;
    node(out.id_).val[0] = std::accumulate(xv.begin(), xv.end(), 0.0);
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi](Tape& t) {
            const double g = t.node(oi).grad[0];
            auto& gx = t.node(xi).grad;
            for (double& v : gx) v += g;
        };
    }
    return out;
}

Tensor Tape::embedding_lookup(Tensor table, std::size_t id) {
    const int i = static_cast<int>(id);
    return embedding_lookup(table, std::span<const int>(&i, 1));
}

Tensor Tape::embedding_lookup(Tensor table, std::span<const int> ids) {
    check_owned(table);
    const std::size_t v = table.rows(), d = table.cols(), b = ids.size();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                                    " outside table " + shape_str(table.shape()));
    std::vector<std::size_t> shape =
        b == 1 ? std::vector<std::size_t>{d} : std::vector<std::size_t>{b, d};
    Tensor out = make(std::move(shape), b * d, node(table.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& tv = node(table.id_).val;
    for (std::size_t r = 0; r < b; ++r)
        std::copy_n(tv.begin() + static_cast<std::size_t>(ids[r]) * d, d, ov.begin() + r * d);
    if (node(out.id_).requires_grad) {
        const auto ti = table.id_, oi = out.id_;
        std::vector<int> idv(ids.begin(), ids.end());
        node(oi).backprop = [ti, oi, idv = std::move(idv), d](Tape& t) {
            const auto& g = t.node(oi).grad;
            auto& gt = t.node(ti).grad;
            for (std::size_t r = 0; r < idv.size(); ++r)
                for (std::size_t j = 0; j < d; ++j)
                    gt[static_cast<std::size_t>(idv[r]) * d + j] += g[r * d + j];
        };
    }
    return out;
}

Tensor Tape::dropout(Tensor x, double rate, Rng& rng, bool training) {
    check_owned(x);
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> factor(x.size());
    for (double& f : factor) f = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor out = make(x.shape(), x.size(), node(x.id_).requires_grad);
    auto& ov = node(out.id_).val;
    const auto& xv = node(x.id_).val;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor[i];
    if (node(out.id_).requires_grad) {
        const auto xi = x.id_, oi = out.id_;
        node(oi).backprop = [xi, oi, factor = std::move(factor)](Tape& t) {
            const auto& g = t.node(oi).grad;
            auto& gx = t.node(xi).grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
        };
    }
    return out;
}

Tensor Tape::softmax_cross_entropy(Tensor logits, int target) {
    Tensor losses = softmax_cross_entropy(logits, std::span<const int>(&target, 1));
    return sum(losses);
}

Tensor Tape::softmax_cross_entropy(Tensor logits, std::span<const int> targets) {
    check_owned(logits);
    const std::size_t b = logits.rows(), v = logits.cols();
    if (targets.size() != b)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(b) + " rows");
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= v)
            throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(t) +
                                    " outside " + std::to_string(v) + " classes");
    Tensor out = make({b}, b, node(logits.id_).requires_grad);
    const auto& lv = node(logits.id_).val;
    auto& ov = node(out.id_).val;
    std::vector<double> probs(b * v);
    for (std::size_t r = 0; r < b; ++r) {
        auto p = softmax(std::span<const double>(lv).subspan(r * v, v));
        ov[r] = -std::log(p[static_cast<std::size_t>(targets[r])]);
        std::copy(p.begin(), p.end(), probs.begin() + r * v);
    }
    if (node(out.id_).requires_grad) {
        const auto li = logits.id_, oi = out.id_;
        std::vector<int> tv(targets.begin(), targets.end());
        node(oi).backprop = [li, oi, tv = std::move(tv), probs = std::move(probs), v](Tape& t) {
            const auto& g = t.node(oi).grad;
            auto& gl = t.node(li).grad;
            for (std::size_t r = 0; r < tv.size(); ++r) {
                const double gr = g[r];
                if (gr == 0.0) continue;
                for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += gr * probs[r * v + j];
                gl[r * v + static_cast<std::size_t>(tv[r])] -= gr;
            }
        };
    }
    return out;
}

LstmLeaves Tape::lstm_leaves(const LstmParams& p) {
    return LstmLeaves{leaf(p.w_input), leaf(p.w_hidden), leaf(p.bias)};
}

LstmState Tape::lstm_initial_state(std::size_t batch, std::size_t d) {
    Array z = batch == 1 ? Array({d}) : Array({batch, d});
    return LstmState{constant(z), constant(z)};
}

LstmState Tape::lstm_step(const LstmLeaves& p, Tensor x, LstmState prev) {
    const std::size_t d = p.w_hidden.cols();
    Tensor gates = add_rowvec(add(matmul_nt(x, p.w_input), matmul_nt(prev.h, p.w_hidden)), p.bias);
    Tensor gate_in = sigmoid(slice_cols(gates, 0, d));
    Tensor gate_forget = sigmoid(slice_cols(gates, d, 2 * d));
    Tensor candidate = tanh(slice_cols(gates, 2 * d, 3 * d));
    Tensor gate_out = sigmoid(slice_cols(gates, 3 * d, 4 * d));
    Tensor c = add(mul(gate_forget, prev.c), mul(gate_in, candidate));
    Tensor h = mul(gate_out, tanh(c));
    return LstmState{h, c};
}

void Tape::backward(Tensor root) {
    check_owned(root);
    if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
    Node& rn = node(root.id_);
    if (rn.val.size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " + shape_str(rn.shape));
    for (std::uint32_t i = 0; i <= root.id_; ++i) {
        Node& n = nodes_[i];
        if (n.requires_grad) n.grad.assign(n.val.size(), 0.0);
    }
    if (!rn.requires_grad) return;
    rn.grad[0] = 1.0;
    for (std::uint32_t i = root.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backprop) n.backprop(*this);
    }
}

}  // namespace seqtrans::nn
