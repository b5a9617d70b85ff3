#include "posemine/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "posemine/common.hpp"

namespace posemine {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::string g_fault_op;

void accum(TensorData& t, const std::vector<double>& delta) {
    if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
    for (std::size_t i = 0; i < delta.size(); ++i) t.grad[i] += delta[i];
}

std::vector<double>& grad_of(const std::shared_ptr<TensorData>& t) {
    if (t->grad.empty()) t->grad.assign(t->values.size(), 0.0);
    return t->grad;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw_shape_error(op, a.shape(), b.shape());
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void throw_shape_error(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values.assign(shape_numel(d->shape), 0.0);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data_->values.begin(), t.data_->values.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<double> values, Shape shape, bool requires_grad) {
    if (values.size() != shape_numel(shape))
        throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({value}, {}, requires_grad);
}

double Tensor::scalar_value() const {
    if (numel() != 1) throw ContractError("scalar_value: tensor has " +
                                          std::to_string(numel()) + " elements");
    return data_->values[0];
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad(): no gradient present");
    return data_->grad;
}

void Tensor::ensure_grad() {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
}

void Tensor::zero_grad() {
    data_->grad.assign(data_->values.size(), 0.0);
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() {
    g_active_tape = prev_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::set_fault_op(std::string op) { g_fault_op = std::move(op); }

void Tape::record(const char* op, std::shared_ptr<TensorData> out, std::function<void()> back) {
    nodes_.push_back(Node{op, std::move(out), std::move(back)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (nodes_.empty()) throw ContractError("backward: tape is empty");
    loss.node()->grad.assign(1, 1.0);
    bool fault_pending = !g_fault_op.empty();
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) continue;  // nothing flowed into this node
        if (fault_pending && g_fault_op == it->op) {
            for (double& g : it->out->grad) g *= 1.01;
            fault_pending = false;
        }
        it->back();
    }
    nodes_.clear();
}

bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// ---- elementwise ops --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape::active()->record("add", od, [ad, bd, od]() {
            if (ad->requires_grad) accum(*ad, od->grad);
            if (bd->requires_grad) accum(*bd, od->grad);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape::active()->record("sub", od, [ad, bd, od]() {
            if (ad->requires_grad) accum(*ad, od->grad);
            if (bd->requires_grad) {
                auto& bg = grad_of(bd);
                for (std::size_t i = 0; i < od->grad.size(); ++i) bg[i] -= od->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape::active()->record("mul", od, [ad, bd, od]() {
            if (ad->requires_grad) {
                auto& ag = grad_of(ad);
                for (std::size_t i = 0; i < od->grad.size(); ++i)
                    ag[i] += od->grad[i] * bd->values[i];
            }
            if (bd->requires_grad) {
                auto& bg = grad_of(bd);
                for (std::size_t i = 0; i < od->grad.size(); ++i)
                    bg[i] += od->grad[i] * ad->values[i];
            }
        });
    }
    return out;
}

Tensor smul(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * c;
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("smul", od, [ad, od, c]() {
            auto& ag = grad_of(ad);
            for (std::size_t i = 0; i < od->grad.size(); ++i) ag[i] += od->grad[i] * c;
        });
    }
    return out;
}

Tensor abs_val(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = std::fabs(av[i]);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("abs", od, [ad, od]() {
            auto& ag = grad_of(ad);
            for (std::size_t i = 0; i < od->grad.size(); ++i) {
                const double x = ad->values[i];
                ag[i] += od->grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-av[i]));
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("sigmoid", od, [ad, od]() {
            auto& ag = grad_of(ad);
            for (std::size_t i = 0; i < od->grad.size(); ++i) {
                const double s = od->values[i];
                ag[i] += od->grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

Tensor logit(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double p = std::clamp(av[i], kLogitEps, 1.0 - kLogitEps);
        ov[i] = std::log(p / (1.0 - p));
    }
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("logit", od, [ad, od]() {
            auto& ag = grad_of(ad);
            for (std::size_t i = 0; i < od->grad.size(); ++i) {
                const double p = ad->values[i];
                if (p <= kLogitEps || p >= 1.0 - kLogitEps) continue;  // clamped flat
                ag[i] += od->grad[i] / (p * (1.0 - p));
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (std::size_t i = 0; i < av.size(); ++i)
        ov[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * kInvSqrt2));
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("gelu", od, [ad, od]() {
            auto& ag = grad_of(ad);
            for (std::size_t i = 0; i < od->grad.size(); ++i) {
                const double x = ad->values[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ag[i] += od->grad[i] * (cdf + x * pdf);
            }
        });
    }
    return out;
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw_shape_error("matmul", a.shape(), b.shape());
    const int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* ov = out.mutable_values().data();
    for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv + p * m;
            double* orow = ov + i * m;
            for (int j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }
    }
    if (tracing({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.node(), bd = b.node(), od = out.node();
        Tape::active()->record("matmul", od, [ad, bd, od, n, k, m]() {
            const auto& g = od->grad;
            if (ad->requires_grad) {
                auto& ag = grad_of(ad);
                for (int i = 0; i < n; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (int j = 0; j < m; ++j) s += g[i * m + j] * bd->values[p * m + j];
                        ag[i * k + p] += s;
                    }
            }
            if (bd->requires_grad) {
                auto& bg = grad_of(bd);
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < m; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < n; ++i) s += ad->values[i * k + p] * g[i * m + j];
                        bg[p * m + j] += s;
                    }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const bool vec = x.ndim() == 1;
    if (w.ndim() != 2 || (vec ? x.dim(0) : x.dim(x.ndim() - 1)) != w.dim(0))
        throw_shape_error("linear", x.shape(), w.shape());
    const int in = w.dim(0), outd = w.dim(1);
    const int n = vec ? 1 : x.dim(0);
    if (!vec && x.ndim() != 2) throw_shape_error("linear", x.shape(), w.shape());
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != outd))
        throw_shape_error("linear", b.shape(), w.shape());

    Tensor out = Tensor::zeros(vec ? Shape{outd} : Shape{n, outd});
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    double* ov = out.mutable_values().data();
    for (int i = 0; i < n; ++i) {
        double* orow = ov + i * outd;
        if (b.defined()) {
            const double* bv = b.values().data();
            for (int j = 0; j < outd; ++j) orow[j] = bv[j];
        }
        for (int p = 0; p < in; ++p) {
            const double xip = xv[i * in + p];
            if (xip == 0.0) continue;
            const double* wrow = wv + p * outd;
            for (int j = 0; j < outd; ++j) orow[j] += xip * wrow[j];
        }
    }
    const Tensor* bias = b.defined() ? &b : nullptr;
    if ((bias && tracing({&x, &w, bias})) || (!bias && tracing({&x, &w}))) {
        out.set_requires_grad(true);
        auto xd = x.node(), wd = w.node(), od = out.node();
        auto bdn = b.defined() ? b.node() : nullptr;
        Tape::active()->record("linear", od, [xd, wd, bdn, od, n, in, outd]() {
            const auto& g = od->grad;
            if (xd->requires_grad) {
                auto& xg = grad_of(xd);
                for (int i = 0; i < n; ++i)
                    for (int p = 0; p < in; ++p) {
                        double s = 0.0;
                        for (int j = 0; j < outd; ++j) s += g[i * outd + j] * wd->values[p * outd + j];
                        xg[i * in + p] += s;
                    }
            }
            if (wd->requires_grad) {
                auto& wg = grad_of(wd);
                for (int p = 0; p < in; ++p)
                    for (int j = 0; j < outd; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < n; ++i) s += xd->values[i * in + p] * g[i * outd + j];
                        wg[p * outd + j] += s;
                    }
            }
            if (bdn && bdn->requires_grad) {
                auto& bg = grad_of(bdn);
                for (int j = 0; j < outd; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) s += g[i * outd + j];
                    bg[j] += s;
                }
            }
        });
    }
    return out;
}

Tensor softmax_last(const Tensor& a) {
    if (a.ndim() < 1) throw ShapeError("softmax: scalar input");
    const int cols = a.dim(a.ndim() - 1);
    const int rows = static_cast<int>(a.numel()) / cols;
    Tensor out = Tensor::zeros(a.shape());
    const double* av = a.values().data();
    double* ov = out.mutable_values().data();
    for (int r = 0; r < rows; ++r) {
        const double* x = av + r * cols;
        double* y = ov + r * cols;
        double mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < cols; ++j) y[j] /= sum;
    }
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("softmax", od, [ad, od, rows, cols]() {
            auto& ag = grad_of(ad);
            for (int r = 0; r < rows; ++r) {
                const double* y = od->values.data() + r * cols;
                const double* g = od->grad.data() + r * cols;
                double dot = 0.0;
                for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
                for (int j = 0; j < cols; ++j) ag[r * cols + j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out = Tensor::scalar(s);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("sum", od, [ad, od]() {
            auto& ag = grad_of(ad);
            const double g = od->grad[0];
            for (double& v : ag) v += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    double s = 0.0;
    for (double v : a.values()) s += v;
    Tensor out = Tensor::scalar(s / n);
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("mean", od, [ad, od, n]() {
            auto& ag = grad_of(ad);
            const double g = od->grad[0] / n;
            for (double& v : ag) v += g;
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: empty input list");
    const Shape& base = parts[0].shape();
    const int nd = static_cast<int>(base.size());
    if (axis < 0 || axis >= nd) throw ShapeError("concat: bad axis " + std::to_string(axis));
    Shape out_shape = base;
    int total_axis = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != nd) throw_shape_error("concat", base, p.shape());
        for (int d = 0; d < nd; ++d)
            if (d != axis && p.dim(d) != base[static_cast<std::size_t>(d)])
                throw_shape_error("concat", base, p.shape());
        total_axis += p.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = total_axis;

    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(base[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < nd; ++d) inner *= static_cast<std::size_t>(base[static_cast<std::size_t>(d)]);

    Tensor out = Tensor::zeros(out_shape);
    auto& ov = out.mutable_values();
    std::size_t axis_offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t p_axis = static_cast<std::size_t>(p.dim(axis));
        const auto& pv = p.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(pv.begin() + static_cast<std::ptrdiff_t>(o * p_axis * inner),
                      pv.begin() + static_cast<std::ptrdiff_t>((o + 1) * p_axis * inner),
                      ov.begin() + static_cast<std::ptrdiff_t>((o * static_cast<std::size_t>(total_axis) + axis_offset) * inner));
        axis_offset += p_axis;
    }

    bool trace = false;
    if (Tape::active())
        for (const Tensor& p : parts)
            if (p.requires_grad()) { trace = true; break; }
    if (trace) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> pds;
        std::vector<std::size_t> axis_sizes;
        pds.reserve(parts.size());
        for (const Tensor& p : parts) {
            pds.push_back(p.node());
            axis_sizes.push_back(static_cast<std::size_t>(p.dim(axis)));
        }
        auto od = out.node();
        const std::size_t ta = static_cast<std::size_t>(total_axis);
        Tape::active()->record("concat", od, [pds, axis_sizes, od, outer, inner, ta]() {
            std::size_t axis_offset = 0;
            for (std::size_t pi = 0; pi < pds.size(); ++pi) {
                const std::size_t p_axis = axis_sizes[pi];
                if (pds[pi]->requires_grad) {
                    auto& pg = grad_of(pds[pi]);
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* src = od->grad.data() + (o * ta + axis_offset) * inner;
                        double* dst = pg.data() + o * p_axis * inner;
                        for (std::size_t i = 0; i < p_axis * inner; ++i) dst[i] += src[i];
                    }
                }
                axis_offset += p_axis;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) throw_shape_error("reshape", a.shape(), shape);
    Tensor out = Tensor::from(a.values(), std::move(shape));
    if (tracing({&a})) {
        out.set_requires_grad(true);
        auto ad = a.node(), od = out.node();
        Tape::active()->record("reshape", od, [ad, od]() { accum(*ad, od->grad); });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int d = x.dim(x.ndim() - 1);
    if (gamma.ndim() != 1 || gamma.dim(0) != d) throw_shape_error("layer_norm", x.shape(), gamma.shape());
    if (beta.ndim() != 1 || beta.dim(0) != d) throw_shape_error("layer_norm", x.shape(), beta.shape());
    const int rows = static_cast<int>(x.numel()) / d;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> mean(static_cast<std::size_t>(rows)), inv_std(static_cast<std::size_t>(rows));
    const double* xv = x.values().data();
    const double* gv = gamma.values().data();
    const double* bv = beta.values().data();
    double* ov = out.mutable_values().data();
    for (int r = 0; r < rows; ++r) {
        const double* xr = xv + r * d;
        double m = 0.0;
        for (int j = 0; j < d; ++j) m += xr[j];
        m /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        mean[static_cast<std::size_t>(r)] = m;
        inv_std[static_cast<std::size_t>(r)] = is;
        for (int j = 0; j < d; ++j) ov[r * d + j] = (xr[j] - m) * is * gv[j] + bv[j];
    }
    if (tracing({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto xd = x.node(), gd = gamma.node(), bd = beta.node(), od = out.node();
        Tape::active()->record("layer_norm", od, [xd, gd, bd, od, rows, d, mean, inv_std]() {
            for (int r = 0; r < rows; ++r) {
                const double* xr = xd->values.data() + r * d;
                const double* g = od->grad.data() + r * d;
                const double m = mean[static_cast<std::size_t>(r)];
                const double is = inv_std[static_cast<std::size_t>(r)];
                if (gd->requires_grad) {
                    auto& gg = grad_of(gd);
                    for (int j = 0; j < d; ++j) gg[j] += g[j] * (xr[j] - m) * is;
                }
                if (bd->requires_grad) {
                    auto& bg = grad_of(bd);
                    for (int j = 0; j < d; ++j) bg[j] += g[j];
                }
                if (xd->requires_grad) {
                    auto& xg = grad_of(xd);
                    // dxhat_j = g_j * gamma_j; dx via the usual two correction sums
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dxh = g[j] * gd->values[j];
                        const double xh = (xr[j] - m) * is;
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xh;
                    }
                    for (int j = 0; j < d; ++j) {
                        const double dxh = g[j] * gd->values[j];
                        const double xh = (xr[j] - m) * is;
                        xg[r * d + j] += is * (dxh - sum_dxhat / d - xh * sum_dxhat_xhat / d);
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    if (x.ndim() != 3 || w.ndim() != 4 || x.dim(2) != w.dim(2))
        throw_shape_error("conv2d", x.shape(), w.shape());
    const int h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
    const int kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
    if (b.defined() && (b.ndim() != 1 || b.dim(0) != cout))
        throw_shape_error("conv2d", b.shape(), w.shape());
    const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const int ho = (h + 2 * ph - kh) / stride + 1;
    const int wo = (wd + 2 * pw - kw) / stride + 1;
    Tensor out = Tensor::zeros({ho, wo, cout});
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    double* ov = out.mutable_values().data();
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            double* opix = ov + (oy * wo + ox) * cout;
            if (b.defined())
                for (int c = 0; c < cout; ++c) opix[c] = b.values()[static_cast<std::size_t>(c)];
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride + ky - ph;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride + kx - pw;
                    if (ix < 0 || ix >= wd) continue;
                    const double* xpix = xv + (iy * wd + ix) * cin;
                    const double* wk = wv + ((ky * kw + kx) * cin) * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double xi = xpix[ci];
                        if (xi == 0.0) continue;
                        const double* wrow = wk + ci * cout;
                        for (int c = 0; c < cout; ++c) opix[c] += xi * wrow[c];
                    }
                }
            }
        }
    }
    const Tensor* bias = b.defined() ? &b : nullptr;
    if ((bias && tracing({&x, &w, bias})) || (!bias && tracing({&x, &w}))) {
        out.set_requires_grad(true);
        auto xd = x.node(), wd_ = w.node(), od = out.node();
        auto bd = b.defined() ? b.node() : nullptr;
        Tape::active()->record("conv2d", od,
                               [xd, wd_, bd, od, h, wd, cin, kh, kw, cout, ph, pw, ho, wo, stride]() {
            const auto& g = od->grad;
            auto* xg = xd->requires_grad ? &grad_of(xd) : nullptr;
            auto* wg = wd_->requires_grad ? &grad_of(wd_) : nullptr;
            auto* bg = (bd && bd->requires_grad) ? &grad_of(bd) : nullptr;
            for (int oy = 0; oy < ho; ++oy) {
                for (int ox = 0; ox < wo; ++ox) {
                    const double* gpix = g.data() + (oy * wo + ox) * cout;
                    if (bg)
                        for (int c = 0; c < cout; ++c) (*bg)[static_cast<std::size_t>(c)] += gpix[c];
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - ph;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pw;
                            if (ix < 0 || ix >= wd) continue;
                            const std::size_t xoff = static_cast<std::size_t>((iy * wd + ix) * cin);
                            const std::size_t woff = static_cast<std::size_t>(((ky * kw + kx) * cin) * cout);
                            for (int ci = 0; ci < cin; ++ci) {
                                double gx = 0.0;
                                const double xi = xd->values[xoff + static_cast<std::size_t>(ci)];
                                for (int c = 0; c < cout; ++c) {
                                    const double gc = gpix[c];
                                    if (wg) (*wg)[woff + static_cast<std::size_t>(ci * cout + c)] += xi * gc;
                                    gx += wd_->values[woff + static_cast<std::size_t>(ci * cout + c)] * gc;
                                }
                                if (xg) (*xg)[xoff + static_cast<std::size_t>(ci)] += gx;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    if (a.ndim() != 2 || v.ndim() != 1 || a.dim(1) != v.dim(0))
        throw_shape_error("add_rowvec", a.shape(), v.shape());
    const int n = a.dim(0), d = a.dim(1);
    Tensor out = Tensor::zeros(a.shape());
    auto& ov = out.mutable_values();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            ov[static_cast<std::size_t>(i * d + j)] =
                a.at(static_cast<std::size_t>(i * d + j)) + v.at(static_cast<std::size_t>(j));
    if (tracing({&a, &v})) {
        out.set_requires_grad(true);
        auto ad = a.node(), vd = v.node(), od = out.node();
        Tape::active()->record("add_rowvec", od, [ad, vd, od, n, d]() {
            if (ad->requires_grad) accum(*ad, od->grad);
            if (vd->requires_grad) {
                auto& vg = grad_of(vd);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                        vg[static_cast<std::size_t>(j)] += od->grad[static_cast<std::size_t>(i * d + j)];
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
    if (x.ndim() != 2) throw ShapeError("gather_rows: need 2-d input, got " + shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), d});
    auto& ov = out.mutable_values();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const int src = rows[r];
        if (src < 0 || src >= n) throw ContractError("gather_rows: index out of range");
        std::copy_n(x.values().begin() + src * d, d, ov.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(d)));
    }
    if (tracing({&x})) {
        out.set_requires_grad(true);
        auto xd = x.node(), od = out.node();
        Tape::active()->record("gather_rows", od, [xd, od, rows, d]() {
            auto& xg = grad_of(xd);
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (int j = 0; j < d; ++j)
                    xg[static_cast<std::size_t>(rows[r] * d + j)] += od->grad[r * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int start, int count) {
    if (x.ndim() != 2) throw ShapeError("slice_rows: need 2-d input, got " + shape_str(x.shape()));
    if (start < 0 || count < 0 || start + count > x.dim(0))
        throw ContractError("slice_rows: range out of bounds");
    const int d = x.dim(1);
    Tensor out = Tensor::zeros({count, d});
    std::copy_n(x.values().begin() + start * d, static_cast<std::size_t>(count) * static_cast<std::size_t>(d),
                out.mutable_values().begin());
    if (tracing({&x})) {
        out.set_requires_grad(true);
        auto xd = x.node(), od = out.node();
        Tape::active()->record("slice_rows", od, [xd, od, start, count, d]() {
            auto& xg = grad_of(xd);
            for (std::size_t i = 0; i < static_cast<std::size_t>(count) * static_cast<std::size_t>(d); ++i)
                xg[static_cast<std::size_t>(start * d) + i] += od->grad[i];
        });
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: empty input list");
    const int d = rows[0].dim(0);
    for (const Tensor& r : rows)
        if (r.ndim() != 1 || r.dim(0) != d) throw_shape_error("stack_rows", rows[0].shape(), r.shape());
    Tensor out = Tensor::zeros({static_cast<int>(rows.size()), d});
    auto& ov = out.mutable_values();
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy_n(rows[r].values().begin(), d, ov.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(d)));
    bool trace = false;
    if (Tape::active())
        for (const Tensor& r : rows)
            if (r.requires_grad()) { trace = true; break; }
    if (trace) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> rds;
        rds.reserve(rows.size());
        for (const Tensor& r : rows) rds.push_back(r.node());
        auto od = out.node();
        Tape::active()->record("stack_rows", od, [rds, od, d]() {
            for (std::size_t r = 0; r < rds.size(); ++r) {
                if (!rds[r]->requires_grad) continue;
                auto& rg = grad_of(rds[r]);
                for (int j = 0; j < d; ++j) rg[static_cast<std::size_t>(j)] += od->grad[r * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
            }
        });
    }
    return out;
}

Tensor weighted_sum_rows(const Tensor& v, const Tensor& w) {
    if (v.ndim() != 2 || w.ndim() != 1 || v.dim(0) != w.dim(0))
        throw_shape_error("weighted_sum_rows", v.shape(), w.shape());
    const int n = v.dim(0), d = v.dim(1);
    Tensor out = Tensor::zeros({d});
    auto& ov = out.mutable_values();
    for (int i = 0; i < n; ++i) {
        const double wi = w.at(static_cast<std::size_t>(i));
        for (int j = 0; j < d; ++j) ov[static_cast<std::size_t>(j)] += wi * v.at(static_cast<std::size_t>(i * d + j));
    }
    if (tracing({&v, &w})) {
        out.set_requires_grad(true);
        auto vd = v.node(), wd = w.node(), od = out.node();
        Tape::active()->record("weighted_sum_rows", od, [vd, wd, od, n, d]() {
            if (vd->requires_grad) {
                auto& vg = grad_of(vd);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j)
                        vg[static_cast<std::size_t>(i * d + j)] += wd->values[static_cast<std::size_t>(i)] * od->grad[static_cast<std::size_t>(j)];
            }
            if (wd->requires_grad) {
                auto& wg = grad_of(wd);
                for (int i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < d; ++j) s += vd->values[static_cast<std::size_t>(i * d + j)] * od->grad[static_cast<std::size_t>(j)];
                    wg[static_cast<std::size_t>(i)] += s;
                }
            }
        });
    }
    return out;
}

Tensor average(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("average: empty input list");
    for (const Tensor& p : parts) check_same_shape("average", parts[0], p);
    const std::size_t n = parts.size();
    const std::size_t len = parts[0].numel();

    bool all_equal = true;
    for (std::size_t p = 1; p < n && all_equal; ++p)
        all_equal = parts[p].values() == parts[0].values();

    Tensor out = Tensor::zeros(parts[0].shape());
    auto& ov = out.mutable_values();
    if (all_equal) {
        ov = parts[0].values();
    } else {
        std::vector<double> slot(n);
        for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t p = 0; p < n; ++p) slot[p] = parts[p].at(i);
            std::sort(slot.begin(), slot.end());
            double s = 0.0;
            for (double v : slot) s += v;
            ov[i] = s / static_cast<double>(n);
        }
    }
    bool trace = false;
    if (Tape::active())
        for (const Tensor& p : parts)
            if (p.requires_grad()) { trace = true; break; }
    if (trace) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData>> pds;
        pds.reserve(n);
        for (const Tensor& p : parts) pds.push_back(p.node());
        auto od = out.node();
        const double inv = 1.0 / static_cast<double>(n);
        Tape::active()->record("average", od, [pds, od, inv]() {
            for (const auto& pd : pds) {
                if (!pd->requires_grad) continue;
                auto& pg = grad_of(pd);
                for (std::size_t i = 0; i < od->grad.size(); ++i) pg[i] += od->grad[i] * inv;
            }
        });
    }
    return out;
}

}  // namespace posemine
