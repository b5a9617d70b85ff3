#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace posemine {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] void throw_shape_error(const char* op, const Shape& a, const Shape& b);

struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until backward touches this tensor
    bool requires_grad = false;
};

// Dense row-major double tensor. Copies are shallow handles onto shared
// storage; values are treated as immutable once an op has consumed them.
// Leaf parameters may be mutated through mutable_values() between passes.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<double> values, Shape shape, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return data_->shape; }
    int ndim() const { return static_cast<int>(data_->shape.size()); }
    int dim(int i) const { return data_->shape[static_cast<std::size_t>(i)]; }
    std::size_t numel() const { return data_->values.size(); }
    bool requires_grad() const { return data_ && data_->requires_grad; }
    void set_requires_grad(bool rg) { data_->requires_grad = rg; }

    const std::vector<double>& values() const { return data_->values; }
    std::vector<double>& mutable_values() { return data_->values; }
    double at(std::size_t i) const { return data_->values[i]; }
    double scalar_value() const;

    bool has_grad() const { return data_ && !data_->grad.empty(); }
    const std::vector<double>& grad() const;
    void ensure_grad();
    void zero_grad();

    const std::shared_ptr<TensorData>& node() const { return data_; }

  private:
    explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}
    std::shared_ptr<TensorData> data_;
};

// Execution-ordered record of differentiable ops. Constructing a Tape makes
// it the active tape for the current thread; ops record themselves while one
// is active and any input requires gradients. backward() replays the record
// in reverse exactly once and then clears it.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(const char* op, std::shared_ptr<TensorData> out, std::function<void()> back);
    void backward(const Tensor& loss);
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Verification hook: scales the output gradient of the first node whose
    // op name matches before its backward runs. Empty string disables.
    static void set_fault_op(std::string op);

  private:
    struct Node {
        const char* op;
        std::shared_ptr<TensorData> out;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    Tape* prev_ = nullptr;
};

// True when an op should record itself: a tape is active and some input
// carries gradient requirements.
bool tracing(std::initializer_list<const Tensor*> inputs);

// ---- elementwise and linear-algebra ops -----------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor smul(const Tensor& a, double c);
Tensor abs_val(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Inverse sigmoid; input is clamped to [kLogitEps, 1 - kLogitEps] first.
inline constexpr double kLogitEps = 1e-6;
Tensor logit(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
// x: {n,in} or {in}; w: {in,out}; b: {out} or undefined for no bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor softmax_last(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor reshape(const Tensor& a, Shape shape);

// x: {..., D}; gamma/beta: {D}
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x: {H,W,Cin}; w: {kh,kw,Cin,Cout}; b: {Cout}. Zero 'same' padding for odd
// kernels, then strided.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);

// a: {n,d}; v: {d} -> {n,d}: out[i,:] = a[i,:] + v
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor stack_rows(const std::vector<Tensor>& rows);
// v: {n,d}; w: {n} -> {d}: sum_i w[i] * v[i,:]
Tensor weighted_sum_rows(const Tensor& v, const Tensor& w);
// Element mean of same-shaped tensors. Summation happens in ascending value
// order per element so the result is independent of the input order, and a
// list of identical tensors returns that tensor's values bit for bit.
Tensor average(const std::vector<Tensor>& parts);

}  // namespace posemine
