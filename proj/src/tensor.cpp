// SPDX-License-Identifier: Apache-2.0
#include "odisr/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace odisr {

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Buffer::Buffer(DType dtype, std::size_t size) {
  if (dtype == DType::f32)
    data_ = std::vector<float>(size, 0.0f);
  else
    data_ = std::vector<double>(size, 0.0);
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

void Buffer::fill_zero() {
  std::visit([](auto& v) { std::fill(v.begin(), v.end(), 0); }, data_);
}

void Buffer::accumulate(const Buffer& other) {
  if (other.dtype() != dtype() || other.size() != size())
    throw DimensionError("gradient accumulation between incompatible buffers");
  dispatch(dtype(), [&]<typename T>() {
    auto dst = view<T>();
    auto src = other.view<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

Buffer& TensorImpl::ensure_grad() {
  if (!grad) grad.emplace(data.dtype(), data.size());
  return *grad;
}

namespace {
thread_local bool g_grad_enabled = true;
thread_local PieceLog* g_piece_log = nullptr;
}  // namespace

PieceLog::PieceLog() : previous_(g_piece_log) { g_piece_log = this; }
PieceLog::~PieceLog() { g_piece_log = previous_; }
std::vector<std::int64_t>* active_piece_log() { return g_piece_log ? &g_piece_log->pieces_ : nullptr; }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::make(Shape shape, Buffer data) {
  if (odisr::numel(shape) != data.size())
    throw DimensionError("buffer of " + std::to_string(data.size()) +
                         " elements does not fit shape " + to_string(shape));
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  return t;
}

Tensor Tensor::zeros(Shape shape, DType dtype) {
  auto n = odisr::numel(shape);
  return make(std::move(shape), Buffer(dtype, n));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  t.assign(values);
  return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw Error("use of an undefined tensor");
  return *impl_;
}

std::int64_t Tensor::dim(int axis) const {
  int r = rank();
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

double Tensor::at(std::size_t i) const {
  return dispatch(dtype(), [&]<typename T>() { return static_cast<double>(data<T>()[i]); });
}

double Tensor::item() const {
  if (numel() != 1)
    throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  dispatch(dtype(), [&]<typename T>() {
    auto d = data<T>();
    std::copy(d.begin(), d.end(), out.begin());
  });
  return out;
}

void Tensor::assign(const std::vector<double>& values) {
  if (values.size() != numel())
    throw DimensionError("assign: " + std::to_string(values.size()) +
                         " values for shape " + to_string(shape()));
  dispatch(dtype(), [&]<typename T>() {
    auto d = mutable_data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl().grad) throw Error("tensor has no gradient");
  return make(shape(), *impl().grad);
}

const Buffer& Tensor::grad_buffer() const {
  if (!impl().grad) throw Error("tensor has no gradient");
  return *impl().grad;
}

void Tensor::zero_grad() { impl().grad.reset(); }

void Tensor::backward() {
  if (numel() != 1)
    throw DimensionError("backward() requires a scalar, got shape " + to_string(shape()));
  if (!requires_grad()) throw Error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorImpl* child = node->inputs[next++].impl_.get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (auto* node : order) node->ensure_grad();
  dispatch(dtype(), [&]<typename T>() { impl_->grad->view<T>()[0] += T(1); });
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

Tensor Tensor::detach() const { return make(shape(), impl().data); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  Tensor out = zeros(shape(), target);
  out.assign(to_vector());
  return out;
}

Tensor make_result(Shape shape, Buffer data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& self)> backward) {
  Tensor out = Tensor::make(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  auto& impl = out.impl();
  impl.requires_grad = true;
  std::erase_if(inputs, [](const Tensor& t) { return !t.defined(); });
  impl.inputs = std::move(inputs);
  impl.backward_fn = std::move(backward);
  return out;
}

}  // namespace odisr
