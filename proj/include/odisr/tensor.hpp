// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "odisr/error.hpp"

namespace odisr {

/// Storage precision of a tensor. The numeric values double as the
/// checkpoint dtype tags.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

const char* dtype_name(DType dt);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Invoke `fn.template operator()<T>()` with T matching `dt`.
template <typename F>
decltype(auto) dispatch(DType dt, F&& fn) {
  if (dt == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

using Shape = std::vector<std::int64_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Flat typed storage, either 32- or 64-bit.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dtype, std::size_t size);

  DType dtype() const { return static_cast<DType>(data_.index()); }
  std::size_t size() const;

  template <typename T>
  std::span<T> view() {
    return std::span<T>(std::get<std::vector<T>>(data_));
  }
  template <typename T>
  std::span<const T> view() const {
    return std::span<const T>(std::get<std::vector<T>>(data_));
  }

  void fill_zero();
  /// Element-wise `this += other`; dtypes must agree.
  void accumulate(const Buffer& other);

 private:
  std::variant<std::vector<float>, std::vector<double>> data_;
};

class Tensor;

struct TensorImpl {
  Shape shape;
  Buffer data;
  std::optional<Buffer> grad;
  bool requires_grad = false;
  // Autograd tape: the inputs this tensor was computed from and the closure
  // that pushes this tensor's gradient into them.
  std::vector<Tensor> inputs;
  std::function<void(TensorImpl& self)> backward_fn;

  Buffer& ensure_grad();
};

/// Shared handle to a dense row-major array with an optional reverse-mode
/// tape. Copies alias the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, const std::vector<double>& values,
                            DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl().shape; }
  int rank() const { return static_cast<int>(impl().shape.size()); }
  /// Extent along `axis`; negative axes count from the end.
  std::int64_t dim(int axis) const;
  std::size_t numel() const { return impl().data.size(); }
  DType dtype() const { return impl().data.dtype(); }

  template <typename T>
  std::span<const T> data() const {
    return impl().data.view<T>();
  }
  /// Raw write access. Only for leaves (parameters, inputs) outside a live
  /// tape, e.g. optimizer updates and checkpoint loads.
  template <typename T>
  std::span<T> mutable_data() {
    return impl().data.view<T>();
  }

  double at(std::size_t flat_index) const;
  double item() const;
  std::vector<double> to_vector() const;
  /// Overwrite from doubles (rounded to storage precision).
  void assign(const std::vector<double>& values);

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return impl().grad.has_value(); }
  /// Gradient as an untracked tensor of the same shape; throws if absent.
  Tensor grad() const;
  const Buffer& grad_buffer() const;
  void zero_grad();

  /// Reverse-mode sweep from this scalar tensor.
  void backward();

  /// Untracked tensor sharing no tape with this one (data copied).
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  Tensor to(DType dtype) const;

  TensorImpl& impl() const;
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  /// Build a tensor from an already-filled buffer.
  static Tensor make(Shape shape, Buffer data);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Whether ops currently record tape entries (thread-local).
bool grad_enabled();

/// RAII switch disabling tape recording, for inference and evaluation.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// While alive, piecewise-linear ops on this thread append the piece each
/// element lands in (ReLU and abs signs, bilinear cells). Two evaluations with
/// equal logs lie on one linear piece of every such op.
class PieceLog {
 public:
  PieceLog();
  ~PieceLog();
  PieceLog(const PieceLog&) = delete;
  PieceLog& operator=(const PieceLog&) = delete;
  const std::vector<std::int64_t>& pieces() const { return pieces_; }

 private:
  PieceLog* previous_;
  std::vector<std::int64_t> pieces_;
  friend std::vector<std::int64_t>* active_piece_log();
};

/// The innermost live PieceLog's storage, or null.
std::vector<std::int64_t>* active_piece_log();

/// Create the result tensor of an op. Attaches `backward` to the tape when
/// grad mode is on and any input requires grad.
Tensor make_result(Shape shape, Buffer data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl& self)> backward);

}  // namespace odisr
