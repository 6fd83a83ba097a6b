#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace csip {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;

/// Dense row-major tensor of 64-bit reals. Value type: copies share the
/// underlying data, grad and provenance buffers.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
  std::shared_ptr<Node> node;                 // set on op outputs while grad is enabled
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double value, bool requires_grad = false);
  static Tensor from_data(Shape s, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  std::size_t numel() const { return data ? data->size() : 0; }
  std::size_t ndim() const { return shape.size(); }
  bool defined() const { return static_cast<bool>(data); }

  double item() const;
  double at(std::size_t i) const { return (*data)[i]; }
  double at(std::size_t i, std::size_t j) const { return (*data)[i * shape[1] + j]; }

  /// Detached value copy: same data buffer, no grad, no provenance.
  Tensor detach() const;
  /// Deep copy of the raw values (fresh buffer, leaf).
  Tensor clone_data(bool requires_grad = false) const;

  void set_requires_grad(bool rg);
  void zero_grad() const;

  /// Reverse-mode sweep from a one-element output. Populates grad on every
  /// reachable leaf that requires grad. One sweep per recorded graph.
  void backward() const;
};

/// One recorded primitive application. parents are held by value (cheap,
/// shared buffers); backward reads out_grad and accumulates into the
/// parents' grad buffers.
struct Node {
  const char* op = "";
  std::vector<Tensor> parents;
  std::shared_ptr<std::vector<double>> out_grad;
  std::function<void(Node&)> backward;
};

/// Scoped switch that stops ops from recording nodes (inference / oracles).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

[[noreturn]] void tensor_error(const std::string& msg);

}  // namespace csip
