#include "csip/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace csip {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void tensor_error(const std::string& msg) { throw std::runtime_error(msg); }

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  Tensor t;
  const std::size_t n = shape_numel(s);
  t.shape = std::move(s);
  t.data = std::make_shared<std::vector<double>>(n, 0.0);
  t.requires_grad = requires_grad && g_grad_enabled;
  if (t.requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
  return t;
}

Tensor Tensor::full(Shape s, double value, bool requires_grad) {
  Tensor t = zeros(std::move(s), requires_grad);
  for (double& v : *t.data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape s, std::vector<double> values, bool requires_grad) {
  if (shape_numel(s) != values.size()) {
    tensor_error("from_data: shape " + shape_str(s) + " holds " +
                 std::to_string(shape_numel(s)) + " elements, got " +
                 std::to_string(values.size()));
  }
  Tensor t;
  t.shape = std::move(s);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad && g_grad_enabled;
  if (t.requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) tensor_error("item: expected one element, shape is " + shape_str(shape));
  return (*data)[0];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  return t;
}

Tensor Tensor::clone_data(bool requires_grad) const {
  return from_data(shape, *data, requires_grad);
}

void Tensor::set_requires_grad(bool rg) {
  requires_grad = rg;
  if (rg && !grad) grad = std::make_shared<std::vector<double>>(numel(), 0.0);
  if (!rg) grad.reset();
}

void Tensor::zero_grad() const {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) {
    tensor_error("backward: output must be a single element, shape is " + shape_str(shape));
  }
  if (!node) {
    tensor_error("backward: output carries no computation record");
  }
  // Topological order over recorded nodes (iterative DFS, each node once).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node.get(), 0);
  seen.insert(node.get());
  while (!stack.empty()) {
    Node* n = stack.back().first;
    std::size_t idx = stack.back().second;
    if (idx < n->parents.size()) {
      stack.back().second = idx + 1;
      Node* p = n->parents[idx].node.get();
      if (p && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  (*grad)[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace csip
