#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fattack/error.hpp"
#include "fattack/tensor.hpp"

namespace fattack::gradtape {

class Tape;

/// Handle to a node recorded on a Tape. Only meaningful together with the
/// tape that produced it.
struct Var {
  std::uint32_t id = 0;
};

/// Sorted, duplicate-free list of layout units that may hold nonzero
/// gradient. The unit depends on the tensor layout: rows for [A x C]
/// tensors, spatial positions (y * W + x, all channels) for [C x H x W].
using Support = std::vector<std::uint32_t>;

/// Records primitive operations in execution order and replays them in
/// reverse. A tape is used by one thread and supports exactly one backward
/// pass; record a fresh tape for every forward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value) { return leaf(std::make_shared<const Tensor>(std::move(value)), false); }
  Var constant(std::shared_ptr<const Tensor> value) { return leaf(std::move(value), false); }
  Var variable(Tensor value) { return leaf(std::make_shared<const Tensor>(std::move(value)), true); }
  Var variable(std::shared_ptr<const Tensor> value) { return leaf(std::move(value), true); }

  const Tensor& value(Var v) const { return *node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Appends an op node. The node requires grad when any parent does; the
  /// backward closure is dropped otherwise.
  Var record(Tensor value, std::vector<std::uint32_t> parents, BackwardFn backward) {
    ensure_open();
    bool needs = false;
    for (auto p : parents) {
      if (p >= nodes_.size()) throw UsageError("parent node from another tape");
      needs = needs || nodes_[p].requires_grad;
    }
    Node n;
    n.value = std::make_shared<const Tensor>(std::move(value));
    n.parents = std::move(parents);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  /// Runs reverse accumulation from a scalar root and consumes the tape.
  void backward(Var root) {
    if (consumed_) throw UsageError("backward called twice on the same tape");
    const Node& r = node(root);
    if (r.value->size() != 1) {
      throw UsageError("backward root must be scalar, got shape " + shape_string(r.value->shape()));
    }
    consumed_ = true;
    if (!r.requires_grad) return;
    grad_dense(root.id)[0] += 1.0;
    for (std::uint32_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.has_grad && n.backward) n.backward(*this, i);
    }
  }

  /// Accumulated gradient of a node; zeros if nothing flowed into it.
  Tensor grad(Var v) const {
    const Node& n = node(v);
    if (n.has_grad) return n.grad;
    return Tensor(n.value->shape(), 0.0);
  }

  bool has_grad(Var v) const { return node(v).has_grad; }

  /// Support of a node's gradient, or nullopt when it is dense.
  const std::optional<Support>& grad_support(Var v) const { return node(v).support; }

  // ---- interface for op backward closures ----

  const std::vector<std::uint32_t>& parents(std::uint32_t id) const { return nodes_[id].parents; }
  const Tensor& value_of(std::uint32_t id) const { return *nodes_[id].value; }
  const Tensor& grad_of(std::uint32_t id) const { return nodes_[id].grad; }
  const std::optional<Support>& support_of(std::uint32_t id) const { return nodes_[id].support; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of `id` for a writer that may touch every element.
  Tensor& grad_dense(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) allocate(n);
    n.support.reset();
    return n.grad;
  }

  /// Gradient buffer of `id` for a writer that only touches `units`.
  Tensor& grad_sparse(std::uint32_t id, const Support& units) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      allocate(n);
      n.support = units;
    } else if (n.support) {
      Support merged;
      merged.reserve(n.support->size() + units.size());
      std::set_union(n.support->begin(), n.support->end(), units.begin(), units.end(),
                     std::back_inserter(merged));
      n.support = std::move(merged);
    }
    return n.grad;
  }

 private:
  struct Node {
    std::shared_ptr<const Tensor> value;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor grad;
    std::optional<Support> support;
  };

  Var leaf(std::shared_ptr<const Tensor> value, bool requires_grad) {
    ensure_open();
    if (!value) throw UsageError("null tensor on tape");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  static void allocate(Node& n) {
    n.grad = Tensor(n.value->shape(), 0.0);
    n.has_grad = true;
  }

  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
    return nodes_[v.id];
  }

  void ensure_open() const {
    if (consumed_) throw UsageError("tape already consumed by backward");
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace fattack::gradtape
