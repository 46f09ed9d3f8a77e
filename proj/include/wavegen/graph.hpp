#ifndef WAVEGEN_GRAPH_HPP
#define WAVEGEN_GRAPH_HPP

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>

#include "wavegen/tensor.hpp"

namespace wavegen {

// Reverse-mode tape. Backward functions emit new graph nodes, so gradients
// are themselves differentiable (needed for the gradient penalty, which
// differentiates the norm of an input gradient with respect to parameters).

template <typename T>
struct Node;

template <typename T>
using NodeRef = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<NodeRef<T>> parents;
  // Given this node and the incoming gradient, return one gradient node per
  // parent (nullptr allowed). `need[i]` is false when parent i's gradient is
  // not required; implementations may skip computing it.
  std::function<std::vector<NodeRef<T>>(const NodeRef<T>& self, const NodeRef<T>& gy,
                                        const std::vector<char>& need)>
      backward;
};

template <typename T>
NodeRef<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = false;
  return n;
}

template <typename T>
NodeRef<T> leaf(Tensor<T> v, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T, typename Backward>
NodeRef<T> make_node(Tensor<T> value, std::vector<NodeRef<T>> parents, Backward&& bw) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward = std::forward<Backward>(bw);
  return n;
}

namespace detail {

template <typename T>
void topo_visit(const NodeRef<T>& n, std::unordered_set<const Node<T>*>& seen,
                std::vector<NodeRef<T>>& order) {
  // Iterative post-order DFS; graphs can be deep (16k+ nodes for long convs).
  struct Frame {
    NodeRef<T> node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (seen.count(n.get())) return;
  seen.insert(n.get());
  stack.push_back({n, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      NodeRef<T> p = f.node->parents[f.next_parent++];
      if (p && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

template <typename T>
NodeRef<T> add(const NodeRef<T>& a, const NodeRef<T>& b);  // defined in ops.hpp

/// Gradient map from a grad() call: node pointer -> gradient node.
template <typename T>
struct GradMap {
  std::unordered_map<const Node<T>*, NodeRef<T>> grads;

  NodeRef<T> at(const NodeRef<T>& n) const {
    auto it = grads.find(n.get());
    if (it == grads.end()) return nullptr;
    return it->second;
  }
};

/// Reverse-mode gradients of scalar `loss` with respect to `wrt`.
/// Unreachable targets get zero gradients. The returned gradient nodes are
/// ordinary graph nodes and may be differentiated again.
template <typename T>
GradMap<T> grad(const NodeRef<T>& loss, const std::vector<NodeRef<T>>& wrt) {
  if (loss->value.size() != 1) throw std::invalid_argument("grad: loss must be a scalar");

  std::unordered_set<const Node<T>*> seen;
  std::vector<NodeRef<T>> order;  // parents before children
  detail::topo_visit(loss, seen, order);

  std::unordered_set<const Node<T>*> targets;
  for (const auto& w : wrt) targets.insert(w.get());

  // needed[n]: some target is an ancestor of n (gradient must flow through n).
  std::unordered_map<const Node<T>*, char> needed;
  for (const auto& n : order) {
    char f = targets.count(n.get()) ? 1 : 0;
    if (!f)
      for (const auto& p : n->parents)
        if (p && needed[p.get()]) {
          f = 1;
          break;
        }
    needed[n.get()] = f;
  }

  GradMap<T> out;
  if (!needed[loss.get()]) {
    for (const auto& w : wrt) out.grads[w.get()] = constant(Tensor<T>::zeros(w->value.shape));
    return out;
  }

  std::unordered_map<const Node<T>*, NodeRef<T>> acc;
  acc[loss.get()] = constant(Tensor<T>::full({1}, T(1)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodeRef<T>& n = *it;
    auto git = acc.find(n.get());
    if (git == acc.end()) continue;
    if (!n->backward || n->parents.empty()) continue;
    std::vector<char> need(n->parents.size(), 0);
    bool any = false;
    for (size_t i = 0; i < n->parents.size(); ++i) {
      const auto& p = n->parents[i];
      if (p && p->requires_grad && needed[p.get()]) {
        need[i] = 1;
        any = true;
      }
    }
    if (!any) continue;
    std::vector<NodeRef<T>> pg = n->backward(n, git->second, need);
    if (pg.size() != n->parents.size())
      throw std::logic_error("backward returned wrong number of parent gradients");
    for (size_t i = 0; i < pg.size(); ++i) {
      if (!need[i] || !pg[i]) continue;
      const Node<T>* key = n->parents[i].get();
      auto ait = acc.find(key);
      if (ait == acc.end())
        acc[key] = pg[i];
      else
        ait->second = add<T>(ait->second, pg[i]);
    }
  }

  for (const auto& w : wrt) {
    auto ait = acc.find(w.get());
    out.grads[w.get()] =
        (ait != acc.end()) ? ait->second : constant(Tensor<T>::zeros(w->value.shape));
  }
  return out;
}

}  // namespace wavegen

#endif
