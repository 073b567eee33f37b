#ifndef MLT_TAPE_HPP_
#define MLT_TAPE_HPP_

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "mlt/errors.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

// Ordered record of executed primitives. Operations append themselves after
// their inputs exist, so reverse iteration is a valid reverse topological
// order.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tensor<T>& output)>;

  struct Node {
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  void record(std::vector<Tensor<T>> inputs, Tensor<T> output,
              BackwardFn backward) {
    nodes_.push_back({std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  // Reverse-mode sweep from a scalar loss recorded on this tape. Gradients of
  // leaf tensors accumulate; intermediate gradients are reset first so the
  // sweep can be repeated.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward expects a scalar loss, got shape " +
                          (loss.defined() ? shape_string(loss.shape())
                                          : std::string("<undefined>")));
    }
    std::size_t end = nodes_.size();
    while (end > 0 && !nodes_[end - 1].output.same_storage(loss)) {
      --end;
    }
    if (end == 0) {
      throw ContractError("backward: loss was not produced on this tape");
    }
    for (std::size_t i = 0; i < end; ++i) {
      nodes_[i].output.zero_grad();
    }
    Tensor<T> root = loss;
    root.grad()[0] = T{1};
    for (std::size_t i = end; i-- > 0;) {
      nodes_[i].backward(nodes_[i].output);
    }
  }

 private:
  std::vector<Node> nodes_;
};

}  // namespace mlt

#endif  // MLT_TAPE_HPP_
