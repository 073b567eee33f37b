#ifndef MLT_TRAINING_HPP_
#define MLT_TRAINING_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mlt/data.hpp"
#include "mlt/errors.hpp"
#include "mlt/model.hpp"
#include "mlt/optimizer.hpp"
#include "mlt/tape.hpp"

namespace mlt {

// Raised when an optimization step produces a non-finite loss. Parameters
// are left as they were before the step.
class NonFiniteLoss : public NumericError {
 public:
  using NumericError::NumericError;
};

// Accumulates gradients of the mean loss over `micro_batches` batches drawn
// from `data`. Returns the mean of the micro-batch losses.
template <typename T>
double accumulate_gradients(const ModelView<T>& model, BatchStream& data,
                            std::size_t micro_batches) {
  double loss_total = 0.0;
  for (std::size_t m = 0; m < micro_batches; ++m) {
    const Batch batch = data.next();
    Tape<T> tape;
    const Tensor<T> loss = model_loss(tape, model, batch.inputs, batch.targets,
                                      batch.batch_size);
    loss_total += static_cast<double>(loss.item());
    tape.backward(loss);
  }
  return loss_total / static_cast<double>(micro_batches);
}

// One SGD step on `model` over `micro_batches` micro-batches.
template <typename T>
double train_step(const ModelView<T>& model, BatchStream& data,
                  std::size_t micro_batches, double lr) {
  auto params = model.parameters();
  const double loss = accumulate_gradients(model, data, micro_batches);
  if (!std::isfinite(loss)) {
    for (auto& p : params) {
      p.tensor.zero_grad();
    }
    throw NonFiniteLoss("non-finite training loss");
  }
  average_gradients<T>(params, micro_batches);
  sgd_step<T>(params, lr);
  return loss;
}

}  // namespace mlt

#endif  // MLT_TRAINING_HPP_
