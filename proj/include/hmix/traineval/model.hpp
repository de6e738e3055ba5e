#pragma once

// Small fully connected classifier with hand-written backpropagation. Inputs are column vectors
// (one example per column); outputs are softmax class probabilities.

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "hmix/mixcore.hpp"

namespace hmix {

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;  // ReLU layers; empty gives a linear softmax model
  int num_classes = 10;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;
};

class Mlp {
 public:
  // He-normal weights, zero biases.
  Mlp(MlpSpec spec, Rng& rng);

  const MlpSpec& spec() const noexcept { return spec_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  Eigen::MatrixXd logits(const Eigen::MatrixXd& inputs) const;
  Eigen::MatrixXd probabilities(const Eigen::MatrixXd& inputs) const;

  // Mean over columns of -sum_k t_k log softmax(z)_k. Fills gradients of that mean with respect to the
  // parameters and, when requested, the inputs.
  double loss_and_gradients(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                            std::vector<DenseLayer>* parameter_grads, Eigen::MatrixXd* input_grads = nullptr) const;

  double loss(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) const;

  std::size_t parameter_count() const;
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> values);

 private:
  MlpSpec spec_;
  std::vector<DenseLayer> layers_;
};

// Column-wise numerically stable softmax / log-softmax.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits);
Eigen::MatrixXd log_softmax_columns(const Eigen::MatrixXd& logits);

// SGD with classical momentum and L2 weight decay on weights (not biases).
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum, double weight_decay);
  void step(Mlp& model, const std::vector<DenseLayer>& grads);
  void set_learning_rate(double learning_rate) { learning_rate_ = learning_rate; }
  double learning_rate() const noexcept { return learning_rate_; }

 private:
  double learning_rate_;
  double momentum_;
  double weight_decay_;
  std::vector<DenseLayer> velocity_;
};

}  // namespace hmix
