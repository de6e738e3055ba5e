#include "hmix/traineval/model.hpp"

#include <cmath>
#include <random>

#include "hmix/errors.hpp"

namespace hmix {

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out = log_softmax_columns(logits);
  return out.array().exp().matrix();
}

Eigen::MatrixXd log_softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    double m = logits.col(j).maxCoeff();
    double lse = m + std::log((logits.col(j).array() - m).exp().sum());
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

Mlp::Mlp(MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  if (spec_.input_dim <= 0 || spec_.num_classes <= 1) {
    throw ValidationError("model", "input dimension and class count must be positive");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  int in = spec_.input_dim;
  std::vector<int> widths = spec_.hidden;
  widths.push_back(spec_.num_classes);
  for (int out : widths) {
    if (out <= 0) {
      throw ValidationError("hidden", "layer widths must be positive");
    }
    DenseLayer layer;
    layer.weights.resize(out, in);
    double scale = std::sqrt(2.0 / in);
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        layer.weights(r, c) = normal(rng) * scale;
      }
    }
    layer.bias = Eigen::VectorXd::Zero(out);
    layers_.push_back(std::move(layer));
    in = out;
  }
}

Eigen::MatrixXd Mlp::logits(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != spec_.input_dim) {
    throw ShapeError("model expects " + std::to_string(spec_.input_dim) + " inputs, got " +
                     std::to_string(inputs.rows()));
  }
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weights * h;
    z.colwise() += layers_[l].bias;
    if (l + 1 < layers_.size()) {
      h = z.cwiseMax(0.0);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

Eigen::MatrixXd Mlp::probabilities(const Eigen::MatrixXd& inputs) const {
  return softmax_columns(logits(inputs));
}

double Mlp::loss(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) const {
  Eigen::MatrixXd logp = log_softmax_columns(logits(inputs));
  return -(targets.array() * logp.array()).sum() / static_cast<double>(inputs.cols());
}

double Mlp::loss_and_gradients(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                               std::vector<DenseLayer>* parameter_grads, Eigen::MatrixXd* input_grads) const {
  if (inputs.rows() != spec_.input_dim || targets.rows() != spec_.num_classes || targets.cols() != inputs.cols()) {
    throw ShapeError("batch shape does not match the model");
  }
  const double batch = static_cast<double>(inputs.cols());

  // Forward, keeping every layer's input activation.
  std::vector<Eigen::MatrixXd> activations;
  activations.reserve(layers_.size());
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    activations.push_back(h);
    Eigen::MatrixXd z = layers_[l].weights * h;
    z.colwise() += layers_[l].bias;
    h = l + 1 < layers_.size() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  Eigen::MatrixXd logp = log_softmax_columns(h);
  double loss = -(targets.array() * logp.array()).sum() / batch;

  // dL/dz for softmax cross-entropy with targets that sum to one per column.
  Eigen::MatrixXd delta = (logp.array().exp().matrix() - targets) / batch;
  if (parameter_grads) {
    parameter_grads->resize(layers_.size());
  }
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& a = activations[l];
    if (parameter_grads) {
      (*parameter_grads)[l].weights = delta * a.transpose();
      (*parameter_grads)[l].bias = delta.rowwise().sum();
    }
    if (l == 0 && input_grads == nullptr) {
      break;
    }
    Eigen::MatrixXd back = layers_[l].weights.transpose() * delta;
    if (l > 0) {
      // ReLU mask: the activation feeding layer l is positive exactly where the unit was active.
      delta = (a.array() > 0.0).select(back, 0.0);
    } else {
      *input_grads = std::move(back);
    }
  }
  return loss;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) {
    n += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  }
  return n;
}

std::vector<double> Mlp::flat_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& layer : layers_) {
    out.insert(out.end(), layer.weights.data(), layer.weights.data() + layer.weights.size());
    out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
  }
  return out;
}

void Mlp::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw ShapeError("parameter vector has the wrong length");
  }
  std::size_t pos = 0;
  for (auto& layer : layers_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), layer.weights.size(), layer.weights.data());
    pos += static_cast<std::size_t>(layer.weights.size());
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), layer.bias.size(), layer.bias.data());
    pos += static_cast<std::size_t>(layer.bias.size());
  }
}

SgdMomentum::SgdMomentum(double learning_rate, double momentum, double weight_decay)
    : learning_rate_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
  if (!(learning_rate > 0.0)) {
    throw ValidationError("learning_rate", "must be positive");
  }
}

void SgdMomentum::step(Mlp& model, const std::vector<DenseLayer>& grads) {
  auto& layers = model.layers();
  if (velocity_.empty()) {
    for (const auto& layer : layers) {
      velocity_.push_back({Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()),
                           Eigen::VectorXd::Zero(layer.bias.size())});
    }
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    velocity_[l].weights = momentum_ * velocity_[l].weights + grads[l].weights + weight_decay_ * layers[l].weights;
    velocity_[l].bias = momentum_ * velocity_[l].bias + grads[l].bias;
    layers[l].weights -= learning_rate_ * velocity_[l].weights;
    layers[l].bias -= learning_rate_ * velocity_[l].bias;
  }
}

}  // namespace hmix
