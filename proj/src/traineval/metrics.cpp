#include "hmix/traineval/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <memory>

#include "hmix/errors.hpp"

namespace hmix {

namespace {

double sign(double v) {
  return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
}

}  // namespace

std::vector<int> argmax_columns(const Eigen::MatrixXd& m) {
  std::vector<int> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < m.rows(); ++k) {
      if (m(k, j) > m(best, j)) {
        best = k;
      }
    }
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

SoftCeResult soft_ce(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXd& targets) {
  if (probabilities.rows() != targets.rows() || probabilities.cols() != targets.cols()) {
    throw ShapeError("prediction and target matrices differ in shape");
  }
  if (targets.cols() == 0) {
    throw ValidationError("eval", "evaluation set is empty");
  }
  SoftCeResult r;
  double total = 0.0;
  for (Eigen::Index j = 0; j < targets.cols(); ++j) {
    double ce = 0.0;
    for (Eigen::Index k = 0; k < targets.rows(); ++k) {
      double t = targets(k, j);
      if (t == 0.0) {
        continue;
      }
      double p = probabilities(k, j);
      if (p < kProbabilityFloor) {
        p = kProbabilityFloor;
        ++r.clamped;
      }
      ce -= t * std::log(p);
    }
    total += ce;
  }
  r.value = total / static_cast<double>(targets.cols());
  return r;
}

SoftCeResult soft_ce(const Mlp& model, const Dataset& eval) {
  return soft_ce(model.probabilities(eval.inputs), eval.targets);
}

Eigen::MatrixXd fgsm_batch(const Mlp& model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                           double epsilon) {
  if (!(epsilon >= 0.0)) {
    throw ValidationError("epsilon", "must be nonnegative");
  }
  if (epsilon == 0.0) {
    return inputs;
  }
  Eigen::MatrixXd grad;
  model.loss_and_gradients(inputs, targets, nullptr, &grad);
  // The batch-mean loss scales each column's gradient by 1/N, which leaves its sign unchanged.
  Eigen::MatrixXd adv = inputs + epsilon * grad.unaryExpr(&sign);
  return adv.cwiseMax(0.0).cwiseMin(1.0);
}

ImageTensor fgsm_attack(const Mlp& model, const ImageTensor& x, const LabelDistribution& target, double epsilon) {
  auto px = x.data();
  auto pr = target.probs();
  Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(px.data(), static_cast<Eigen::Index>(px.size()));
  Eigen::MatrixXd t = Eigen::Map<const Eigen::VectorXd>(pr.data(), static_cast<Eigen::Index>(pr.size()));
  Eigen::MatrixXd adv = fgsm_batch(model, in, t, epsilon);
  return ImageTensor(x.height(), x.width(), x.channels(), std::vector<double>(adv.data(), adv.data() + adv.size()));
}

double fgsm_error_percent(const Mlp& model, const Dataset& eval, double epsilon, std::size_t chunk) {
  if (eval.size() == 0) {
    throw ValidationError("eval", "evaluation set is empty");
  }
  std::vector<int> reference = argmax_columns(eval.targets);
  std::size_t wrong = 0;
  for (std::size_t begin = 0; begin < eval.size(); begin += chunk) {
    auto n = static_cast<Eigen::Index>(std::min(chunk, eval.size() - begin));
    auto b = static_cast<Eigen::Index>(begin);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(eval.num_classes, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      onehot(reference[static_cast<std::size_t>(b + j)], j) = 1.0;
    }
    Eigen::MatrixXd adv = fgsm_batch(model, eval.inputs.middleCols(b, n), onehot, epsilon);
    if (adv.minCoeff() < 0.0 || adv.maxCoeff() > 1.0) {
      throw Error("adversarial batch left the [0,1] pixel range");
    }
    auto pred = argmax_columns(model.logits(adv));
    for (Eigen::Index j = 0; j < n; ++j) {
      if (pred[static_cast<std::size_t>(j)] != reference[static_cast<std::size_t>(b + j)]) {
        ++wrong;
      }
    }
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(eval.size());
}

double calibration_error(std::span<const double> confidences, std::span<const bool> correct, int bins,
                         CalibrationFlavor flavor) {
  if (bins <= 0) {
    throw ValidationError("bins", "must be positive");
  }
  if (confidences.size() != correct.size()) {
    throw ShapeError("confidence and correctness lengths differ");
  }
  if (confidences.empty()) {
    throw ValidationError("eval", "evaluation set is empty");
  }
  std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> hits(static_cast<std::size_t>(bins), 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) {
      throw ValidationError("confidence", "must lie in [0,1]");
    }
    auto b = std::min(static_cast<std::size_t>(c * bins), static_cast<std::size_t>(bins - 1));
    ++count[b];
    conf_sum[b] += c;
    hits[b] += correct[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(confidences.size());
  double total = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) {
      continue;
    }
    double nb = static_cast<double>(count[b]);
    double gap = hits[b] / nb - conf_sum[b] / nb;
    total += nb / n * (flavor == CalibrationFlavor::kEce ? std::abs(gap) : gap * gap);
  }
  return flavor == CalibrationFlavor::kEce ? total : std::sqrt(total);
}

double calibration_error(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXd& targets, int bins,
                         CalibrationFlavor flavor) {
  if (probabilities.rows() != targets.rows() || probabilities.cols() != targets.cols()) {
    throw ShapeError("prediction and target matrices differ in shape");
  }
  auto pred = argmax_columns(probabilities);
  auto ref = argmax_columns(targets);
  std::vector<double> conf(pred.size());
  std::unique_ptr<bool[]> correct(new bool[pred.size()]);
  for (std::size_t j = 0; j < pred.size(); ++j) {
    conf[j] = probabilities(pred[j], static_cast<Eigen::Index>(j));
    correct[j] = pred[j] == ref[j];
  }
  return calibration_error(conf, std::span<const bool>(correct.get(), pred.size()), bins, flavor);
}

double accuracy(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXd& targets) {
  auto pred = argmax_columns(probabilities);
  auto ref = argmax_columns(targets);
  std::size_t hit = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    hit += pred[j] == ref[j] ? 1 : 0;
  }
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

SeedSummary summarize_seeds(std::span<const double> values, double confidence) {
  SeedSummary s;
  s.n = values.size();
  if (values.empty()) {
    return s;
  }
  for (double v : values) {
    s.mean += v;
  }
  s.mean /= static_cast<double>(s.n);
  if (s.n < 2) {
    return s;
  }
  double ss = 0.0;
  for (double v : values) {
    ss += (v - s.mean) * (v - s.mean);
  }
  s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  boost::math::students_t dist(static_cast<double>(s.n - 1));
  double t = boost::math::quantile(boost::math::complement(dist, (1.0 - confidence) / 2.0));
  s.ci_half_width = t * s.sd / std::sqrt(static_cast<double>(s.n));
  return s;
}

ChiSquareResult chi_square_uniform(std::span<const double> values, int bins) {
  if (bins < 2 || values.empty()) {
    throw ValidationError("bins", "need at least two bins and one value");
  }
  std::vector<double> observed(static_cast<std::size_t>(bins), 0.0);
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError("values", "must lie in [0,1]");
    }
    observed[std::min(static_cast<std::size_t>(v * bins), static_cast<std::size_t>(bins - 1))] += 1.0;
  }
  double expected = static_cast<double>(values.size()) / bins;
  ChiSquareResult r;
  for (double o : observed) {
    r.statistic += (o - expected) * (o - expected) / expected;
  }
  r.degrees_of_freedom = bins - 1;
  boost::math::chi_squared dist(r.degrees_of_freedom);
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

}  // namespace hmix
