#pragma once

#include <Eigen/Dense>
#include <Eigen/Jacobi>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "contraspeech/errors.hpp"

namespace contraspeech {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct PcaModel {
  DenseVector<Scalar> mean;
  DenseMatrix<Scalar> components;  // rows are principal directions
  DenseVector<Scalar> explained_variance;
  DenseVector<Scalar> explained_variance_ratio;
  std::size_t samples = 0;
  bool degenerate = false;  // total variance was zero; ratios set to 1/D

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

template <typename Scalar>
struct EigenSystem {
  DenseVector<Scalar> values;   // descending
  DenseMatrix<Scalar> vectors;  // columns, matching `values`
  int sweeps = 0;
};

/// Cyclic Jacobi for a symmetric matrix. Sweeps until the off-diagonal
/// Frobenius norm falls below tolerance * |trace| (or exactly zero).
template <typename Scalar>
EigenSystem<Scalar> symmetric_eigen(const DenseMatrix<Scalar>& input, double tolerance = 1e-10,
                                    int max_sweeps = 100) {
  require(input.rows() == input.cols(), ErrorKind::Dimension, "eigensolver needs a square matrix");
  const Eigen::Index n = input.rows();
  DenseMatrix<Scalar> a = input;
  DenseMatrix<Scalar> v = DenseMatrix<Scalar>::Identity(n, n);
  const double limit = tolerance * std::abs(static_cast<double>(a.trace()));
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) s += static_cast<double>(a(i, j)) * static_cast<double>(a(i, j));
    return std::sqrt(s);
  };
  EigenSystem<Scalar> out;
  while (out.sweeps < max_sweeps) {
    const double off = off_norm();
    if (off == 0.0 || off < limit) break;
    for (Eigen::Index p = 0; p < n - 1; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == Scalar(0)) continue;
        Eigen::JacobiRotation<Scalar> rot;
        rot.makeJacobi(a, p, q);
        a.applyOnTheLeft(p, q, rot.adjoint());
        a.applyOnTheRight(p, q, rot);
        v.applyOnTheRight(p, q, rot);
      }
    ++out.sweeps;
  }
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) { return a(x, x) > a(y, y); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[k], order[k]);
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

/// Two-pass covariance over row blocks: feed every block to add_to_mean,
/// then every block again to add_to_covariance. Only D x D state is kept.
template <typename Scalar>
class TwoPassCovariance {
 public:
  explicit TwoPassCovariance(std::size_t dim)
      : sum_(DenseVector<Scalar>::Zero(dim)), scatter_(DenseMatrix<Scalar>::Zero(dim, dim)) {}

  template <typename Derived>
  void add_to_mean(const Eigen::MatrixBase<Derived>& rows) {
    require(!second_pass_, ErrorKind::Contract, "mean pass already finished");
    check_width(rows.cols());
    sum_ += rows.template cast<Scalar>().colwise().sum().transpose();
    count_ += static_cast<std::size_t>(rows.rows());
  }

  template <typename Derived>
  void add_to_covariance(const Eigen::MatrixBase<Derived>& rows) {
    if (!second_pass_) {
      require(count_ > 0, ErrorKind::InsufficientData, "no rows seen in the mean pass");
      mean_ = sum_ / static_cast<Scalar>(count_);
      second_pass_ = true;
    }
    check_width(rows.cols());
    const DenseMatrix<Scalar> centered = rows.template cast<Scalar>().rowwise() - mean_.transpose();
    scatter_.noalias() += centered.transpose() * centered;
    second_count_ += static_cast<std::size_t>(rows.rows());
  }

  std::size_t count() const { return count_; }
  const DenseVector<Scalar>& mean() const { return mean_; }

  /// Sample covariance with denominator N - 1.
  DenseMatrix<Scalar> covariance() const {
    require(second_pass_, ErrorKind::Contract, "covariance pass not run");
    require(second_count_ == count_, ErrorKind::Contract, "the two passes saw different row counts");
    require(count_ > 1, ErrorKind::InsufficientData, "covariance needs at least 2 rows, got " + std::to_string(count_));
    return scatter_ / static_cast<Scalar>(count_ - 1);
  }

 private:
  void check_width(Eigen::Index cols) const {
    require(cols == sum_.size(), ErrorKind::Dimension,
            "feature width " + std::to_string(cols) + " differs from " + std::to_string(sum_.size()));
  }

  DenseVector<Scalar> sum_, mean_;
  DenseMatrix<Scalar> scatter_;
  std::size_t count_ = 0, second_count_ = 0;
  bool second_pass_ = false;
};

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& x) {
  require(x.allFinite(), ErrorKind::Contract, "features contain NaN or Inf");
}

/// PCA from a mean and covariance. Each component's largest-magnitude
/// loading is made positive.
template <typename Scalar>
PcaModel<Scalar> pca_from_covariance(const DenseVector<Scalar>& mean, const DenseMatrix<Scalar>& covariance,
                                     std::size_t samples) {
  const Eigen::Index d = covariance.rows();
  const EigenSystem<Scalar> eig = symmetric_eigen(covariance);
  PcaModel<Scalar> model;
  model.mean = mean;
  model.samples = samples;
  model.components = eig.vectors.transpose();
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::Index arg;
    model.components.row(k).cwiseAbs().maxCoeff(&arg);
    if (model.components(k, arg) < Scalar(0)) model.components.row(k) *= Scalar(-1);
  }
  model.explained_variance = eig.values.cwiseMax(Scalar(0));
  const Scalar total = model.explained_variance.sum();
  if (total > Scalar(0)) {
    model.explained_variance_ratio = model.explained_variance / total;
  } else {
    model.degenerate = true;
    model.explained_variance_ratio = DenseVector<Scalar>::Constant(d, Scalar(1) / static_cast<Scalar>(d));
  }
  return model;
}

/// Sample covariance (N - 1) of mean-centered rows, then eigendecomposition.
template <typename Scalar = double, typename Derived>
PcaModel<Scalar> pca_fit(const Eigen::MatrixBase<Derived>& features) {
  require(features.rows() > 1, ErrorKind::InsufficientData,
          "PCA needs at least 2 rows, got " + std::to_string(features.rows()));
  require_finite(features);
  TwoPassCovariance<Scalar> acc(static_cast<std::size_t>(features.cols()));
  acc.add_to_mean(features);
  acc.add_to_covariance(features);
  return pca_from_covariance<Scalar>(acc.mean(), acc.covariance(), acc.count());
}

/// Identity components and per-dimension variances: subtracting the mean
/// is all its transform does.
template <typename Scalar = double, typename Derived>
PcaModel<Scalar> mean_only_model(const Eigen::MatrixBase<Derived>& features) {
  require(features.rows() >= 1, ErrorKind::InsufficientData, "no rows");
  const DenseMatrix<Scalar> x = features.template cast<Scalar>();
  PcaModel<Scalar> model;
  model.samples = static_cast<std::size_t>(x.rows());
  model.mean = x.colwise().mean().transpose();
  model.components = DenseMatrix<Scalar>::Identity(x.cols(), x.cols());
  const DenseMatrix<Scalar> centered = x.rowwise() - model.mean.transpose();
  const Scalar denom = static_cast<Scalar>(std::max<Eigen::Index>(1, x.rows() - 1));
  model.explained_variance = centered.colwise().squaredNorm().transpose() / denom;
  const Scalar total = model.explained_variance.sum();
  model.degenerate = !(total > Scalar(0));
  model.explained_variance_ratio =
      model.degenerate ? DenseVector<Scalar>::Constant(x.cols(), Scalar(1) / static_cast<Scalar>(x.cols()))
                       : DenseVector<Scalar>(model.explained_variance / total);
  return model;
}

/// The same ablation from streamed statistics.
template <typename Scalar>
PcaModel<Scalar> mean_only_from_covariance(const DenseVector<Scalar>& mean, const DenseMatrix<Scalar>& covariance,
                                           std::size_t samples) {
  PcaModel<Scalar> model;
  model.samples = samples;
  model.mean = mean;
  model.components = DenseMatrix<Scalar>::Identity(mean.size(), mean.size());
  model.explained_variance = covariance.diagonal().cwiseMax(Scalar(0));
  const Scalar total = model.explained_variance.sum();
  model.degenerate = !(total > Scalar(0));
  model.explained_variance_ratio =
      model.degenerate ? DenseVector<Scalar>::Constant(mean.size(), Scalar(1) / static_cast<Scalar>(mean.size()))
                       : DenseVector<Scalar>(model.explained_variance / total);
  return model;
}

/// (x - mean) components^T, optionally divided by sqrt(variance + eps).
/// Output keeps all D columns.
template <typename Scalar, typename Derived>
DenseMatrix<Scalar> pca_transform(const Eigen::MatrixBase<Derived>& features, const PcaModel<Scalar>& model,
                                  bool whiten = false, Scalar epsilon = Scalar(1e-8)) {
  require(static_cast<std::size_t>(features.cols()) == model.dim(), ErrorKind::Dimension,
          "feature width " + std::to_string(features.cols()) + " does not match PCA model width " +
              std::to_string(model.dim()));
  DenseMatrix<Scalar> out =
      (features.template cast<Scalar>().rowwise() - model.mean.transpose()) * model.components.transpose();
  if (whiten) out.array().rowwise() /= (model.explained_variance.array() + epsilon).sqrt().transpose();
  return out;
}

template <typename Scalar, typename Derived>
DenseMatrix<Scalar> pca_inverse_transform(const Eigen::MatrixBase<Derived>& transformed, const PcaModel<Scalar>& model,
                                          bool whiten = false, Scalar epsilon = Scalar(1e-8)) {
  require(static_cast<std::size_t>(transformed.cols()) == model.dim(), ErrorKind::Dimension,
          "transformed width does not match PCA model width");
  DenseMatrix<Scalar> y = transformed.template cast<Scalar>();
  if (whiten) y.array().rowwise() *= (model.explained_variance.array() + epsilon).sqrt().transpose();
  return (y * model.components).rowwise() + model.mean.transpose();
}

/// Subtracts per-column means; no rotation or scaling.
template <typename Derived>
auto mean_normalize(const Eigen::MatrixBase<Derived>& features) {
  using Scalar = typename Derived::Scalar;
  const DenseMatrix<Scalar> x = features;
  if (x.rows() == 0) return x;
  const Eigen::Matrix<double, 1, Eigen::Dynamic> mean = x.template cast<double>().colwise().mean();
  return DenseMatrix<Scalar>((x.template cast<double>().rowwise() - mean).template cast<Scalar>());
}

/// Smallest m whose cumulative ratio reaches `threshold`.
template <typename Scalar>
std::size_t linear_dimensionality(const DenseVector<Scalar>& ratios, double threshold) {
  require(threshold > 0.0 && threshold <= 1.0, ErrorKind::Config, "threshold must lie in (0, 1]");
  double cumulative = 0.0;
  for (Eigen::Index m = 0; m < ratios.size(); ++m) {
    cumulative += static_cast<double>(ratios(m));
    // round-off in the ratio sum must not push a threshold of 1 past D
    if (cumulative >= threshold - 1e-12) return static_cast<std::size_t>(m + 1);
  }
  return static_cast<std::size_t>(ratios.size());
}

template <typename Scalar>
std::size_t linear_dimensionality(const PcaModel<Scalar>& model, double threshold) {
  return linear_dimensionality(model.explained_variance_ratio, threshold);
}

/// (m, cumulative ratio) for m = 1..D.
template <typename Scalar>
std::vector<std::pair<std::size_t, double>> explained_variance_curve(const DenseVector<Scalar>& ratios) {
  std::vector<std::pair<std::size_t, double>> curve;
  double cumulative = 0.0;
  for (Eigen::Index m = 0; m < ratios.size(); ++m) {
    cumulative += static_cast<double>(ratios(m));
    curve.emplace_back(static_cast<std::size_t>(m + 1), cumulative);
  }
  return curve;
}

template <typename Scalar>
std::vector<std::pair<std::size_t, double>> explained_variance_curve(const PcaModel<Scalar>& model) {
  return explained_variance_curve(model.explained_variance_ratio);
}

}  // namespace contraspeech
