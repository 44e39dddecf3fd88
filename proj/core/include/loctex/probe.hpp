#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace loctex {

/// Dense row-major feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows(rows), cols(cols), data(rows * cols, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  FeatureMatrix select_rows(std::span<const std::size_t> idx) const;
};

/// Area under the precision-recall curve with step-wise interpolation:
/// sum over distinct score thresholds of (recall gain) x precision. Tied
/// scores form a single threshold. Labels are 0/1. Throws
/// std::invalid_argument when there are no positives.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct SvmOptions {
  int max_iterations = 1000;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

/// Linear SVM, hinge loss with squared L2 regularizer (bias regularized as
/// an extra constant feature), solved by dual coordinate descent.
class LinearSvm {
 public:
  static LinearSvm fit(const FeatureMatrix& x, std::span<const int> labels, double cost, const SvmOptions& opts = {});

  double decision(std::span<const double> features) const;
  std::vector<double> decision(const FeatureMatrix& x) const;

  const std::vector<double>& weights() const noexcept { return weights_; }
  double bias() const noexcept { return bias_; }
  int iterations() const noexcept { return iterations_; }

 private:
  std::vector<double> weights_;
  double bias_ = 0.0;
  int iterations_ = 0;
};

/// Stratified fold ids in [0, folds): positives and negatives are shuffled
/// separately with `seed` and dealt round-robin.
std::vector<int> make_folds(std::span<const int> labels, int folds, std::uint64_t seed);

inline const std::vector<double> kDefaultProbeCosts{0.01, 0.1, 1.0, 10.0};

struct ProbeOptions {
  std::vector<double> costs = kDefaultProbeCosts;
  int folds = 3;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;  // optional; defaults to "class<k>"
  SvmOptions svm;
};

struct ClassProbe {
  std::string name;
  bool skipped = false;
  std::string skip_reason;
  double ap = 0.0;
  double best_cost = 0.0;
  std::vector<double> cv_scores;  // mean fold AP per cost
  std::vector<int> folds;
};

struct ProbeResult {
  std::vector<double> costs;
  int folds = 0;
  std::uint64_t seed = 0;
  std::vector<ClassProbe> classes;
  double mean_ap = 0.0;
  std::vector<std::string> warnings;

  /// Arithmetic mean of the APs of non-skipped classes.
  double recompute_mean_ap() const;
  std::string to_json() const;
};

/// Per-class SVM probe: for each class pick the cost with the best mean
/// k-fold AP on the training split, refit on the whole training split and
/// score the test split. `train_labels[k][i]` is the 0/1 label of sample i
/// for class k. Classes with a single label value, or too few examples of
/// either value to place two in every fold, are skipped with a warning.
ProbeResult linear_probe(const FeatureMatrix& train_x, const std::vector<std::vector<int>>& train_labels,
                         const FeatureMatrix& test_x, const std::vector<std::vector<int>>& test_labels,
                         const ProbeOptions& opts = {});

}  // namespace loctex
