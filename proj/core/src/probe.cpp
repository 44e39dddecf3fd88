#include "loctex/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace loctex {

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> idx) const {
  FeatureMatrix out(idx.size(), cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("average_precision: size mismatch");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw std::invalid_argument("average_precision: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  std::size_t tp = 0, seen = 0, prev_tp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      tp += labels[order[i]] == 1 ? 1 : 0;
      ++seen;
      ++i;
    }
    if (tp > prev_tp) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += precision * static_cast<double>(tp - prev_tp);
      prev_tp = tp;
    }
  }
  return ap / static_cast<double>(positives);
}

LinearSvm LinearSvm::fit(const FeatureMatrix& x, std::span<const int> labels, double cost, const SvmOptions& opts) {
  if (x.rows != labels.size()) throw std::invalid_argument("LinearSvm::fit: label count mismatch");
  if (cost <= 0.0) throw std::invalid_argument("LinearSvm::fit: cost must be positive");
  const std::size_t n = x.rows, d = x.cols;

  LinearSvm svm;
  svm.weights_.assign(d, 0.0);
  std::vector<double> alpha(n, 0.0), qdiag(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = labels[i] == 1 ? 1.0 : -1.0;
    auto r = x.row(i);
    qdiag[i] = std::inner_product(r.begin(), r.end(), r.begin(), 1.0);  // + bias feature
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);

  auto& w = svm.weights_;
  double& b = svm.bias_;
  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    std::shuffle(order.begin(), order.end(), rng);
    double pg_max = -std::numeric_limits<double>::infinity();
    double pg_min = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
      auto r = x.row(i);
      const double margin = std::inner_product(r.begin(), r.end(), w.begin(), b);
      const double g = y[i] * margin - 1.0;
      double pg = g;
      if (alpha[i] == 0.0) pg = std::min(g, 0.0);
      else if (alpha[i] == cost) pg = std::max(g, 0.0);
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (pg == 0.0) continue;
      const double old = alpha[i];
      alpha[i] = std::clamp(old - g / qdiag[i], 0.0, cost);
      const double delta = (alpha[i] - old) * y[i];
      for (std::size_t j = 0; j < d; ++j) w[j] += delta * r[j];
      b += delta;
    }
    if (pg_max - pg_min < opts.tolerance) {
      ++iter;
      break;
    }
  }
  svm.iterations_ = iter;
  return svm;
}

double LinearSvm::decision(std::span<const double> features) const {
  return std::inner_product(features.begin(), features.end(), weights_.begin(), bias_);
}

std::vector<double> LinearSvm::decision(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = decision(x.row(i));
  return out;
}

std::vector<int> make_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("make_folds: need at least two folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<int> fold(labels.size(), 0);
  for (std::size_t k = 0; k < pos.size(); ++k) fold[pos[k]] = static_cast<int>(k % folds);
  for (std::size_t k = 0; k < neg.size(); ++k) fold[neg[k]] = static_cast<int>(k % folds);
  return fold;
}

double ProbeResult::recompute_mean_ap() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : classes) {
    if (c.skipped) continue;
    sum += c.ap;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

std::string ProbeResult::to_json() const {
  nlohmann::json j;
  j["costs"] = costs;
  j["folds"] = folds;
  j["seed"] = seed;
  j["mean_ap"] = mean_ap;
  j["warnings"] = warnings;
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : classes) {
    nlohmann::json e{{"name", c.name}, {"skipped", c.skipped}};
    if (c.skipped) {
      e["reason"] = c.skip_reason;
    } else {
      e["ap"] = c.ap;
      e["best_cost"] = c.best_cost;
      e["cv_scores"] = c.cv_scores;
    }
    cls.push_back(std::move(e));
  }
  j["classes"] = std::move(cls);
  return j.dump(2);
}

ProbeResult linear_probe(const FeatureMatrix& train_x, const std::vector<std::vector<int>>& train_labels,
                         const FeatureMatrix& test_x, const std::vector<std::vector<int>>& test_labels,
                         const ProbeOptions& opts) {
  if (train_labels.size() != test_labels.size()) {
    throw std::invalid_argument("linear_probe: train/test class counts differ");
  }
  if (train_x.cols != test_x.cols) throw std::invalid_argument("linear_probe: feature widths differ");
  if (opts.costs.empty()) throw std::invalid_argument("linear_probe: empty cost grid");

  ProbeResult result;
  result.costs = opts.costs;
  result.folds = opts.folds;
  result.seed = opts.seed;

  for (std::size_t k = 0; k < train_labels.size(); ++k) {
    ClassProbe cp;
    cp.name = k < opts.class_names.size() ? opts.class_names[k] : "class" + std::to_string(k);
    const auto& y = train_labels[k];
    const auto& yt = test_labels[k];
    if (y.size() != train_x.rows || yt.size() != test_x.rows) {
      throw std::invalid_argument("linear_probe: label vector length mismatch for " + cp.name);
    }
    const auto npos = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    const auto nneg = y.size() - npos;
    const auto min_per_value = static_cast<std::size_t>(2 * opts.folds);
    auto skip = [&](std::string reason) {
      cp.skipped = true;
      cp.skip_reason = std::move(reason);
      result.warnings.push_back(cp.name + ": " + cp.skip_reason);
    };
    if (npos == 0 || nneg == 0) {
      skip("single label value in training split");
    } else if (npos < min_per_value || nneg < min_per_value) {
      skip("fewer than two positives and two negatives per fold");
    } else if (std::count(yt.begin(), yt.end(), 1) == 0) {
      skip("no positives in test split");
    }
    if (cp.skipped) {
      result.classes.push_back(std::move(cp));
      continue;
    }

    cp.folds = make_folds(y, opts.folds, opts.seed + k);
    double best_score = -1.0;
    for (double cost : opts.costs) {
      double score = 0.0;
      for (int f = 0; f < opts.folds; ++f) {
        std::vector<std::size_t> fit_idx, val_idx;
        for (std::size_t i = 0; i < y.size(); ++i) (cp.folds[i] == f ? val_idx : fit_idx).push_back(i);
        std::vector<int> fit_y, val_y;
        for (auto i : fit_idx) fit_y.push_back(y[i]);
        for (auto i : val_idx) val_y.push_back(y[i]);
        const auto svm = LinearSvm::fit(train_x.select_rows(fit_idx), fit_y, cost, opts.svm);
        score += average_precision(svm.decision(train_x.select_rows(val_idx)), val_y);
      }
      score /= opts.folds;
      cp.cv_scores.push_back(score);
      if (score > best_score) {
        best_score = score;
        cp.best_cost = cost;
      }
    }
    const auto svm = LinearSvm::fit(train_x, y, cp.best_cost, opts.svm);
    cp.ap = average_precision(svm.decision(test_x), yt);
    result.classes.push_back(std::move(cp));
  }
  result.mean_ap = result.recompute_mean_ap();
  return result;
}

}  // namespace loctex
