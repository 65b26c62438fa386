#include "citta/ensemble.hpp"

#include <cmath>

#include "citta/errors.hpp"

namespace citta {

ProbabilityVector softmax(const LogitVector& z) {
  if (z.size() < 1) throw InvalidArgument("softmax of an empty vector");
  if (!z.allFinite()) throw InvalidArgument("softmax input must be finite");
  const double shift = z.maxCoeff();
  ProbabilityVector p = (z.array() - shift).exp().matrix();
  return p / p.sum();
}

double confidence(const ProbabilityVector& p) { return p.maxCoeff(); }

int argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index k = 1; k < v.size(); ++k) {
    if (v(k) > v(best)) best = static_cast<int>(k);
  }
  return best;
}

ScoredPrediction score(const LogitVector& z, int source_index) {
  ScoredPrediction s;
  s.probs = softmax(z);
  s.confidence = confidence(s.probs);
  s.source_index = source_index;
  return s;
}

std::vector<ScoredPrediction> filter_by_confidence(const std::vector<ScoredPrediction>& preds, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("tau must be in [0, 1]");
  std::vector<ScoredPrediction> kept;
  for (const auto& p : preds) {
    if (p.confidence >= tau) kept.push_back(p);
  }
  return kept;
}

EnsembleDecision aggregate(const std::vector<ScoredPrediction>& retained, const ScoredPrediction& original) {
  EnsembleDecision d;
  d.retained_count = static_cast<int>(retained.size());
  if (retained.empty()) {
    d.final_probs = original.probs;
    d.fallback_used = true;
  } else {
    ProbabilityVector sum = ProbabilityVector::Zero(retained.front().probs.size());
    for (const auto& p : retained) {
      if (p.probs.size() != sum.size()) throw InvalidArgument("retained distributions differ in length");
      sum += p.probs;
    }
    sum /= static_cast<double>(retained.size());
    // Sequential total so the result does not depend on SIMD reduction order.
    double total = 0.0;
    for (Eigen::Index k = 0; k < sum.size(); ++k) total += sum(k);
    d.final_probs = sum / total;
  }
  d.predicted_class = argmax(d.final_probs);
  return d;
}

}  // namespace citta
