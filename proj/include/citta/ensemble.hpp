#pragma once

// Softmax, max-probability confidence, threshold filtering and averaged
// aggregation with fallback to the original view.

#include <Eigen/Dense>

#include <vector>

#include "citta/inference.hpp"

namespace citta {

using ProbabilityVector = Eigen::VectorXd;

struct ScoredPrediction {
  ProbabilityVector probs;
  double confidence = 0.0;
  int source_index = 0;  // 0 = original image, 1..N = variants
};

struct EnsembleDecision {
  ProbabilityVector final_probs;
  int predicted_class = 0;
  int retained_count = 0;
  bool fallback_used = false;
};

/// Max-shifted softmax.
ProbabilityVector softmax(const LogitVector& z);

double confidence(const ProbabilityVector& p);

/// Lowest index among the maxima.
int argmax(const Eigen::VectorXd& v);

ScoredPrediction score(const LogitVector& z, int source_index);

/// Keeps predictions with confidence >= tau, in input order.
std::vector<ScoredPrediction> filter_by_confidence(const std::vector<ScoredPrediction>& preds, double tau);

/// Mean of the retained distributions (summed in list order, renormalized);
/// the original's distribution when nothing was retained.
EnsembleDecision aggregate(const std::vector<ScoredPrediction>& retained, const ScoredPrediction& original);

}  // namespace citta
