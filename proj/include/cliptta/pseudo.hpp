#pragma once

#include <vector>

#include "cliptta/model.hpp"

namespace cliptta {

/// Per-sample pseudo-captions and the per-class counts N_k they induce.
struct PseudoLabelSummary {
  std::vector<std::size_t> assigned;  // predicted class of each sample
  std::vector<std::size_t> counts;    // N_k
  Matrix caption_rows;                // row i = prototype of assigned[i]

  std::size_t size() const { return assigned.size(); }
};

/// argmax over each row of q (lowest class index wins ties).
PseudoLabelSummary assign_pseudo_captions(const ProbMatrix& q, const ClassPrototypes& protos);

/// Builds the summary from explicit labels, e.g. for handcrafted batch compositions.
PseudoLabelSummary summary_from_labels(std::vector<std::size_t> assigned,
                                       const ClassPrototypes& protos);

}  // namespace cliptta
