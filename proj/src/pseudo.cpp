#include "cliptta/pseudo.hpp"

#include <utility>

namespace cliptta {

PseudoLabelSummary assign_pseudo_captions(const ProbMatrix& q, const ClassPrototypes& protos) {
  if (q.num_classes() != protos.num_classes()) {
    throw ShapeError("assign_pseudo_captions: q has " + std::to_string(q.num_classes()) +
                     " classes, prototypes have " + std::to_string(protos.num_classes()));
  }
  std::vector<std::size_t> assigned(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) assigned[i] = argmax(q.q.row(i));
  return summary_from_labels(std::move(assigned), protos);
}

PseudoLabelSummary summary_from_labels(std::vector<std::size_t> assigned,
                                       const ClassPrototypes& protos) {
  PseudoLabelSummary out;
  out.counts.assign(protos.num_classes(), 0);
  out.caption_rows = Matrix(assigned.size(), protos.dim());
  for (std::size_t i = 0; i < assigned.size(); ++i) {
    if (assigned[i] >= protos.num_classes()) throw ShapeError("pseudo-label out of range");
    ++out.counts[assigned[i]];
    out.caption_rows.set_row(i, protos.row(assigned[i]));
  }
  out.assigned = std::move(assigned);
  return out;
}

}  // namespace cliptta
