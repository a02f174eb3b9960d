#pragma once

#include <array>
#include <optional>
#include <vector>

#include "nuanced/nuance.hpp"

namespace nuanced {

/// Labels plus transition matrices for one nuance. The continuation matrix
/// is optional; when absent both per-turn steps use `reply`.
struct NuanceModel {
  NuanceValues values;
  TransitionMatrix reply;
  std::optional<TransitionMatrix> continuation;

  const TransitionMatrix& matrix_for_continuation() const {
    return continuation ? *continuation : reply;
  }
};

/// One model per nuance kind, indexed by `index_of(kind)`.
class NuanceSet {
 public:
  explicit NuanceSet(std::array<NuanceModel, 5> models);

  const NuanceModel& operator[](NuanceKind kind) const { return models_[index_of(kind)]; }

 private:
  std::array<NuanceModel, 5> models_;
};

/// Published steady-state vectors (value slots then the free slot), as
/// printed; rank-one defaults renormalize them.
std::vector<double> published_steady_state(NuanceKind kind);

/// Deployment example values for an Italian user at home in Genoa, with
/// rank-one default matrices built from the published steady states.
NuanceSet default_nuance_set();
NuanceValues default_values(NuanceKind kind);

}  // namespace nuanced
