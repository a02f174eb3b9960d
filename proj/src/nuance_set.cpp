#include "nuanced/nuance_set.hpp"

#include "nuanced/errors.hpp"

namespace nuanced {

NuanceSet::NuanceSet(std::array<NuanceModel, 5> models) : models_(std::move(models)) {
  for (auto kind : kAllNuances) {
    const auto& m = models_[index_of(kind)];
    if (m.values.kind != kind || m.reply.kind() != kind)
      throw InvalidNuanceSpec("nuance model stored under the wrong kind");
    validate(m.values);
    validate_transition_matrix(m.reply, m.values.flag_count());
    if (m.continuation) validate_transition_matrix(*m.continuation, m.values.flag_count());
  }
}

std::vector<double> published_steady_state(NuanceKind kind) {
  switch (kind) {
    case NuanceKind::diversity:
      return {0.083, 0.083, 0.083, 0.750};
    case NuanceKind::time:
      return {0.082, 0.092, 0.092, 0.735};
    case NuanceKind::place:
      return {0.082, 0.092, 0.092, 0.735};
    case NuanceKind::tone:
      return {0.092, 0.440, 0.060, 0.145, 0.012, 0.025, 0.060, 0.065, 0.100};
    case NuanceKind::speech_act:
      return {0.528, 0.111, 0.111, 0.0, 0.25};
  }
  return {};
}

NuanceValues default_values(NuanceKind kind) {
  switch (kind) {
    case NuanceKind::diversity:
      return {kind,
              {"nationality", "mental condition", "physical condition"},
              {"Italian", "good mental health", "good physical health"}};
    case NuanceKind::time:
      return {kind, {"time of the day", "season", "events"}, {"evening", "winter", "almost Easter"}};
    case NuanceKind::place:
      return {kind, {"environment", "city", "nation"}, {"house", "Genoa", "Italy"}};
    case NuanceKind::tone:
      return {kind, tone_labels(), tone_labels()};
    case NuanceKind::speech_act:
      return {kind, speech_act_labels(), speech_act_labels()};
  }
  return {};
}

NuanceSet default_nuance_set() {
  auto make = [](NuanceKind kind) {
    const auto steady = published_steady_state(kind);
    return NuanceModel{default_values(kind), TransitionMatrix::rank_one(kind, steady), std::nullopt};
  };
  return NuanceSet({make(NuanceKind::diversity), make(NuanceKind::time), make(NuanceKind::place),
                    make(NuanceKind::tone), make(NuanceKind::speech_act)});
}

}  // namespace nuanced
