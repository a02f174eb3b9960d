#pragma once

// Markov state machine over dialogue nuances.
//
// Every nuance kind carries m value labels and a one-hot flag vector of
// size m + 1. The last flag has no label: it means "free" (the model may
// use any value or none), or "neutral" for the tone nuance. Flags evolve
// by p(t+1) = T f(t) followed by a single categorical draw.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nuanced/random.hpp"

namespace nuanced {

enum class NuanceKind { diversity, time, place, tone, speech_act };

inline constexpr std::array<NuanceKind, 5> kAllNuances = {
    NuanceKind::diversity, NuanceKind::time, NuanceKind::place, NuanceKind::tone,
    NuanceKind::speech_act};

std::string_view to_string(NuanceKind kind);
std::optional<NuanceKind> nuance_from_string(std::string_view name);
inline constexpr std::size_t index_of(NuanceKind kind) { return static_cast<std::size_t>(kind); }

/// Value labels of one nuance. `fields` names what each label describes
/// (e.g. "nationality" for "Italian"); for tone and speech act the field is
/// the label itself.
struct NuanceValues {
  NuanceKind kind{};
  std::vector<std::string> fields;
  std::vector<std::string> labels;

  std::size_t value_count() const noexcept { return labels.size(); }
  std::size_t flag_count() const noexcept { return labels.size() + 1; }
  bool operator==(const NuanceValues&) const = default;
};

/// Throws InvalidNuanceSpec when labels are empty, duplicated, mismatched
/// with fields, or (for tone and speech act) differ from the fixed sets.
void validate(const NuanceValues& values);

const std::vector<std::string>& tone_labels();
const std::vector<std::string>& speech_act_labels();

/// Index of the "directive" speech act in the fixed speech-act labels.
inline constexpr std::size_t kDirectiveIndex = 3;
inline constexpr std::size_t kHumorousIndex = 0;
inline constexpr std::size_t kAggressiveIndex = 4;

/// One-hot selector over a nuance's values plus the unpaired free slot.
class FlagVector {
 public:
  FlagVector(NuanceKind kind, std::size_t size, std::size_t active);

  /// Builds from explicit 0/1 entries; throws InvalidDistribution unless
  /// exactly one entry is 1 and the rest are 0.
  static FlagVector from_bits(NuanceKind kind, std::span<const int> bits);
  /// All weight on the unpaired last slot.
  static FlagVector free_slot(NuanceKind kind, std::size_t size);

  NuanceKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return size_; }
  std::size_t active() const noexcept { return active_; }
  bool is_free() const noexcept { return active_ + 1 == size_; }
  std::vector<int> bits() const;

  bool operator==(const FlagVector&) const = default;

 private:
  NuanceKind kind_;
  std::size_t size_;
  std::size_t active_;
};

struct ProbabilityVector {
  NuanceKind kind{};
  std::vector<double> probs;
};

/// Throws InvalidDistribution unless every element is in [0, 1] and the
/// elements sum to 1 within 1e-9.
void validate(const ProbabilityVector& p);

/// n x n column-stochastic matrix; column j is the distribution of the next
/// flag given flag j is currently set.
class TransitionMatrix {
 public:
  TransitionMatrix(NuanceKind kind, std::size_t n);
  /// `columns[j][i]` = probability of moving from flag j to flag i.
  static TransitionMatrix from_columns(NuanceKind kind,
                                       const std::vector<std::vector<double>>& columns);
  /// Every column equals `steady` renormalized to sum to exactly 1.
  static TransitionMatrix rank_one(NuanceKind kind, std::span<const double> steady);
  static TransitionMatrix identity(NuanceKind kind, std::size_t n);

  NuanceKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return n_; }

  double at(std::size_t from, std::size_t to) const { return entries_[from * n_ + to]; }
  double& at(std::size_t from, std::size_t to) { return entries_[from * n_ + to]; }
  std::span<const double> column(std::size_t from) const {
    return {entries_.data() + from * n_, n_};
  }
  std::vector<std::vector<double>> columns() const;

  /// T x for an arbitrary vector x of length n.
  std::vector<double> apply(std::span<const double> x) const;

 private:
  NuanceKind kind_;
  std::size_t n_;
  std::vector<double> entries_;  // column-major
};

enum class DetectedTone { humorous, aggressive, none };

/// Values and current flags of all five nuances, indexed by `index_of(kind)`.
struct NuanceState {
  std::vector<NuanceValues> values;
  std::vector<FlagVector> flags;

  const NuanceValues& values_of(NuanceKind k) const { return values.at(index_of(k)); }
  const FlagVector& flags_of(NuanceKind k) const { return flags.at(index_of(k)); }
  FlagVector& flags_of(NuanceKind k) { return flags.at(index_of(k)); }
  bool operator==(const NuanceState&) const = default;
};

/// Throws InvalidState unless all five kinds are present in order, values
/// are valid and every flag vector has m + 1 slots.
void validate(const NuanceState& state);

/// Flags initialised to the free slot for every nuance.
NuanceState initial_nuance_state(std::vector<NuanceValues> values);

// ── operations ──────────────────────────────────────────────────

inline constexpr double kStochasticTolerance = 1e-9;

/// Throws NegativeEntry, NonStochasticColumn or DimensionMismatch
/// (when `expected_size` is given and differs).
void validate_transition_matrix(const TransitionMatrix& matrix,
                                std::optional<std::size_t> expected_size = std::nullopt);

/// p(t+1) = T f(t): the column of T selected by the active flag.
ProbabilityVector probability_update(const TransitionMatrix& matrix, const FlagVector& flags);

/// Inverse-CDF draw with a single uniform; boundaries resolve to the lower index.
FlagVector sample_flag(const ProbabilityVector& p, Rng& rng);

struct SteadyStateOptions {
  double tolerance = 1e-12;
  std::size_t max_iterations = 10000;
  double stationarity_check = 1e-8;
};

/// Stationary distribution by power iteration from the uniform vector.
/// Throws NoConvergence when the chain has more than one closed class
/// (no unique stationary distribution) or the iteration fails to settle.
ProbabilityVector steady_state(const TransitionMatrix& matrix, SteadyStateOptions options = {});

FlagVector step_nuance(const FlagVector& flags, const TransitionMatrix& matrix, Rng& rng);

/// Sets the detected tone's flag, bypassing the Markov step.
FlagVector apply_tone_override(const FlagVector& tone_flags, DetectedTone detected);

}  // namespace nuanced
