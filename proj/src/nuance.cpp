#include "nuanced/nuance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "nuanced/errors.hpp"

namespace nuanced {

namespace {

constexpr std::array<std::string_view, 5> kNuanceNames = {"diversity", "time", "place", "tone",
                                                          "speech_act"};

double sum_of(std::span<const double> xs) { return std::accumulate(xs.begin(), xs.end(), 0.0); }

// Number of closed communicating classes of the chain's transition graph.
// A finite chain has a unique stationary distribution iff this is 1.
std::size_t closed_class_count(const TransitionMatrix& m) {
  const std::size_t n = m.size();
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (std::size_t j = 0; j < n; ++j) {
    reach[j][j] = true;
    for (std::size_t i = 0; i < n; ++i)
      if (m.at(j, i) > 0.0) reach[j][i] = true;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t a = 0; a < n; ++a)
      if (reach[a][k])
        for (std::size_t b = 0; b < n; ++b)
          if (reach[k][b]) reach[a][b] = true;

  // A state is recurrent iff everything it reaches can reach it back.
  std::vector<bool> recurrent(n, true);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (reach[a][b] && !reach[b][a]) recurrent[a] = false;

  std::vector<bool> seen(n, false);
  std::size_t classes = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (!recurrent[a] || seen[a]) continue;
    ++classes;
    for (std::size_t b = 0; b < n; ++b)
      if (reach[a][b]) seen[b] = true;
  }
  return classes;
}

}  // namespace

std::string_view to_string(NuanceKind kind) { return kNuanceNames[index_of(kind)]; }

std::optional<NuanceKind> nuance_from_string(std::string_view name) {
  for (auto kind : kAllNuances)
    if (kNuanceNames[index_of(kind)] == name) return kind;
  return std::nullopt;
}

const std::vector<std::string>& tone_labels() {
  static const std::vector<std::string> labels = {"humorous",   "kind",      "dramatic",
                                                  "controversial", "aggressive", "teasing",
                                                  "alarmist",   "worried"};
  return labels;
}

const std::vector<std::string>& speech_act_labels() {
  static const std::vector<std::string> labels = {"assertive", "commissive", "expressive",
                                                  "directive"};
  return labels;
}

void validate(const NuanceValues& values) {
  const std::string name{to_string(values.kind)};
  if (values.labels.empty()) throw InvalidNuanceSpec(name + ": needs at least one value");
  if (values.fields.size() != values.labels.size())
    throw InvalidNuanceSpec(name + ": fields and values differ in length");
  std::set<std::string> seen;
  for (const auto& label : values.labels) {
    if (label.empty()) throw InvalidNuanceSpec(name + ": empty value label");
    if (!seen.insert(label).second) throw InvalidNuanceSpec(name + ": duplicate label " + label);
  }
  if (values.kind == NuanceKind::tone && values.labels != tone_labels())
    throw InvalidNuanceSpec("tone labels are fixed");
  if (values.kind == NuanceKind::speech_act && values.labels != speech_act_labels())
    throw InvalidNuanceSpec("speech_act labels are fixed");
}

// ── FlagVector ──────────────────────────────────────────────────

FlagVector::FlagVector(NuanceKind kind, std::size_t size, std::size_t active)
    : kind_(kind), size_(size), active_(active) {
  if (size < 2) throw InvalidDistribution("flag vector needs at least two slots");
  if (active >= size) throw DimensionMismatch(size, active + 1);
}

FlagVector FlagVector::from_bits(NuanceKind kind, std::span<const int> bits) {
  std::optional<std::size_t> active;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == 0) continue;
    if (bits[i] != 1 || active) throw InvalidDistribution("flag vector is not one-hot");
    active = i;
  }
  if (!active) throw InvalidDistribution("flag vector has no set flag");
  return FlagVector(kind, bits.size(), *active);
}

FlagVector FlagVector::free_slot(NuanceKind kind, std::size_t size) {
  return FlagVector(kind, size, size - 1);
}

std::vector<int> FlagVector::bits() const {
  std::vector<int> out(size_, 0);
  out[active_] = 1;
  return out;
}

void validate(const ProbabilityVector& p) {
  if (p.probs.empty()) throw InvalidDistribution("empty probability vector");
  for (double x : p.probs)
    if (!(x >= 0.0 && x <= 1.0)) throw InvalidDistribution("probability outside [0, 1]");
  const double s = sum_of(p.probs);
  if (std::abs(s - 1.0) > kStochasticTolerance)
    throw InvalidDistribution("probabilities sum to " + std::to_string(s));
}

void validate(const NuanceState& state) {
  if (state.values.size() != kAllNuances.size() || state.flags.size() != kAllNuances.size())
    throw InvalidState("nuance state must hold exactly five nuances");
  for (auto kind : kAllNuances) {
    const auto& v = state.values_of(kind);
    const auto& f = state.flags_of(kind);
    if (v.kind != kind || f.kind() != kind) throw InvalidState("nuances are out of order");
    try {
      validate(v);
    } catch (const InvalidNuanceSpec& e) {
      throw InvalidState(e.what());
    }
    if (f.size() != v.flag_count())
      throw InvalidState(std::string(to_string(kind)) + ": flag vector has " +
                         std::to_string(f.size()) + " slots for " +
                         std::to_string(v.value_count()) + " values");
  }
}

NuanceState initial_nuance_state(std::vector<NuanceValues> values) {
  NuanceState state;
  for (const auto& v : values) state.flags.push_back(FlagVector::free_slot(v.kind, v.flag_count()));
  state.values = std::move(values);
  validate(state);
  return state;
}

// ── TransitionMatrix ────────────────────────────────────────────

TransitionMatrix::TransitionMatrix(NuanceKind kind, std::size_t n)
    : kind_(kind), n_(n), entries_(n * n, 0.0) {}

TransitionMatrix TransitionMatrix::from_columns(NuanceKind kind,
                                                const std::vector<std::vector<double>>& columns) {
  TransitionMatrix m(kind, columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].size() != columns.size()) throw DimensionMismatch(columns.size(), columns[j].size());
    for (std::size_t i = 0; i < columns.size(); ++i) m.at(j, i) = columns[j][i];
  }
  return m;
}

TransitionMatrix TransitionMatrix::rank_one(NuanceKind kind, std::span<const double> steady) {
  const double s = sum_of(steady);
  if (!(s > 0.0)) throw InvalidDistribution("steady-state vector has no mass");
  TransitionMatrix m(kind, steady.size());
  for (std::size_t j = 0; j < steady.size(); ++j)
    for (std::size_t i = 0; i < steady.size(); ++i) m.at(j, i) = steady[i] / s;
  return m;
}

TransitionMatrix TransitionMatrix::identity(NuanceKind kind, std::size_t n) {
  TransitionMatrix m(kind, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

std::vector<std::vector<double>> TransitionMatrix::columns() const {
  std::vector<std::vector<double>> out(n_);
  for (std::size_t j = 0; j < n_; ++j) out[j].assign(column(j).begin(), column(j).end());
  return out;
}

std::vector<double> TransitionMatrix::apply(std::span<const double> x) const {
  if (x.size() != n_) throw DimensionMismatch(n_, x.size());
  std::vector<double> y(n_, 0.0);
  for (std::size_t j = 0; j < n_; ++j) {
    if (x[j] == 0.0) continue;
    for (std::size_t i = 0; i < n_; ++i) y[i] += at(j, i) * x[j];
  }
  return y;
}

// ── operations ──────────────────────────────────────────────────

void validate_transition_matrix(const TransitionMatrix& matrix,
                                std::optional<std::size_t> expected_size) {
  if (expected_size && *expected_size != matrix.size())
    throw DimensionMismatch(*expected_size, matrix.size());
  if (matrix.size() == 0) throw DimensionMismatch(1, 0);
  for (std::size_t j = 0; j < matrix.size(); ++j) {
    for (std::size_t i = 0; i < matrix.size(); ++i) {
      const double v = matrix.at(j, i);
      if (!(v >= 0.0 && v <= 1.0)) throw NegativeEntry(i, j);
    }
    const double s = sum_of(matrix.column(j));
    if (std::abs(s - 1.0) > kStochasticTolerance) throw NonStochasticColumn(j, s);
  }
}

ProbabilityVector probability_update(const TransitionMatrix& matrix, const FlagVector& flags) {
  if (flags.size() != matrix.size()) throw DimensionMismatch(matrix.size(), flags.size());
  const auto col = matrix.column(flags.active());
  return ProbabilityVector{matrix.kind(), std::vector<double>(col.begin(), col.end())};
}

FlagVector sample_flag(const ProbabilityVector& p, Rng& rng) {
  validate(p);
  const double u = uniform01(rng);
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] <= 0.0) continue;
    last_positive = i;
    cumulative += p.probs[i];
    if (u < cumulative) return FlagVector(p.kind, p.probs.size(), i);
  }
  // Rounding left the cumulative sum just short of 1.
  return FlagVector(p.kind, p.probs.size(), last_positive);
}

ProbabilityVector steady_state(const TransitionMatrix& matrix, SteadyStateOptions options) {
  validate_transition_matrix(matrix);
  const std::size_t n = matrix.size();
  if (const auto classes = closed_class_count(matrix); classes != 1)
    throw NoConvergence("chain has " + std::to_string(classes) +
                        " closed classes; stationary distribution is not unique");

  std::vector<double> x(n, 1.0 / static_cast<double>(n));
  bool settled = false;
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    auto y = matrix.apply(x);
    const double s = sum_of(y);
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] /= s;
      delta = std::max(delta, std::abs(y[i] - x[i]));
    }
    x = std::move(y);
    if (delta < options.tolerance) {
      settled = true;
      break;
    }
  }
  if (!settled)
    throw NoConvergence("power iteration did not settle within " +
                        std::to_string(options.max_iterations) + " iterations (periodic chain?)");

  const auto tx = matrix.apply(x);
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(tx[i] - x[i]) >= options.stationarity_check)
      throw NoConvergence("iterate is not stationary");
  for (auto& v : x) v = std::max(v, 0.0);
  return ProbabilityVector{matrix.kind(), std::move(x)};
}

FlagVector step_nuance(const FlagVector& flags, const TransitionMatrix& matrix, Rng& rng) {
  return sample_flag(probability_update(matrix, flags), rng);
}

FlagVector apply_tone_override(const FlagVector& tone_flags, DetectedTone detected) {
  switch (detected) {
    case DetectedTone::humorous:
      return FlagVector(tone_flags.kind(), tone_flags.size(), kHumorousIndex);
    case DetectedTone::aggressive:
      return FlagVector(tone_flags.kind(), tone_flags.size(), kAggressiveIndex);
    case DetectedTone::none:
      break;
  }
  throw NotOverridableTone();
}

}  // namespace nuanced
