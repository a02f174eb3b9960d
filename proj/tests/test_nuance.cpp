#include <doctest.h>

#include <Eigen/Dense>

#include <numeric>

#include "nuanced/errors.hpp"
#include "nuanced/nuance.hpp"
#include "nuanced/nuance_set.hpp"

using namespace nuanced;

namespace {

// Eigenvector of T for the eigenvalue closest to 1, normalised to sum 1.
std::vector<double> eigen_stationary(const TransitionMatrix& t) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) m(i, j) = t.at(static_cast<std::size_t>(j), static_cast<std::size_t>(i));
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < n; ++k)
    if (std::abs(solver.eigenvalues()[k] - 1.0) < std::abs(solver.eigenvalues()[best] - 1.0)) best = k;
  Eigen::VectorXd v = solver.eigenvectors().col(best).real();
  v /= v.sum();
  return {v.data(), v.data() + n};
}

TransitionMatrix random_positive_matrix(NuanceKind kind, std::size_t n, Rng& rng) {
  std::vector<std::vector<double>> cols(n, std::vector<double>(n));
  for (auto& c : cols) {
    double s = 0.0;
    for (auto& x : c) s += x = 0.05 + uniform01(rng);
    for (auto& x : c) x /= s;
  }
  return TransitionMatrix::from_columns(kind, cols);
}

std::vector<double> renormalized(std::vector<double> v) {
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace

TEST_CASE("nuance kinds round-trip through their names") {
  CHECK(kAllNuances.size() == 5);
  for (auto k : kAllNuances) CHECK(nuance_from_string(to_string(k)) == k);
  CHECK_FALSE(nuance_from_string("mood"));
}

TEST_CASE("value vectors enforce the fixed tone and speech-act labels") {
  CHECK_NOTHROW(validate(default_values(NuanceKind::tone)));
  CHECK(default_values(NuanceKind::tone).value_count() == 8);
  CHECK(default_values(NuanceKind::speech_act).value_count() == 4);
  auto bad = default_values(NuanceKind::tone);
  bad.labels[0] = "sarcastic";
  bad.fields = bad.labels;
  CHECK_THROWS_AS(validate(bad), InvalidNuanceSpec);
  NuanceValues dup{NuanceKind::place, {"a", "b", "c"}, {"x", "x", "y"}};
  CHECK_THROWS_AS(validate(dup), InvalidNuanceSpec);
  NuanceValues empty{NuanceKind::place, {}, {}};
  CHECK_THROWS_AS(validate(empty), InvalidNuanceSpec);
}

TEST_CASE("flag vectors are one-hot with a trailing free slot") {
  const std::vector<int> good{0, 0, 1, 0};
  auto f = FlagVector::from_bits(NuanceKind::diversity, good);
  CHECK(f.active() == 2);
  CHECK(f.bits() == good);
  CHECK_FALSE(f.is_free());
  CHECK(FlagVector::free_slot(NuanceKind::diversity, 4).is_free());
  const std::vector<int> two{1, 0, 1, 0};
  const std::vector<int> none{0, 0, 0, 0};
  const std::vector<int> weird{0, 2, 0, 0};
  CHECK_THROWS_AS(FlagVector::from_bits(NuanceKind::diversity, two), InvalidDistribution);
  CHECK_THROWS_AS(FlagVector::from_bits(NuanceKind::diversity, none), InvalidDistribution);
  CHECK_THROWS_AS(FlagVector::from_bits(NuanceKind::diversity, weird), InvalidDistribution);
}

TEST_CASE("validate_transition_matrix") {
  CHECK_NOTHROW(validate_transition_matrix(TransitionMatrix::identity(NuanceKind::time, 2)));

  auto short_col = TransitionMatrix::from_columns(NuanceKind::time, {{0.5, 0.4}, {0.5, 0.5}});
  CHECK_THROWS_AS(validate_transition_matrix(short_col), NonStochasticColumn);

  auto negative = TransitionMatrix::from_columns(NuanceKind::time, {{1.5, -0.5}, {0.5, 0.5}});
  CHECK_THROWS_AS(validate_transition_matrix(negative), NegativeEntry);

  CHECK_THROWS_AS(validate_transition_matrix(TransitionMatrix::identity(NuanceKind::time, 2), 4),
                  DimensionMismatch);

  const auto d = default_nuance_set()[NuanceKind::diversity].reply;
  CHECK_NOTHROW(validate_transition_matrix(d, 4));
}

TEST_CASE("probability_update selects the column of the active flag") {
  auto t = TransitionMatrix::from_columns(NuanceKind::time, {{0.2, 0.8}, {0.6, 0.4}});
  CHECK(probability_update(t, FlagVector(NuanceKind::time, 2, 0)).probs == std::vector<double>{0.2, 0.8});
  CHECK(probability_update(t, FlagVector(NuanceKind::time, 2, 1)).probs == std::vector<double>{0.6, 0.4});

  auto id = TransitionMatrix::identity(NuanceKind::time, 4);
  CHECK(probability_update(id, FlagVector(NuanceKind::time, 4, 2)).probs == std::vector<double>{0, 0, 1, 0});

  const auto d = default_nuance_set()[NuanceKind::diversity].reply;
  const auto e = renormalized({0.083, 0.083, 0.083, 0.750});
  for (std::size_t j = 0; j < 4; ++j) {
    const auto p = probability_update(d, FlagVector(NuanceKind::diversity, 4, j)).probs;
    for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(e[i]).epsilon(1e-15));
  }
  CHECK_THROWS_AS(probability_update(d, FlagVector(NuanceKind::diversity, 3, 0)), DimensionMismatch);
}

TEST_CASE("sample_flag") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    CHECK(sample_flag({NuanceKind::diversity, {1, 0, 0, 0}}, rng).active() == 0);
    CHECK(sample_flag({NuanceKind::time, {0, 0, 1}}, rng).active() == 2);
  }
  CHECK_THROWS_AS(sample_flag({NuanceKind::time, {0.5, 0.6}}, rng), InvalidDistribution);
  CHECK_THROWS_AS(sample_flag({NuanceKind::time, {-0.5, 1.5}}, rng), InvalidDistribution);

  const auto e = renormalized({0.083, 0.083, 0.083, 0.750});
  std::size_t free = 0;
  for (int i = 0; i < 100000; ++i) free += sample_flag({NuanceKind::diversity, e}, rng).active() == 3;
  CHECK(std::abs(free / 100000.0 - 0.750) <= 0.01);
}

TEST_CASE("sample_flag never picks a zero-probability slot") {
  Rng rng(99);
  for (int i = 0; i < 20000; ++i) {
    auto f = sample_flag({NuanceKind::speech_act, renormalized({0.528, 0.111, 0.111, 0.0, 0.25})}, rng);
    REQUIRE(f.active() != 3);
  }
}

TEST_CASE("steady_state matches the published vectors for the default matrices") {
  const auto set = default_nuance_set();
  for (auto kind : kAllNuances) {
    const auto got = steady_state(set[kind].reply).probs;
    const auto want = renormalized(published_steady_state(kind));
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-6);
  }
  // Frozen renormalized tone vector (sum of the printed values is 0.999).
  const auto tone = steady_state(set[NuanceKind::tone].reply).probs;
  CHECK(tone[1] == doctest::Approx(0.440 / 0.999).epsilon(1e-9));
  const auto speech = steady_state(set[NuanceKind::speech_act].reply).probs;
  CHECK(speech[3] == 0.0);
  CHECK(speech[0] == doctest::Approx(0.528).epsilon(1e-9));
}

TEST_CASE("steady_state agrees with an eigen-decomposition oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(uniform_index(rng, 8));
    const auto t = random_positive_matrix(NuanceKind::tone, n, rng);
    const auto got = steady_state(t).probs;
    const auto want = eigen_stationary(t);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-9);
    const auto tx = t.apply(got);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(tx[i] - got[i]) < 1e-8);
  }
}

TEST_CASE("steady_state rejects chains without a unique stationary distribution") {
  CHECK_THROWS_AS(steady_state(TransitionMatrix::identity(NuanceKind::time, 4)), NoConvergence);
  // Two closed classes {0,1} and {2,3}.
  auto split = TransitionMatrix::from_columns(
      NuanceKind::time, {{0.5, 0.5, 0, 0}, {0.5, 0.5, 0, 0}, {0, 0, 0.5, 0.5}, {0, 0, 0.5, 0.5}});
  CHECK_THROWS_AS(steady_state(split), NoConvergence);
  // Periodic, but the uniform start is already stationary.
  auto cycle3 = TransitionMatrix::from_columns(NuanceKind::time, {{0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  CHECK(steady_state(cycle3).probs[0] == doctest::Approx(1.0 / 3.0));
  // Reducible with one closed class and a transient state is fine.
  auto transient = TransitionMatrix::from_columns(NuanceKind::time, {{0.5, 0.5, 0}, {0.5, 0.5, 0}, {0.3, 0.3, 0.4}});
  const auto p = steady_state(transient).probs;
  CHECK(p[2] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("step_nuance") {
  auto swap = TransitionMatrix::from_columns(NuanceKind::time, {{0, 1, 0}, {1, 0, 0}, {0, 0, 1}});
  Rng rng(3);
  CHECK(step_nuance(FlagVector(NuanceKind::time, 3, 0), swap, rng).active() == 1);
  CHECK(step_nuance(FlagVector(NuanceKind::time, 3, 1), swap, rng).active() == 0);
}

TEST_CASE("step_nuance preserves one-hot vectors and converges to the steady state") {
  const auto set = default_nuance_set();
  for (auto kind : kAllNuances) {
    const auto& t = set[kind].reply;
    const auto e = steady_state(t).probs;
    Rng rng(7 + index_of(kind));
    FlagVector f = FlagVector::free_slot(kind, t.size());
    std::vector<std::size_t> counts(t.size(), 0);
    for (int i = 0; i < 100000; ++i) {
      f = step_nuance(f, t, rng);
      const auto bits = f.bits();
      REQUIRE(std::accumulate(bits.begin(), bits.end(), 0) == 1);
      ++counts[f.active()];
    }
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(counts[i] / 100000.0 - e[i]) <= 0.01);
  }
}

TEST_CASE("step_nuance on a non-rank-one chain converges to its own steady state") {
  Rng build(555);
  const auto t = random_positive_matrix(NuanceKind::place, 4, build);
  const auto e = eigen_stationary(t);
  Rng rng(8);
  FlagVector f = FlagVector::free_slot(NuanceKind::place, 4);
  std::vector<std::size_t> counts(4, 0);
  for (int i = 0; i < 100000; ++i) {
    f = step_nuance(f, t, rng);
    ++counts[f.active()];
  }
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(counts[i] / 100000.0 - e[i]) <= 0.01);
}

TEST_CASE("identical seeds give identical trajectories") {
  const auto t = default_nuance_set()[NuanceKind::tone].reply;
  auto run = [&](std::uint64_t seed) {
    Rng rng(seed);
    FlagVector f = FlagVector::free_slot(NuanceKind::tone, 9);
    std::vector<std::size_t> out;
    for (int i = 0; i < 1000; ++i) out.push_back((f = step_nuance(f, t, rng)).active());
    return out;
  };
  CHECK(run(11) == run(11));
  CHECK(run(11) != run(12));
}

TEST_CASE("apply_tone_override") {
  for (std::size_t prior = 0; prior < 9; ++prior) {
    FlagVector f(NuanceKind::tone, 9, prior);
    CHECK(apply_tone_override(f, DetectedTone::humorous).active() == kHumorousIndex);
    CHECK(apply_tone_override(f, DetectedTone::aggressive).active() == kAggressiveIndex);
    const auto bits = apply_tone_override(f, DetectedTone::humorous).bits();
    CHECK(std::accumulate(bits.begin(), bits.end(), 0) == 1);
  }
  CHECK(tone_labels()[kHumorousIndex] == "humorous");
  CHECK(tone_labels()[kAggressiveIndex] == "aggressive");
  CHECK_THROWS_AS(apply_tone_override(FlagVector(NuanceKind::tone, 9, 8), DetectedTone::none), NotOverridableTone);
}

TEST_CASE("nuance state validation") {
  std::vector<NuanceValues> values;
  for (auto k : kAllNuances) values.push_back(default_values(k));
  auto s = initial_nuance_state(values);
  CHECK_NOTHROW(validate(s));
  for (auto k : kAllNuances) CHECK(s.flags_of(k).is_free());
  auto broken = s;
  broken.flags[0] = FlagVector(NuanceKind::diversity, 3, 0);
  CHECK_THROWS_AS(validate(broken), InvalidState);
  auto reordered = s;
  std::swap(reordered.values[0], reordered.values[1]);
  std::swap(reordered.flags[0], reordered.flags[1]);
  CHECK_THROWS_AS(validate(reordered), InvalidState);
}

TEST_CASE("nuance sets reject matrices of the wrong size") {
  auto make = [](NuanceKind k) {
    return NuanceModel{default_values(k), TransitionMatrix::rank_one(k, published_steady_state(k)), std::nullopt};
  };
  auto bad = make(NuanceKind::time);
  bad.reply = TransitionMatrix::identity(NuanceKind::time, 3);
  CHECK_THROWS_AS(NuanceSet({make(NuanceKind::diversity), bad, make(NuanceKind::place), make(NuanceKind::tone),
                             make(NuanceKind::speech_act)}),
                  DimensionMismatch);
}

TEST_CASE("random helpers") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(rng);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(uniform_index(rng, 7) < 7);
  }
  auto a = derive_rng(5, "s", 3, 0);
  auto b = derive_rng(5, "s", 3, 0);
  auto c = derive_rng(5, "s", 3, 1);
  CHECK(a() == b());
  CHECK(derive_rng(5, "s", 3, 0)() != c());
}
