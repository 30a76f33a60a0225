#include "phaseflow/envelope.hpp"
#include "phaseflow/errors.hpp"
#include "phaseflow/label_density.hpp"
#include "phaseflow/replica.hpp"
#include "common/oracle.hpp"
#include "support.hpp"

#include <cmath>

using namespace phaseflow;
using testing::kL;
using testing::Oracle;

namespace {

struct Frozen {
  double alpha, chi, z, energy, free_energy;
};

// Threshold saddles, frozen after agreement with the adaptive oracle.
const Frozen kTable[] = {
    {6.0, 0.11159645553030142, 0.1734263175483438, 2.7928095802156214, 2.840286427676973},
    {8.0, 0.08702359279552084, 0.12505389681174792, 4.769050166671584, 4.843628223562651},
    {10.0, 0.07320654297378222, 0.09858923978880771, 6.9670786304978165, 7.057012535396894},
};

}  // namespace

TEST_CASE("oracle confirms the frozen saddle at alpha = 6") {
  const Frozen& f = kTable[0];
  const Oracle o{f.chi, f.z};
  const SaddleResiduals r = o.residuals(f.alpha);
  const double scale = 1.0 / (f.chi * (f.chi + f.z));
  CHECK(std::abs(r.r_chi) / scale < 1e-10);
  CHECK(std::abs(r.r_replicon) < 1e-10);
  CHECK(o.energy(f.alpha) == doctest::Approx(f.energy).epsilon(1e-10));
  const double fe = -std::log1p(f.z / f.chi) / (2.0 * f.z) - (f.alpha / f.z) * o.log_partition();
  CHECK(fe == doctest::Approx(f.free_energy).epsilon(1e-10));
  const ThresholdMeasure m = threshold_measure(f.chi, f.z);
  CHECK(m.log_partition == doctest::Approx(o.log_partition()).epsilon(1e-9));
}

TEST_CASE("threshold solver reproduces the frozen table") {
  for (const Frozen& f : kTable) {
    const SaddleSolution s = solve_threshold(f.alpha);
    CHECK(s.chi == doctest::Approx(f.chi).epsilon(1e-8));
    CHECK(s.z == doctest::Approx(f.z).epsilon(1e-8));
    CHECK(s.threshold_energy == doctest::Approx(f.energy).epsilon(1e-8));
    CHECK(threshold_energy(s) == doctest::Approx(s.threshold_energy).epsilon(1e-12));
    CHECK(s.free_energy == doctest::Approx(f.free_energy).epsilon(1e-8));
    CHECK(std::abs(s.residuals.r_chi) < 1e-8);
    CHECK(std::abs(s.residuals.r_replicon) < 1e-8);
  }
}

TEST_CASE("branch residuals stay below 1e-8 over [4, 16]") {
  const auto branch = solve_branch(4.0, 16.0, 1.0);
  REQUIRE(branch.size() == 13);
  double previous = 0.0;
  for (const SaddleSolution& s : branch) {
    CHECK(std::abs(s.residuals.r_chi) < 1e-8);
    CHECK(std::abs(s.residuals.r_replicon) < 1e-8);
    CHECK(s.threshold_energy > previous);
    previous = s.threshold_energy;
  }
  CHECK(branch.front().chi == doctest::Approx(0.171198191).epsilon(1e-7));
  CHECK(branch.back().z == doctest::Approx(0.062157951).epsilon(1e-7));

  testing::TempDir dir("branch");
  write_branch(dir.path() / "b.csv", branch);
  CHECK(std::filesystem::file_size(dir.path() / "b.csv") > 0);
}

TEST_CASE("continuation from a neighbour converges in a few Newton steps") {
  const SaddleSolution s6 = solve_threshold(6.0);
  SaddleOptions o;
  o.guess = std::make_pair(s6.chi, s6.z);
  const SaddleSolution s = solve_threshold(6.5, o);
  CHECK(s.newton_steps <= 5);
  CHECK(std::abs(s.residuals.r_chi) < 1e-8);
}

TEST_CASE("refined quadrature leaves the saddle in place") {
  const Frozen& f = kTable[2];
  SaddleOptions o;
  o.spec = QuadratureSpec{}.refined();
  o.guess = std::make_pair(f.chi, f.z);
  const SaddleSolution s = solve_threshold(f.alpha, o);
  CHECK(std::abs(s.chi / f.chi - 1.0) < 1e-5);
  CHECK(std::abs(s.z / f.z - 1.0) < 1e-5);
  CHECK(std::abs(s.threshold_energy / f.energy - 1.0) < 1e-6);
}

TEST_CASE("measure weights and limits") {
  const ThresholdMeasure m = threshold_measure(0.1, 0.2);
  double mass = 0.0;
  for (const MeasureNode& n : m.nodes) {
    mass += n.weight;
    CHECK(n.weight >= 0.0);
    CHECK(n.jacobian >= 0.0);
    CHECK(n.potential >= 0.0);
  }
  CHECK(mass == doctest::Approx(std::erf(kL / std::sqrt(2.0))).epsilon(1e-12));

  // As z -> 0 the free energy tends to -1/(2 chi) + (alpha/2) E[V] under independent Gaussians.
  const double chi = 0.2, alpha = 5.0;
  const Oracle flat{chi, 0.0};
  const double ev = flat.expect([&](double yh, double y) { return envelope(chi, yh, y).value; });
  const double limit = -0.5 / chi + 0.5 * alpha * ev;
  CHECK(free_energy(alpha, chi, 1e-7) == doctest::Approx(limit).epsilon(1e-5));

  // Large chi: the envelope vanishes and so does the stability term.
  const SaddleResiduals big = saddle_residuals(4.0, 1e6, 0.5);
  CHECK(std::isfinite(big.r_chi));
  CHECK(std::isfinite(big.r_replicon));
  CHECK(std::abs(big.r_chi) < 1e-6);
}

TEST_CASE("solver rejects or fails outside the branch") {
  CHECK_THROWS_AS(solve_threshold(1.0), ParameterError);
  CHECK_THROWS_AS(solve_threshold(50.0), ParameterError);
  SaddleOptions o;
  o.alpha_min = 0.1;
  CHECK_THROWS_AS(solve_threshold(0.5, o), ConvergenceError);
  CHECK_THROWS_AS(free_energy(0.0, 0.1, 0.1), ParameterError);
  CHECK_THROWS_AS(solve_branch(6.0, 4.0, 1.0), ParameterError);
}
