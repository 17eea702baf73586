#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "molspec/spectra.hpp"

using namespace molspec::spectra;

TEST_CASE("standard grids match the published acquisition ranges") {
  GridSet g = GridSet::standard();
  CHECK(g.of(SpectrumKind::kUvVis).start == 1.5);
  CHECK(g.of(SpectrumKind::kUvVis).step == 0.02);
  CHECK(g.of(SpectrumKind::kUvVis).length == 601);
  CHECK(g.of(SpectrumKind::kIr).start == 500.0);
  CHECK(g.of(SpectrumKind::kIr).step == 1.0);
  CHECK(g.of(SpectrumKind::kIr).length == 3501);
  CHECK(g.of(SpectrumKind::kRaman).length == 3501);
  // UV-Vis extends to 13.5 eV, IR to 4000 cm^-1.
  CHECK(1.5 + 0.02 * 600 == doctest::Approx(13.5));
  CHECK(500.0 + 1.0 * 3500 == doctest::Approx(4000.0));
}

TEST_CASE("preprocess applies log10(1+I)") {
  Spectrum raw{SpectrumKind::kIr, {0.0, 9.0, 999.0}};
  Spectrum p = preprocess(raw);
  CHECK(p.intensities[0] == doctest::Approx(0.0));
  CHECK(p.intensities[1] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(p.intensities[2] == doctest::Approx(3.0).epsilon(1e-14));

  Spectrum bad{SpectrumKind::kIr, {-0.1}};
  CHECK_THROWS_AS(preprocess(bad), std::invalid_argument);
}

TEST_CASE("preprocess is monotone") {
  Spectrum raw{SpectrumKind::kUvVis, {0.0, 0.5, 1.0, 2.0, 10.0, 100.0}};
  Spectrum p = preprocess(raw);
  for (std::size_t i = 1; i < p.intensities.size(); ++i) {
    CHECK(p.intensities[i] > p.intensities[i - 1]);
  }
}

TEST_CASE("patch counts match the closed-form window formula") {
  CHECK(patch_count(3501, 20, 10) == 349);
  CHECK(patch_count(601, 20, 10) == 59);
  CHECK(patch_count(3501, 20, 20) == 175);
  CHECK(patch_count(601, 601, 601) == 1);
  CHECK_THROWS_AS(patch_count(10, 20, 10), std::invalid_argument);
}

TEST_CASE("patch-count formula equals brute-force window enumeration") {
  // Exhaustive over every (L, P, D) with L <= 200.
  for (std::size_t L = 1; L <= 200; ++L) {
    for (std::size_t P = 1; P <= L; ++P) {
      for (std::size_t D = 1; D <= P; ++D) {
        std::size_t brute = 0;
        for (std::size_t start = 0; start + P <= L; start += D) ++brute;
        REQUIRE(patch_count(L, P, D) == brute);
      }
    }
  }
}

TEST_CASE("patchify copies overlapping windows and drops the remainder") {
  Spectrum s{SpectrumKind::kUvVis, {}};
  s.intensities.resize(10);
  for (std::size_t i = 0; i < 10; ++i) s.intensities[i] = static_cast<double>(i);

  PatchSequence p = patchify(s, {4, 2});
  CHECK(p.num_patches == 4);
  CHECK(p.patch_len == 4);
  // patch j starts at j*D
  for (std::size_t j = 0; j < p.num_patches; ++j) {
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(p.row(j)[k] == doctest::Approx(static_cast<double>(j * 2 + k)));
    }
  }
  // consecutive patches agree on their P-D shared points
  for (std::size_t j = 0; j + 1 < p.num_patches; ++j) {
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(p.row(j)[2 + k] == p.row(j + 1)[k]);
    }
  }
}

TEST_CASE("uncovered trailing points: L=3501, P=20, D=20 leaves index 3500 out") {
  const std::size_t n = patch_count(3501, 20, 20);
  CHECK(n == 175);
  const std::size_t last_covered = (n - 1) * 20 + 20 - 1;
  CHECK(last_covered == 3499);
}

TEST_CASE("non-overlapping round trip reproduces the spectrum") {
  Spectrum s{SpectrumKind::kIr, {}};
  s.intensities.resize(120);
  for (std::size_t i = 0; i < 120; ++i) s.intensities[i] = std::sin(0.1 * i);
  PatchSequence p = patchify(s, {12, 12});
  CHECK(p.num_patches == 10);
  std::vector<double> rebuilt;
  for (std::size_t j = 0; j < p.num_patches; ++j) {
    rebuilt.insert(rebuilt.end(), p.row(j), p.row(j) + p.patch_len);
  }
  CHECK(rebuilt == s.intensities);
}

TEST_CASE("mask plans have deterministic counts and valid indices") {
  MaskPlan plan = make_mask_plan({349, 349, 349}, 0.10, 7);
  for (const auto& m : plan.masked) {
    CHECK(m.size() == 34);  // floor(34.9)
    std::set<std::size_t> uniq(m.begin(), m.end());
    CHECK(uniq.size() == m.size());
    for (auto idx : m) CHECK(idx < 349);
  }

  MaskPlan zero = make_mask_plan({349, 349, 349}, 0.0, 7);
  CHECK(zero.total_masked() == 0);

  MaskPlan tiny = make_mask_plan({5, 5, 5}, 0.10, 3);
  for (const auto& m : tiny.masked) CHECK(m.size() == 1);  // max(1, floor(0.5))

  MaskPlan again = make_mask_plan({349, 349, 349}, 0.10, 7);
  CHECK(again.masked == plan.masked);

  MaskPlan other = make_mask_plan({349, 349, 349}, 0.10, 8);
  CHECK(other.masked != plan.masked);

  CHECK_THROWS_AS(make_mask_plan({5, 5, 5}, 1.0, 0), std::invalid_argument);
}

TEST_CASE("mask draws are independent across spectrum kinds") {
  MaskPlan plan = make_mask_plan({300, 300, 300}, 0.20, 11);
  CHECK(plan.masked[0] != plan.masked[1]);
  CHECK(plan.masked[1] != plan.masked[2]);
}

TEST_CASE("apply_mask zeroes exactly the planned rows") {
  Spectrum s{SpectrumKind::kRaman, {}};
  s.intensities.resize(30);
  for (std::size_t i = 0; i < 30; ++i) s.intensities[i] = 1.0 + 0.01 * i;
  PatchSequence p = patchify(s, {10, 10});  // 3 patches

  PatchSequence masked = apply_mask(p, {0});
  for (std::size_t k = 0; k < 10; ++k) CHECK(masked.row(0)[k] == 0.0);
  for (std::size_t j = 1; j < 3; ++j) {
    for (std::size_t k = 0; k < 10; ++k) {
      CHECK(masked.row(j)[k] == p.row(j)[k]);  // bit-identical
    }
  }

  PatchSequence untouched = apply_mask(p, {});
  CHECK(untouched.values == p.values);

  PatchSequence all_but_one = apply_mask(p, {0, 2});
  std::size_t nonzero_rows = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    bool nz = false;
    for (std::size_t k = 0; k < 10; ++k) nz = nz || all_but_one.row(j)[k] != 0.0;
    nonzero_rows += nz ? 1 : 0;
  }
  CHECK(nonzero_rows == 1);

  CHECK_THROWS_AS(apply_mask(p, {3}), std::invalid_argument);
}
