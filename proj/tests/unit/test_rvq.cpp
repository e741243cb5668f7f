#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "enclap/rvq.hpp"

using namespace enclap::codec;

namespace {

std::vector<Codebook> random_codebooks(std::size_t n, std::size_t v, std::size_t d, std::mt19937_64& rng,
                                       bool zero_entry) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Codebook> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(v * d);
    for (auto& x : e) x = normal(rng);
    if (zero_entry) std::fill(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(d), 0.0);
    out.emplace_back(v, d, std::move(e));
  }
  return out;
}

// Per-stage exhaustive search written against a table of all distances.
std::vector<std::int64_t> oracle_codes(std::vector<double> r, const std::vector<Codebook>& cbs) {
  std::vector<std::int64_t> codes;
  for (const auto& cb : cbs) {
    std::vector<double> dist(cb.size);
    for (std::size_t v = 0; v < cb.size; ++v) {
      double s = 0.0;
      for (std::size_t j = 0; j < cb.dim; ++j) s += (r[j] - cb.entries[v * cb.dim + j]) * (r[j] - cb.entries[v * cb.dim + j]);
      dist[v] = s;
    }
    const auto best = static_cast<std::size_t>(std::min_element(dist.begin(), dist.end()) - dist.begin());
    codes.push_back(static_cast<std::int64_t>(best));
    for (std::size_t j = 0; j < cb.dim; ++j) r[j] -= cb.entries[best * cb.dim + j];
  }
  return codes;
}

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("single-stage nearest neighbour") {
  const std::vector<Codebook> cbs{Codebook(2, 2, {0.0, 0.0, 1.0, 1.0})};
  const std::vector<double> x{0.9, 1.1};
  const auto q = rvq_quantize(x, cbs);
  REQUIRE(q.codes.size() == 1);
  CHECK(q.codes[0] == 1);
  CHECK(q.residual[0] == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(q.residual[1] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("ties go to the lowest index") {
  const std::vector<Codebook> cbs{Codebook(3, 1, {1.0, -1.0, 1.0})};
  const std::vector<double> x{0.0};
  CHECK(rvq_quantize(x, cbs).codes[0] == 0);
}

TEST_CASE("exact quantisation leaves zero residual") {
  const std::vector<Codebook> cbs{Codebook(3, 2, {0.5, -0.25, 2.0, 3.0, 1.0, 1.0}),
                                  Codebook(2, 2, {7.0, 7.0, 0.0, 0.0})};
  const std::vector<double> x{2.0, 3.0};
  const auto q = rvq_quantize(x, cbs);
  CHECK(q.codes == std::vector<std::int64_t>{1, 1});
  CHECK(q.residual == std::vector<double>{0.0, 0.0});
}

TEST_CASE("matches the brute-force oracle on random inputs") {
  std::mt19937_64 rng(2024);
  const auto cbs = random_codebooks(3, 8, 4, rng, false);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(4);
    for (auto& v : x) v = normal(rng);
    const auto q = rvq_quantize(x, cbs);
    CHECK(q.codes == oracle_codes(x, cbs));
    const auto back = rvq_dequantize(q.codes, cbs);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(back[j] - (x[j] - q.residual[j])) <= 1e-12);
  }
}

TEST_CASE("residual norms never grow when every codebook holds the zero vector") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cbs = random_codebooks(4, 16, 6, rng, true);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> x(6);
      for (auto& v : x) v = normal(rng);
      std::vector<double> trace;
      rvq_quantize_trace(x, cbs, trace);
      double prev = norm(x);
      for (std::size_t n = 0; n < cbs.size(); ++n) {
        const double cur = norm(std::span<const double>(trace).subspan(n * 6, 6));
        CHECK(cur <= prev);
        prev = cur;
      }
    }
  }
}

TEST_CASE("dequantize") {
  std::mt19937_64 rng(5);
  const auto cbs = random_codebooks(3, 5, 3, rng, false);
  const std::vector<Codebook> first{cbs[0]};
  const std::vector<std::int64_t> one{4};
  const auto e = rvq_dequantize(one, first);
  CHECK(std::equal(e.begin(), e.end(), cbs[0].entry(4).begin()));

  const std::vector<std::int64_t> codes{2, 0, 3};
  const auto sum = rvq_dequantize(codes, cbs);
  for (std::size_t j = 0; j < 3; ++j) {
    long double acc = 0.0L;
    for (std::size_t n = 0; n < 3; ++n) acc += cbs[n].entries[static_cast<std::size_t>(codes[n]) * 3 + j];
    CHECK(std::abs(sum[j] - static_cast<double>(acc)) <= 1e-14);
  }

  const std::vector<std::int64_t> bad{2, 5, 0};
  CHECK_THROWS_AS(rvq_dequantize(bad, cbs), std::out_of_range);
  const std::vector<std::int64_t> neg{-1, 0, 0};
  CHECK_THROWS_AS(rvq_dequantize(neg, cbs), std::out_of_range);
}

TEST_CASE("dimension and construction errors") {
  std::mt19937_64 rng(1);
  const auto cbs = random_codebooks(2, 4, 3, rng, true);
  const std::vector<double> x{1.0, 2.0};
  CHECK_THROWS_AS(rvq_quantize(x, cbs), std::invalid_argument);
  CHECK_THROWS_AS(Codebook(1, 2, {0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(Codebook(2, 2, {0.0, 0.0, 1.0}), std::invalid_argument);
}

TEST_CASE("code matrix rows and columns") {
  CodeMatrix cm;
  cm.num_codebooks = 2;
  cm.length = 3;
  cm.codes = {1, 2, 3, 4, 5, 6};
  CHECK(cm.at(1, 0) == 4);
  const auto row = cm.row(0);
  CHECK(std::vector<std::int64_t>(row.begin(), row.end()) == std::vector<std::int64_t>{1, 2, 3});
  CHECK(cm.column(2) == std::vector<std::int64_t>{3, 6});
}
