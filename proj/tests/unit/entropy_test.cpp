#include <gtest/gtest.h>

#include <cmath>

#include "hbm/autodiff/grad_check.hpp"
#include "hbm/entropy/factorized.hpp"
#include "hbm/entropy/latent_codec.hpp"
#include "hbm/entropy/occupancy.hpp"
#include "hbm/entropy/octree.hpp"
#include "test_support.hpp"

namespace hbm::entropy {
namespace {

void randomize(FactorizedModel& m, Rng& rng, double spread) {
  auto& v = m.parameter()->value;
  v += rng.uniform_matrix(v.rows(), v.cols(), -spread, spread);
}

std::vector<int32_t> code_roundtrip(const std::vector<int32_t>& s, const CdfTable& t, size_t* bytes = nullptr) {
  RangeEncoder enc;
  for (int32_t v : s) encode_symbol(enc, t, v);
  auto out = enc.finish();
  if (bytes) *bytes = out.size();
  RangeDecoder dec(out);
  std::vector<int32_t> back;
  for (size_t i = 0; i < s.size(); ++i) back.push_back(decode_symbol(dec, t));
  EXPECT_EQ(dec.overread(), 0u);
  return back;
}

TEST(Quantize, HalfAwayFromZero) {
  EXPECT_EQ(round_half_away(1.4), 1.0);
  EXPECT_EQ(round_half_away(-2.5), -3.0);
  EXPECT_EQ(round_half_away(2.5), 3.0);
  Matrix x(1, 3);
  x << 0.5, -0.5, -0.49;
  Matrix q = quantize_infer(x);
  EXPECT_EQ(q(0, 0), 1.0);
  EXPECT_EQ(q(0, 1), -1.0);
  EXPECT_EQ(q(0, 2), 0.0);
}

TEST(Quantize, TrainingNoiseStaysInHalfOpenInterval) {
  Rng rng(1);
  ad::Tape t(false);
  Matrix x = Matrix::Constant(1000, 1000, 0.3);
  auto y = quantize_train(t.constant(x), rng);
  const Matrix d = y.value() - x;
  EXPECT_GE(d.minCoeff(), -0.5);
  EXPECT_LT(d.maxCoeff(), 0.5);
  EXPECT_NEAR(d.mean(), 0.0, 2e-3);
}

TEST(EstimateBits, KnownLikelihoods) {
  EXPECT_DOUBLE_EQ(bits_from_likelihoods(Matrix::Constant(1, 1, 0.5)), 1.0);
  EXPECT_DOUBLE_EQ(bits_from_likelihoods(Matrix::Constant(1, 1, 0.25)), 2.0);
  size_t clamped = 0;
  EXPECT_DOUBLE_EQ(bits_from_likelihoods(Matrix::Constant(1, 2, 0.0), &clamped), 128.0);
  EXPECT_EQ(clamped, 2u);
}

TEST(EstimateBits, ModelMatchesSummationOracle) {
  ad::ParameterStore s;
  Rng rng(2);
  FactorizedModel m(s, "f", 3);
  randomize(m, rng, 0.5);
  Matrix y = quantize_infer(rng.uniform_matrix(50, 3, -8, 8));
  ad::Tape t(false);
  const double got = m.bits(t, t.constant(y)).value()(0, 0);
  double want = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 50; ++r) want -= std::log2(m.cdf(c, y(r, c) + 0.5) - m.cdf(c, y(r, c) - 0.5));
  EXPECT_NEAR(got, want, 1e-12 * std::abs(want) + 1e-9);
}

TEST(FactorizedModel, MonotoneCdfForRandomParameters) {
  Rng rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    ad::ParameterStore s;
    FactorizedModel m(s, "f", 1);
    randomize(m, rng, 2.0);
    double a = rng.uniform(-30, 30), b = rng.uniform(-30, 30);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    ASSERT_LT(m.logit(0, a), m.logit(0, b));
    ASSERT_LE(m.cdf(0, a), m.cdf(0, b));
  }
}

TEST(FactorizedModel, LimitsAndNonnegativePmf) {
  ad::ParameterStore s;
  Rng rng(4);
  FactorizedModel m(s, "f", 2);
  randomize(m, rng, 1.0);
  for (int c = 0; c < 2; ++c) {
    EXPECT_LT(m.cdf(c, -1e4), 1e-6);
    EXPECT_GT(m.cdf(c, 1e4), 1 - 1e-6);
    for (int n = -20; n <= 20; ++n) EXPECT_GE(m.pmf(c, n), 0.0);
  }
}

TEST(FactorizedModel, GradientsWrtSymbolsAndParameters) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(50 + trial);
    ad::ParameterStore s;
    FactorizedModel m(s, "f", 2, 4.0);
    randomize(m, rng, 0.5);
    Matrix y = rng.uniform_matrix(6, 2, -4, 4);
    auto rate = [&](ad::Tape& t, const std::vector<ad::Var>& in) { return m.bits(t, in[0]); };
    auto r1 = ad::grad_check(rate, {y}, {m.parameter()});
    EXPECT_LE(r1.max_rel_error, 1e-4) << "rate trial " << trial;
    auto cdf = [&](ad::Tape& t, const std::vector<ad::Var>& in) {
      Rng w(9);
      return ad::sum(ad::mul(m.cdf(t, in[0]), t.constant(w.uniform_matrix(6, 2, 0.5, 1.5))));
    };
    auto r2 = ad::grad_check(cdf, {y}, {m.parameter()});
    EXPECT_LE(r2.max_rel_error, 1e-4) << "cdf trial " << trial;
  }
}

TEST(CdfTable, SymmetricInitSplitsMassAtZero) {
  ad::ParameterStore s;
  FactorizedModel m(s, "f", 1);
  auto t = m.table(0, -30, 30);
  // The escape symbol holds both tails, half of it below zero.
  const double below = t.cum[30] + t.freq(30) / 2.0 + t.freq(t.escape()) / 2.0;
  EXPECT_NEAR(below / kProbTotal, 0.5, 1e-3);
  EXPECT_NEAR(m.cdf(0, 0.0), 0.5, 1e-15);
}

TEST(CdfTable, FloorOfOneOnWidestRange) {
  ad::ParameterStore s;
  FactorizedModel m(s, "f", 1, 1.0);
  auto t = m.table(0, kTableLo, kTableHi);
  EXPECT_EQ(t.symbols(), 4096u);
  EXPECT_EQ(t.cum.back(), kProbTotal);
  for (size_t i = 0; i <= t.symbols(); ++i) EXPECT_GE(t.freq(i), 1u);
}

TEST(RangeCoder, UniformBinary) {
  auto t = quantize_pmf(0, {0.5, 0.5, 0.0});
  std::vector<int32_t> s{0, 1, 1, 0};
  EXPECT_EQ(code_roundtrip(s, t), s);
}

TEST(RangeCoder, SkewedSourceNearEntropy) {
  auto t = quantize_pmf(0, {0.01, 0.99, 0.0});
  Rng rng(5);
  std::vector<int32_t> s;
  for (int i = 0; i < 1000; ++i) s.push_back(rng.uniform() < 0.99 ? 1 : 0);
  double entropy_bits = 0;
  for (int32_t v : s) entropy_bits -= std::log2(v ? 0.99 : 0.01);
  size_t bytes = 0;
  EXPECT_EQ(code_roundtrip(s, t, &bytes), s);
  EXPECT_LE(static_cast<double>(bytes), entropy_bits / 8 + 32);
}

TEST(RangeCoder, EmptyStream) {
  RangeEncoder enc;
  EXPECT_TRUE(enc.finish().empty());
  RangeDecoder dec(std::span<const uint8_t>{});
  EXPECT_EQ(dec.overread(), 0u);
}

TEST(RangeCoder, RandomTablesWithEscapes) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(300));
    std::vector<double> p(static_cast<size_t>(n) + 1);
    for (auto& v : p) v = std::pow(rng.uniform(), 4.0);
    double z = 0;
    for (double v : p) z += v;
    for (auto& v : p) v /= z;
    const int32_t lo = static_cast<int32_t>(rng.below(100)) - 50;
    auto t = quantize_pmf(lo, p);
    std::vector<int32_t> s;
    for (int i = 0; i < 20000; ++i) {
      if (rng.below(50) == 0) s.push_back(static_cast<int32_t>(rng.next()));
      else s.push_back(lo + static_cast<int32_t>(rng.below(static_cast<uint64_t>(n))));
    }
    ASSERT_EQ(code_roundtrip(s, t), s);
  }
}

TEST(LatentCodec, RoundTripMatchesEstimate) {
  ad::ParameterStore s;
  Rng rng(7);
  FactorizedModel m(s, "f", 4, 6.0);
  randomize(m, rng, 0.3);
  // Draw symbols from the model itself via inverse CDF.
  const int rows = 4000;
  Matrix q(rows, 4);
  for (int c = 0; c < 4; ++c)
    for (int r = 0; r < rows; ++r) {
      const double u = rng.uniform();
      int n = -200;
      while (n < 200 && m.cdf(c, n + 0.5) < u) ++n;
      q(r, c) = n;
    }
  auto bytes = encode_latent(q, m);
  EXPECT_EQ(decode_latent(bytes, m, rows), q);
  ad::Tape t(false);
  const double est = m.bits(t, t.constant(q)).value()(0, 0);
  const double actual = 8.0 * static_cast<double>(bytes.size() - StreamHeader::kSize);
  EXPECT_LE(std::abs(actual - est), 0.01 * est + 64 * 8);
}

TEST(LatentCodec, EscapesAndEmptyAndCountMismatch) {
  ad::ParameterStore s;
  FactorizedModel m(s, "f", 2);
  Matrix q(3, 2);
  q << 0, 5000, -7000, 1, 2, -3;
  auto bytes = encode_latent(q, m);
  EXPECT_EQ(decode_latent(bytes, m, 3), q);
  EXPECT_THROW(decode_latent(bytes, m, 4), FormatError);
  Matrix empty(0, 2);
  auto eb = encode_latent(empty, m);
  EXPECT_EQ(eb.size(), StreamHeader::kSize);
  EXPECT_EQ(decode_latent(eb, m, 0).rows(), 0);
}

TEST(Octree, SinglePointIsOneHotPerLevel) {
  CoordSet one({{0, 0, 0}}, 1);
  auto occ = octree_occupancy_bytes(one, 10);
  ASSERT_EQ(occ.size(), 10u);
  for (uint8_t b : occ) EXPECT_EQ(b, 0x01);
  CoordSet corner({{1, 0, 1}}, 1);
  EXPECT_EQ(octree_occupancy_bytes(corner, 1), (std::vector<uint8_t>{1u << 5}));
  auto bytes = octree_encode(one, 10);
  EXPECT_EQ(octree_decode(bytes, 10), one);
}

TEST(Octree, FullUnitCubeIsOneFullByte) {
  std::vector<Coord> pts;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) pts.push_back({x, y, z});
  EXPECT_EQ(octree_occupancy_bytes(CoordSet(pts, 1), 1), (std::vector<uint8_t>{0xFF}));
}

TEST(Octree, FullCubeBeatsBitmap) {
  std::vector<Coord> pts;
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) pts.push_back({x, y, z});
  CoordSet cube(pts, 1);
  auto bytes = octree_encode(cube, 4);
  EXPECT_LE(bytes.size(), 4096u / 8);
  EXPECT_EQ(octree_decode(bytes, 4), cube);
}

TEST(Octree, RandomCloudsRoundTrip) {
  Rng rng(8);
  for (size_t n : {size_t{1}, size_t{17}, size_t{1000}, size_t{50000}}) {
    CoordSet c(testing::random_coords(rng, n, 1024), 1);
    EXPECT_EQ(octree_decode(octree_encode(c, 10), 10), c);
  }
  CoordSet strided(testing::random_coords(rng, 500, 128, 8), 8);
  EXPECT_EQ(octree_decode(octree_encode(strided, 7), 7, 8), strided);
}

TEST(Octree, RejectsOutOfRangeAndTruncation) {
  EXPECT_THROW(octree_encode(CoordSet({{1024, 0, 0}}, 1), 10), std::invalid_argument);
  EXPECT_THROW(octree_encode(CoordSet({{-1, 0, 0}}, 1), 10), std::invalid_argument);
  Rng rng(9);
  CoordSet c(testing::random_coords(rng, 2000, 256), 1);
  auto bytes = octree_encode(c, 8);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(octree_decode(bytes, 8), FormatError);
}

TEST(OccupancyMask, HalfProbabilityCostsOneBitPerCandidate) {
  Rng rng(4);
  std::vector<uint8_t> bits(4000);
  for (auto& b : bits) b = static_cast<uint8_t>(rng.below(2));
  Matrix logits = Matrix::Zero(4000, 1);
  auto payload = encode_mask(bits, logits);
  const double coder_bits = 8.0 * (payload.size() - StreamHeader::kSize);
  EXPECT_NEAR(coder_bits, 4000.0, 8 * 8);
  EXPECT_EQ(decode_mask(payload, logits), bits);
  EXPECT_EQ(occupied_frequency(0.0), 1u);
  EXPECT_EQ(occupied_frequency(1.0), kProbTotal - 1);
  EXPECT_EQ(occupied_frequency(0.5), kProbTotal / 2);
}

struct RefinerFixture {
  ad::ParameterStore store;
  Rng rng{21};
  OccupancyRefiner refiner{store, "occ", 4, 2, rng};
};

CoordSetPtr surface_cloud(Rng& rng, size_t n, int32_t extent) {
  std::vector<Coord> pts;
  for (size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(0, 2 * M_PI), b = rng.uniform(0, M_PI);
    const double r = extent * 0.45;
    pts.push_back({static_cast<int32_t>(extent / 2 + r * std::cos(a) * std::sin(b)),
                   static_cast<int32_t>(extent / 2 + r * std::sin(a) * std::sin(b)),
                   static_cast<int32_t>(extent / 2 + r * std::cos(b))});
  }
  return make_coords(std::move(pts), 1);
}

/// Stride-4 and stride-8 sets of a cloud, as the feature extractor produces them.
std::pair<CoordSetPtr, CoordSetPtr> parent_sets(const CoordSet& full) {
  auto half = make_coords(downsample(full));
  auto s4 = make_coords(downsample(*half));
  auto s8 = make_coords(downsample(*s4));
  return {s4, s8};
}

TEST(OccupancyRefiner, RoundTripIsLosslessAndMaskMatchesBce) {
  RefinerFixture f;
  Rng rng(5);
  auto [fine, coarse] = parent_sets(*surface_cloud(rng, 3000, 256));
  ad::Tape t(false);
  nn::Ctx ctx(t);
  OccupancyPayload p = f.refiner.encode(ctx, coarse, fine);
  CoordSetPtr back = f.refiner.decode(ctx, coarse, p.latent, p.mask);
  EXPECT_EQ(*back, *fine);
  const double mask_bits = 8.0 * (p.mask.size() - StreamHeader::kSize);
  EXPECT_LE(std::abs(mask_bits - p.mask_estimate), 0.01 * p.mask_estimate + 64 * 8);
  const double latent_bits = 8.0 * (p.latent.size() - StreamHeader::kSize);
  EXPECT_LE(std::abs(latent_bits - p.latent_estimate), 0.01 * p.latent_estimate + 64 * 8);
}

TEST(OccupancyRefiner, RejectsSetsOutsideTheCandidates) {
  RefinerFixture f;
  auto fine = make_coords({{0, 0, 0}, {4, 0, 0}}, 4);
  auto wrong = make_coords({{8, 0, 0}}, 8);
  ad::Tape t(false);
  nn::Ctx ctx(t);
  EXPECT_THROW(f.refiner.encode(ctx, wrong, fine), std::invalid_argument);
}

TEST(OccupancyRefiner, TrainingRatesAreFiniteAndDifferentiable) {
  RefinerFixture f;
  Rng rng(6);
  auto [fine, coarse] = parent_sets(*surface_cloud(rng, 800, 128));
  ad::Tape t;
  nn::Ctx ctx(t);
  Rng noise(1);
  OccupancyTrain tr = f.refiner.train(ctx, fine, noise);
  ad::Var total = ad::add(tr.latent_bits, tr.mask_bits);
  EXPECT_TRUE(std::isfinite(total.value()(0, 0)));
  f.store.zero_grad();
  t.backward(total);
  double g = 0.0;
  for (size_t i = 0; i < f.store.size(); ++i) g += f.store[i].grad.cwiseAbs().sum();
  EXPECT_GT(g, 0.0);
}

}  // namespace
}  // namespace hbm::entropy
