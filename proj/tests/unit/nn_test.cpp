#include <gtest/gtest.h>

#include <algorithm>

#include "hbm/autodiff/grad_check.hpp"
#include "hbm/nn/blocks.hpp"
#include "test_support.hpp"

namespace hbm::nn {
namespace {

using hbm::testing::dense_conv;
using hbm::testing::dense_deconv;

SparseTensor run(const std::function<SparseVar(Ctx&, const SparseVar&)>& f, const SparseTensor& x) {
  ad::Tape t(false);
  Ctx ctx(t);
  return f(ctx, constant(t, x)).value();
}

Matrix param(ad::ParameterStore& s, const std::string& n) { return s.at(n).value; }

SparseTensor relu_t(const SparseTensor& x) { return SparseTensor(x.coords_ptr(), x.features().cwiseMax(0.0)); }

SparseTensor oracle_conv(ad::ParameterStore& s, const std::string& n, const SparseTensor& x, int k,
                         CoordSetPtr out = nullptr) {
  if (!out) out = x.coords_ptr();
  return SparseTensor(out, dense_conv(x, param(s, n + ".w"), param(s, n + ".b"), k, *out));
}

std::vector<Coord> full_grid(int n) {
  std::vector<Coord> c;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) c.push_back({x, y, z});
  return c;
}

TEST(SparseConv, IdentityKernel) {
  ad::ParameterStore s;
  Rng rng(1);
  SparseConv conv(s, "c", {2, 2, 3}, rng);
  s.at("c.w").value.setZero();
  s.at("c.w").value.middleRows(13 * 2, 2) = Matrix::Identity(2, 2);
  auto x = testing::random_tensor(rng, 30, 5, 2);
  auto y = run([&](Ctx& c, const SparseVar& v) { return conv(c, v); }, x);
  EXPECT_EQ(y.coords(), x.coords());
  EXPECT_EQ(y.features(), x.features());
}

TEST(SparseConv, AllOnesStrideOne) {
  ad::ParameterStore s;
  Rng rng(1);
  SparseConv conv(s, "c", {1, 1, 3}, rng);
  s.at("c.w").value.setOnes();
  Matrix f(2, 1);
  f << 1, 2;
  SparseTensor x(make_coords({{0, 0, 0}, {1, 0, 0}}, 1), f);
  auto y = run([&](Ctx& c, const SparseVar& v) { return conv(c, v); }, x);
  EXPECT_EQ(y.row({0, 0, 0})(0), 3.0);
  EXPECT_EQ(y.row({1, 0, 0})(0), 3.0);
}

TEST(SparseConv, AllOnesStrideTwo) {
  for (int k : {2, 3}) {
    ad::ParameterStore s;
    Rng rng(1);
    SparseConv conv(s, "c", {1, 1, k, 2}, rng);
    s.at("c.w").value.setOnes();
    SparseTensor x(make_coords({{0, 0, 0}, {1, 1, 1}}, 1), Matrix::Ones(2, 1));
    auto y = run([&](Ctx& c, const SparseVar& v) { return conv(c, v); }, x);
    ASSERT_EQ(y.size(), 1u);
    EXPECT_EQ(y.coords()[0], (Coord{0, 0, 0}));
    EXPECT_EQ(y.stride(), 2);
    EXPECT_EQ(y.features()(0, 0), 2.0);
  }
}

TEST(SparseConv, WrongChannelCountThrows) {
  ad::ParameterStore s;
  Rng rng(1);
  SparseConv conv(s, "c", {3, 2, 3}, rng);
  auto x = testing::random_tensor(rng, 5, 4, 2);
  EXPECT_THROW(run([&](Ctx& c, const SparseVar& v) { return conv(c, v); }, x), std::invalid_argument);
}

struct DenseCase {
  int kernel, stride;
  bool full;
  int32_t in_stride;
};

class DenseEquivalence : public ::testing::TestWithParam<DenseCase> {};

TEST_P(DenseEquivalence, ConvMatchesDenseOracle) {
  const auto p = GetParam();
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(10 + trial);
    ad::ParameterStore s;
    SparseConv conv(s, "c", {3, 4, p.kernel, p.stride}, rng);
    s.at("c.b").value = rng.uniform_matrix(1, 4, -1, 1);
    std::vector<Coord> pts = p.full ? full_grid(8) : testing::random_coords(rng, 120, 8);
    for (auto& c : pts) c = c * p.in_stride;
    auto coords = make_coords(pts, p.in_stride);
    SparseTensor x(coords, rng.uniform_matrix(static_cast<Eigen::Index>(coords->size()), 3, -1, 1));
    auto y = run([&](Ctx& c, const SparseVar& v) { return conv(c, v); }, x);
    auto want = dense_conv(x, param(s, "c.w"), param(s, "c.b"), p.kernel, y.coords());
    EXPECT_LE((y.features() - want).cwiseAbs().maxCoeff(), 1e-6);
    if (p.stride == 2) {
      EXPECT_EQ(y.coords(), downsample(x.coords()));
    }
  }
}

TEST_P(DenseEquivalence, DeconvMatchesDenseOracle) {
  const auto p = GetParam();
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(20 + trial);
    ad::ParameterStore s;
    SparseDeconv deconv(s, "d", {3, 4, p.kernel, p.stride, true}, rng);
    s.at("d.b").value = rng.uniform_matrix(1, 4, -1, 1);
    const int32_t in_stride = p.in_stride * p.stride;
    std::vector<Coord> pts = p.full ? full_grid(4) : testing::random_coords(rng, 30, 4);
    for (auto& c : pts) c = c * in_stride;
    auto coords = make_coords(pts, in_stride);
    SparseTensor x(coords, rng.uniform_matrix(static_cast<Eigen::Index>(coords->size()), 3, -1, 1));
    auto y = run([&](Ctx& c, const SparseVar& v) { return deconv.generative(c, v); }, x);
    auto want = dense_deconv(x, param(s, "d.w"), param(s, "d.b"), p.kernel, p.in_stride, y.coords());
    EXPECT_LE((y.features() - want).cwiseAbs().maxCoeff(), 1e-6);

    // Targeted mode on a subset agrees with the generative rows.
    std::vector<Coord> sub;
    for (size_t i = 0; i < y.size(); i += 3) sub.push_back(y.coords()[i]);
    auto target = make_coords(sub, p.in_stride);
    auto yt = run([&](Ctx& c, const SparseVar& v) { return deconv.targeted(c, v, target); }, x);
    EXPECT_EQ(yt.features(), prune(y, *target).features());
  }
}

INSTANTIATE_TEST_SUITE_P(Grids, DenseEquivalence,
                         ::testing::Values(DenseCase{3, 1, true, 1}, DenseCase{3, 1, false, 1},
                                           DenseCase{3, 1, false, 4}, DenseCase{2, 2, true, 1},
                                           DenseCase{2, 2, false, 1}, DenseCase{2, 2, false, 2},
                                           DenseCase{3, 2, true, 1}, DenseCase{3, 2, false, 1},
                                           DenseCase{1, 1, false, 1}));

TEST(SparseDeconv, OnePointOnesKernelGivesEightCopies) {
  ad::ParameterStore s;
  Rng rng(1);
  SparseDeconv d(s, "d", {2, 2, 2, 2, true}, rng);
  s.at("d.w").value.setZero();
  for (int k = 0; k < 8; ++k) s.at("d.w").value.middleRows(k * 2, 2) = Matrix::Identity(2, 2);
  Matrix f(1, 2);
  f << 0.25, -3.0;
  SparseTensor x(make_coords({{4, 8, 12}}, 4), f);
  auto y = run([&](Ctx& c, const SparseVar& v) { return d.generative(c, v); }, x);
  ASSERT_EQ(y.size(), 8u);
  EXPECT_EQ(y.stride(), 2);
  for (size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(y.features().row(i), f);
    EXPECT_EQ(floor_to_stride(y.coords()[i], 4), (Coord{4, 8, 12}));
  }
}

TEST(SparseDeconv, EmptyInputAndUnreachableTarget) {
  ad::ParameterStore s;
  Rng rng(1);
  SparseDeconv d(s, "d", {1, 1, 2, 2, true}, rng);
  SparseTensor empty(make_coords({}, 2), Matrix(0, 1));
  EXPECT_EQ(run([&](Ctx& c, const SparseVar& v) { return d.generative(c, v); }, empty).size(), 0u);
  SparseTensor one(make_coords({{0, 0, 0}}, 2), Matrix::Ones(1, 1));
  auto far = make_coords({{6, 0, 0}}, 1);
  EXPECT_THROW(run([&](Ctx& c, const SparseVar& v) { return d.targeted(c, v, far); }, one), std::invalid_argument);
}

TEST(SparseDeconv, DownThenTargetedBackStaysInsideChildren) {
  ad::ParameterStore s;
  Rng rng(2);
  SparseConv down(s, "down", {1, 2, 2, 2}, rng);
  SparseDeconv up(s, "up", {2, 1, 2, 2, true}, rng);
  auto x = testing::random_tensor(rng, 60, 16, 1);
  ad::Tape t(false);
  Ctx ctx(t);
  auto xv = constant(t, x);
  auto y = down(ctx, xv);
  auto back = up.targeted(ctx, y, x.coords_ptr());
  auto kids = generative_children(*y.coords, 1, 2);
  for (const auto& c : *back.coords) EXPECT_GE(kids.find(c), 0);
  EXPECT_EQ(*back.coords, x.coords());
}

TEST(Irn, ZeroWeightsIsIdentity) {
  ad::ParameterStore s;
  Rng rng(3);
  Irn irn(s, "irn", 4, rng);
  for (size_t i = 0; i < s.size(); ++i) s[i].value.setZero();
  auto x = testing::random_tensor(rng, 20, 5, 4);
  auto y = run([&](Ctx& c, const SparseVar& v) { return irn(c, v); }, x);
  EXPECT_EQ(y.coords(), x.coords());
  EXPECT_EQ(y.features(), x.features());
}

TEST(Irn, SinglePointKeepsCoordinates) {
  ad::ParameterStore s;
  Rng rng(3);
  Irn irn(s, "irn", 2, rng);
  SparseTensor x(make_coords({{3, 1, 2}}, 1), Matrix::Ones(1, 2));
  EXPECT_EQ(run([&](Ctx& c, const SparseVar& v) { return irn(c, v); }, x).coords(), x.coords());
}

TEST(Irn, MatchesDenseBranchOracle) {
  ad::ParameterStore s;
  Rng rng(4);
  Irn irn(s, "irn", 4, rng);
  for (size_t i = 0; i < s.size(); ++i)
    if (s[i].name.ends_with(".b")) s[i].value = rng.uniform_matrix(1, s[i].value.cols(), -0.5, 0.5);
  auto x = testing::random_tensor(rng, 60, 6, 4);
  auto a = oracle_conv(s, "irn.a2", relu_t(oracle_conv(s, "irn.a1", x, 1)), 3);
  auto b = oracle_conv(s, "irn.b3", relu_t(oracle_conv(s, "irn.b2", relu_t(oracle_conv(s, "irn.b1", x, 1)), 3)), 1);
  Matrix want(x.size(), 4);
  want << a.features(), b.features();
  want += x.features();
  auto y = run([&](Ctx& c, const SparseVar& v) { return irn(c, v); }, x);
  EXPECT_LE((y.features() - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Irn, OddChannelsOrMismatchThrow) {
  ad::ParameterStore s;
  Rng rng(1);
  EXPECT_THROW(Irn(s, "a", 3, rng), std::invalid_argument);
  Irn irn(s, "b", 4, rng);
  auto x = testing::random_tensor(rng, 3, 4, 2);
  EXPECT_THROW(run([&](Ctx& c, const SparseVar& v) { return irn(c, v); }, x), std::invalid_argument);
}

TEST(DownsampleBlock, FullCubeHalvesResolution) {
  ad::ParameterStore s;
  Rng rng(5);
  DownsampleBlock blk(s, "down", 1, 4, 6, rng);
  auto x = occupancy_tensor(make_coords(full_grid(8), 1));
  auto y = run([&](Ctx& c, const SparseVar& v) { return blk(c, v); }, x);
  EXPECT_EQ(y.size(), 64u);
  EXPECT_EQ(y.stride(), 2);
  EXPECT_EQ(y.channels(), 6);
}

TEST(DownsampleBlock, TwoBlocksOnTenBitCloudGiveStrideFour) {
  ad::ParameterStore s;
  Rng rng(6);
  DownsampleBlock b1(s, "d1", 1, 2, 2, rng), b2(s, "d2", 2, 2, 2, rng);
  std::vector<Coord> pts = testing::random_coords(rng, 300, 1024);
  auto x = occupancy_tensor(make_coords(pts, 1));
  auto y = run([&](Ctx& c, const SparseVar& v) { return b2(c, b1(c, v)); }, x);
  std::vector<Coord> oracle;
  for (const auto& c : x.coords()) oracle.push_back({c.x / 4 * 4, c.y / 4 * 4, c.z / 4 * 4});
  EXPECT_EQ(y.coords(), CoordSet(oracle, 4));
}

TEST(TopK, TiesBrokenByRowOrder) {
  Matrix l(5, 1);
  l << 1, 3, 3, 0, 3;
  EXPECT_EQ(top_k_rows(l, 2), (std::vector<int32_t>{1, 2}));
  EXPECT_EQ(top_k_rows(l, 1), (std::vector<int32_t>{1}));
  EXPECT_EQ(top_k_rows(l, 9).size(), 5u);
}

TEST(UpsampleBlock, KeepCountsAndArgmax) {
  ad::ParameterStore s;
  Rng rng(7);
  UpsampleBlock up(s, "up", 2, 4, 2, rng);
  auto x = testing::random_tensor(rng, 6, 4, 2, 2);
  ad::Tape t(false);
  Ctx ctx(t);
  auto xv = constant(t, x);
  const size_t cands = up.candidates(xv)->size();
  for (size_t keep : {size_t{0}, size_t{1}, size_t{5}, cands, cands + 3}) {
    auto r = up(ctx, xv, keep);
    EXPECT_EQ(r.features.size(), std::min(keep, cands));
    EXPECT_EQ(r.keep_clamped, keep > cands);
    EXPECT_EQ(r.logits.size(), cands);
    // Surviving set equals a sort oracle on the logits.
    std::vector<std::pair<double, Coord>> all;
    const Matrix& lv = r.logits.feats.value();
    for (size_t i = 0; i < cands; ++i) all.push_back({lv(i, 0), (*r.logits.coords)[i]});
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Coord> want;
    for (size_t i = 0; i < std::min(keep, cands); ++i) want.push_back(all[i].second);
    EXPECT_EQ(*r.features.coords, CoordSet(want, 1));
  }
}

TEST(Mlp, ZeroIdentityAndMatrixOracle) {
  ad::ParameterStore s;
  Rng rng(8);
  Mlp mlp(s, "mlp", 3, 3, 3, rng);
  Matrix x = rng.uniform_matrix(4, 3, 0.1, 1.0);
  auto eval = [&] {
    ad::Tape t(false);
    return Matrix(mlp(t, t.constant(x)).value());
  };
  s.at("mlp.fc1.w").value.setZero();
  s.at("mlp.fc2.w").value.setZero();
  EXPECT_TRUE(eval().isZero(0.0));
  s.at("mlp.fc1.w").value.setIdentity();
  s.at("mlp.fc2.w").value.setIdentity();
  EXPECT_EQ(eval(), x);
  for (const char* n : {"mlp.fc1.w", "mlp.fc1.b", "mlp.fc2.w", "mlp.fc2.b"})
    s.at(n).value = rng.uniform_matrix(s.at(n).value.rows(), s.at(n).value.cols(), -1, 1);
  Matrix h = ((x * s.at("mlp.fc1.w").value).rowwise() + s.at("mlp.fc1.b").value.row(0)).cwiseMax(0.0);
  Matrix want = (h * s.at("mlp.fc2.w").value).rowwise() + s.at("mlp.fc2.b").value.row(0);
  EXPECT_LE((eval() - want).cwiseAbs().maxCoeff(), 1e-12);
}

/// Gradient check of a block w.r.t. its input features and all parameters.
template <class F>
void check_block(ad::ParameterStore& s, const SparseTensor& x, F&& block, size_t max_components = 0) {
  std::vector<ad::Parameter*> params;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i].name.ends_with(".b")) s[i].value = Matrix::Constant(1, s[i].value.cols(), 0.05);
    params.push_back(&s[i]);
  }
  auto f = [&](ad::Tape& t, const std::vector<ad::Var>& in) {
    Ctx ctx(t);
    SparseVar out = block(ctx, SparseVar{x.coords_ptr(), in[0]});
    Rng rng(77);
    return ad::sum(ad::mul(out.feats, t.constant(rng.uniform_matrix(out.feats.rows(), out.feats.cols(), 0.5, 1.5))));
  };
  auto r = ad::grad_check(f, {x.features()}, params, 1e-5, max_components);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(BlockGradients, ConvDeconvIrnDownUpResMlp) {
  Rng rng(9);
  {
    ad::ParameterStore s;
    SparseConv c(s, "c", {2, 3, 3, 1}, rng);
    check_block(s, testing::random_tensor(rng, 15, 4, 2), [&](Ctx& ctx, const SparseVar& v) { return c(ctx, v); });
  }
  {
    ad::ParameterStore s;
    SparseConv c(s, "c", {2, 3, 2, 2}, rng);
    check_block(s, testing::random_tensor(rng, 15, 4, 2), [&](Ctx& ctx, const SparseVar& v) { return c(ctx, v); });
  }
  {
    ad::ParameterStore s;
    SparseDeconv d(s, "d", {2, 3, 2, 2, true}, rng);
    check_block(s, testing::random_tensor(rng, 6, 3, 2, 2),
                [&](Ctx& ctx, const SparseVar& v) { return d.generative(ctx, v); });
  }
  {
    ad::ParameterStore s;
    Irn irn(s, "irn", 4, rng);
    check_block(s, testing::random_tensor(rng, 12, 3, 4), [&](Ctx& ctx, const SparseVar& v) { return irn(ctx, v); },
                300);
  }
  {
    ad::ParameterStore s;
    ResBlock rb(s, "rb", 2, rng);
    check_block(s, testing::random_tensor(rng, 12, 3, 2), [&](Ctx& ctx, const SparseVar& v) { return rb(ctx, v); });
  }
  {
    ad::ParameterStore s;
    DownsampleBlock db(s, "db", 1, 2, 3, rng);
    check_block(s, testing::random_tensor(rng, 20, 4, 1), [&](Ctx& ctx, const SparseVar& v) { return db(ctx, v); },
                300);
  }
  {
    ad::ParameterStore s;
    UpsampleBlock ub(s, "ub", 2, 2, 2, rng);
    check_block(s, testing::random_tensor(rng, 4, 3, 2, 2),
                [&](Ctx& ctx, const SparseVar& v) {
                  auto r = ub(ctx, v, 12);
                  return SparseVar{r.features.coords,
                                   ad::concat_cols({r.features.feats, ad::gather_rows(r.logits.feats, std::vector<int32_t>(r.features.size(), 0))})};
                },
                300);
  }
  {
    ad::ParameterStore s;
    Mlp mlp(s, "mlp", 3, 4, 2, rng);
    check_block(s, testing::random_tensor(rng, 10, 4, 3),
                [&](Ctx& ctx, const SparseVar& v) { return SparseVar{v.coords, mlp(ctx.tape, v.feats)}; });
  }
}

}  // namespace
}  // namespace hbm::nn
