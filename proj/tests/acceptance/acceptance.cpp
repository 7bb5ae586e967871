// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
// Exit status is nonzero when any criterion fails. Criteria 3, 10, 11 and 12
// train models and dominate the runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "hbm/autodiff/grad_check.hpp"
#include "hbm/eval/report.hpp"
#include "hbm/eval/synth.hpp"
#include "hbm/eval/train.hpp"
#include "test_support.hpp"

namespace {

using namespace hbm;
using Clock = std::chrono::steady_clock;

// ---- pinned tolerances and budgets ----
constexpr int kCoderTables = 100;
constexpr size_t kCoderSymbols = 1'000'000;
constexpr double kCoderSeconds = 60.0;
constexpr double kRateRelTol = 0.01;
constexpr double kRateAbsBits = 512.0;
constexpr int kRateFrames = 20;
constexpr double kGradTol = 1e-4;
constexpr int kGradTrials = 20;
constexpr double kGradSeconds = 600.0;
constexpr double kDenseTol = 1e-6;
constexpr int kLosslessClouds = 200;
constexpr size_t kLosslessMaxPoints = 50'000;
constexpr double kLosslessSeconds = 300.0;
constexpr double kAwiTol = 1e-9;
constexpr double kAwiExactTol = 1e-4;
constexpr double kMetricTol = 1e-9;
constexpr double kBdHalvedTol = 1e-6;
constexpr long kTrainSteps = 500;
constexpr double kTrainRatio = 0.5;
constexpr double kTrainSeconds = 1800.0;
constexpr int kInterFrames = 8;  // Frames 1..7 are compared: >= 5 P frames.
constexpr double kMonotoneDb = 0.1;
constexpr long kLambdaSteps = 150;  // Fine-tuning steps per lambda from the criterion-10 model.

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int n, const char* name, const Outcome& o) {
  std::printf("[%s] criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// ---- 2: range coder ----

Outcome coder_exactness() {
  const auto t0 = Clock::now();
  Rng rng(2);
  size_t failed = 0;
  for (int table = 0; table < kCoderTables; ++table) {
    const int n = 2 + static_cast<int>(rng.below(1000));
    std::vector<double> p(static_cast<size_t>(n) + 1);
    const double skew = rng.uniform(0.5, 8.0);
    for (auto& v : p) v = std::pow(rng.uniform(), skew);
    double z = 0;
    for (double v : p) z += v;
    for (auto& v : p) v /= z;
    const int32_t lo = static_cast<int32_t>(rng.below(2000)) - 1000;
    const entropy::CdfTable t = entropy::quantize_pmf(lo, p);
    // Symbols follow the table itself; about 0.1% fall outside it (escapes).
    std::vector<int32_t> s(kCoderSymbols);
    for (auto& v : s) {
      const uint64_t r = rng.next();
      if ((r >> 32) % 1000 == 0) v = static_cast<int32_t>(r >> 40) - (1 << 23);
      else {
        const size_t idx = t.lookup(static_cast<uint32_t>(r & (entropy::kProbTotal - 1)));
        v = idx == t.escape() ? t.hi + 1 : t.lo + static_cast<int32_t>(idx);
      }
    }
    entropy::RangeEncoder enc;
    for (int32_t v : s) entropy::encode_symbol(enc, t, v);
    const auto bytes = enc.finish();
    entropy::RangeDecoder dec(bytes);
    for (int32_t v : s)
      if (entropy::decode_symbol(dec, t) != v) ++failed;
    if (dec.overread() != 0) ++failed;
  }
  const double sec = seconds_since(t0);
  return {failed == 0 && sec < kCoderSeconds,
          fmt("%d tables x %zu symbols, %zu failures, %.1f s (limit %.0f s)", kCoderTables, kCoderSymbols, failed, sec,
              kCoderSeconds)};
}

// ---- 4: gradient suite ----

struct GradCase {
  std::string name;
  std::function<ad::GradCheckResult(int trial)> run;
};

ad::Var weighted(ad::Tape& t, const ad::Var& out, uint64_t seed) {
  Rng rng(seed);
  return ad::sum(ad::mul(out, t.constant(rng.uniform_matrix(out.rows(), out.cols(), 0.5, 1.5))));
}

std::vector<ad::Parameter*> all_params(ad::ParameterStore& s, double bias = 0.05) {
  std::vector<ad::Parameter*> out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i].name.ends_with(".b")) s[i].value.setConstant(bias);
    out.push_back(&s[i]);
  }
  return out;
}

std::vector<GradCase> grad_cases() {
  using ad::Tape;
  using ad::Var;
  std::vector<GradCase> c;
  auto op = [&](std::string name, int inputs, Eigen::Index rows, Eigen::Index cols,
                std::function<Var(Tape&, const std::vector<Var>&)> f) {
    c.push_back({name, [=](int trial) {
                   Rng rng(100 + trial);
                   std::vector<Matrix> in;
                   for (int i = 0; i < inputs; ++i) in.push_back(rng.uniform_matrix(rows, cols, -1.5, 1.5));
                   return ad::grad_check([&](Tape& t, const std::vector<Var>& v) { return weighted(t, f(t, v), 1000 + trial); }, in);
                 }});
  };
  op("matmul", 2, 3, 3, [](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); });
  op("elementwise", 2, 3, 2, [](Tape&, const std::vector<Var>& v) { return ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], v[1])); });
  op("sigmoid_tanh", 1, 4, 3, [](Tape&, const std::vector<Var>& v) { return ad::add(ad::sigmoid(v[0]), ad::tanh(v[0])); });
  op("relu", 1, 4, 3, [](Tape&, const std::vector<Var>& v) { return ad::relu(v[0]); });
  op("softmax_attention", 2, 7, 1, [](Tape&, const std::vector<Var>& v) {
    return ad::segment_weighted_sum(ad::segment_softmax(v[0], {0, 3, 3, 7}), ad::concat_cols({v[1], v[0]}), {0, 3, 3, 7});
  });
  op("bce", 1, 4, 2, [](Tape&, const std::vector<Var>& v) {
    Matrix y(4, 2);
    y << 1, 0, 0, 1, 1, 1, 0, 0;
    return ad::bce_with_logits(ad::scale(v[0], 3.0), y);
  });

  auto block = [&](std::string name, size_t sample, auto build) {
    c.push_back({name, [=](int trial) {
                   Rng rng(400 + trial);
                   ad::ParameterStore s;
                   auto [x, fwd] = build(s, rng);
                   auto params = all_params(s);
                   auto f = [&](Tape& t, const std::vector<Var>& in) {
                     nn::Ctx ctx(t);
                     return weighted(t, fwd(ctx, nn::SparseVar{x.coords_ptr(), in[0]}), 900 + trial);
                   };
                   return ad::grad_check(f, {x.features()}, params, 1e-5, sample, trial + 1, 1e-6);
                 }});
  };
  using Fwd = std::function<Var(nn::Ctx&, const nn::SparseVar&)>;
  block("sparse_conv", 0, [](ad::ParameterStore& s, Rng& rng) {
    auto a = std::make_shared<nn::SparseConv>(s, "c1", nn::ConvSpec{2, 3, 3, 1}, rng);
    auto b = std::make_shared<nn::SparseConv>(s, "c2", nn::ConvSpec{3, 2, 2, 2}, rng);
    return std::pair{testing::random_tensor(rng, 15, 4, 2), Fwd([a, b](nn::Ctx& ctx, const nn::SparseVar& v) {
                       return (*b)(ctx, (*a)(ctx, v)).feats;
                     })};
  });
  block("sparse_deconv", 0, [](ad::ParameterStore& s, Rng& rng) {
    auto d = std::make_shared<nn::SparseDeconv>(s, "d", nn::ConvSpec{2, 3, 2, 2, true}, rng);
    return std::pair{testing::random_tensor(rng, 6, 3, 2, 2),
                     Fwd([d](nn::Ctx& ctx, const nn::SparseVar& v) { return d->generative(ctx, v).feats; })};
  });
  block("irn", 200, [](ad::ParameterStore& s, Rng& rng) {
    auto irn = std::make_shared<nn::Irn>(s, "irn", 4, rng);
    return std::pair{testing::random_tensor(rng, 12, 3, 4),
                     Fwd([irn](nn::Ctx& ctx, const nn::SparseVar& v) { return (*irn)(ctx, v).feats; })};
  });
  block("mlp", 0, [](ad::ParameterStore& s, Rng& rng) {
    auto mlp = std::make_shared<nn::Mlp>(s, "mlp", 3, 4, 2, rng);
    return std::pair{testing::random_tensor(rng, 10, 4, 3),
                     Fwd([mlp](nn::Ctx& ctx, const nn::SparseVar& v) { return (*mlp)(ctx.tape, v.feats); })};
  });
  block("mmf_mmr", 80, [](ad::ParameterStore& s, Rng& rng) {
    auto mmf = std::make_shared<inter::Mmf>(s, "f", 2, rng);
    auto mmr = std::make_shared<inter::Mmr>(s, "r", 2, 1, 1, rng);
    return std::pair{testing::random_tensor(rng, 10, 3, 2, 2), Fwd([mmf, mmr](nn::Ctx& ctx, const nn::SparseVar& v) {
                       return (*mmr)(ctx, (*mmf)(ctx, v), {v.coords});
                     })};
  });

  c.push_back({"kabm_attention", [](int trial) {
                 Rng rng(31 + trial);
                 ad::ParameterStore s;
                 inter::KabmConfig cfg;
                 cfg.radius = 2.0;
                 cfg.k = 4;
                 cfg.hidden = 4;
                 cfg.value = 3;
                 cfg.out = 2;
                 inter::Kabm kabm(s, "k", 2, cfg, rng);
                 auto ref = testing::random_tensor(rng, 6, 3, 2, 2), cur = testing::random_tensor(rng, 6, 3, 2, 2);
                 std::vector<ad::Parameter*> params;
                 for (size_t i = 0; i < s.size(); ++i) params.push_back(&s[i]);
                 auto f = [&](Tape& t, const std::vector<Var>& in) {
                   nn::Ctx ctx(t);
                   return weighted(t, kabm(ctx, {ref.coords_ptr(), in[0]}, {cur.coords_ptr(), in[1]}, 2.0).feats, trial);
                 };
                 // Softmax shift invariance zeroes the score-bias gradients;
                 // the 1e-6 floor keeps their roundoff out of the ratio.
                 return ad::grad_check(f, {ref.features(), cur.features()}, params, 1e-5, 60, trial + 1, 1e-6);
               }});
  c.push_back({"warp", [](int trial) {
                 Rng rng(60 + trial);
                 auto coords = make_coords(testing::random_coords(rng, 8, 10), 1);
                 Matrix p = rng.uniform_matrix(static_cast<Eigen::Index>(coords->size()), 6, -2, 2);
                 auto f = [&](Tape& t, const std::vector<Var>& in) { return weighted(t, inter::warp(t, *coords, in[0]), trial); };
                 return ad::grad_check(f, {p});
               }});
  c.push_back({"awi3d_flows_features", [](int trial) {
                 Rng rng(21 + trial);
                 auto ref = testing::random_tensor(rng, 12, 4, 2, 2);
                 Matrix p = rng.uniform_matrix(6, 6, 0.3, 7.7);
                 const double unit = trial % 2 ? 2.0 : 1.0;
                 auto f = [&](Tape& t, const std::vector<Var>& in) {
                   return weighted(t, inter::awi3d(t, in[0], {ref.coords_ptr(), in[1]}, 3.0, unit), trial);
                 };
                 return ad::grad_check(f, {p, ref.features()}, {}, 1e-6);
               }});
  auto factorized = [&](std::string name, bool rate) {
    c.push_back({name, [rate](int trial) {
                   Rng rng(50 + trial);
                   ad::ParameterStore s;
                   entropy::FactorizedModel m(s, "f", 2, 4.0);
                   auto& v = m.parameter()->value;
                   v += rng.uniform_matrix(v.rows(), v.cols(), -0.5, 0.5);
                   Matrix y = rng.uniform_matrix(6, 2, -4, 4);
                   auto f = [&](Tape& t, const std::vector<Var>& in) {
                     return rate ? m.bits(t, in[0]) : weighted(t, m.cdf(t, in[0]), trial);
                   };
                   return ad::grad_check(f, {y}, {m.parameter()});
                 }});
  };
  factorized("rate", true);
  factorized("factorized_cdf", false);
  return c;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::string worst;
  double worst_err = 0.0;
  bool ok = true;
  size_t cases = 0;
  for (const auto& gc : grad_cases()) {
    ++cases;
    for (int trial = 0; trial < kGradTrials; ++trial) {
      const auto r = gc.run(trial);
      if (r.checked == 0 || !(r.max_rel_error <= kGradTol)) ok = false;
      if (!(r.max_rel_error <= worst_err)) {
        worst_err = r.max_rel_error;
        worst = gc.name;
      }
    }
  }
  const double sec = seconds_since(t0);
  return {ok && sec < kGradSeconds, fmt("%zu operators x %d inputs, max rel err %.2e (%s, limit %.0e), %.1f s (limit %.0f s)",
                                        cases, kGradTrials, worst_err, worst.c_str(), kGradTol, sec, kGradSeconds)};
}

// ---- 5: dense-oracle equivalence ----

Outcome dense_equivalence() {
  double worst = 0.0;
  int runs = 0;
  for (int kernel : {2, 3})
    for (int stride : {1, 2})
      for (bool full : {true, false})
        for (int trial = 0; trial < 3; ++trial) {
          Rng rng(500 + 10 * kernel + stride + 100 * full + 1000 * trial);
          ad::ParameterStore s;
          nn::SparseConv conv(s, "c", {3, 4, kernel, stride}, rng);
          nn::SparseDeconv deconv(s, "d", {3, 4, kernel, stride, true}, rng);
          s.at("c.b").value = rng.uniform_matrix(1, 4, -1, 1);
          s.at("d.b").value = rng.uniform_matrix(1, 4, -1, 1);
          const int extent = 8 / stride;  // Deconv outputs stay inside 8^3.
          auto grid = [&](int n, int32_t st) {
            std::vector<Coord> pts;
            if (full) {
              for (int z = 0; z < n; ++z)
                for (int y = 0; y < n; ++y)
                  for (int x = 0; x < n; ++x) pts.push_back(Coord{x, y, z} * st);
            } else {
              for (auto& p : testing::random_coords(rng, static_cast<size_t>(n * n * n / 4 + 1), n)) pts.push_back(p * st);
            }
            return make_coords(std::move(pts), st);
          };
          ad::Tape t(false);
          nn::Ctx ctx(t);
          auto cin = grid(8, 1);
          SparseTensor x(cin, rng.uniform_matrix(static_cast<Eigen::Index>(cin->size()), 3, -1, 1));
          SparseTensor y = conv(ctx, nn::constant(t, x)).value();
          Matrix want = testing::dense_conv(x, s.at("c.w").value, s.at("c.b").value.row(0), kernel, y.coords());
          worst = std::max(worst, (y.features() - want).cwiseAbs().maxCoeff());

          auto din = grid(extent, stride);
          SparseTensor xd(din, rng.uniform_matrix(static_cast<Eigen::Index>(din->size()), 3, -1, 1));
          SparseTensor yd = deconv.generative(ctx, nn::constant(t, xd)).value();
          Matrix wd = testing::dense_deconv(xd, s.at("d.w").value, s.at("d.b").value.row(0), kernel, 1, yd.coords());
          worst = std::max(worst, (yd.features() - wd).cwiseAbs().maxCoeff());
          runs += 2;
        }
  return {worst <= kDenseTol, fmt("%d conv/deconv runs (kernels 2,3; strides 1,2; full and random 8^3), max abs diff %.2e (limit %.0e)",
                                  runs, worst, kDenseTol)};
}

// ---- 6: lossless coordinate chains ----

CoordSetPtr random_cloud(Rng& rng, size_t n) {
  std::vector<Coord> pts;
  pts.reserve(n);
  if (rng.below(2)) {
    for (auto& c : testing::random_coords(rng, n, 1024)) pts.push_back(c);
  } else {
    // Thin shell: the dense-surface regime the codec is built for.
    const double r = rng.uniform(50, 500);
    for (size_t i = 0; i < n; ++i) {
      double v[3] = {rng.normal(), rng.normal(), rng.normal()};
      const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) + 1e-12;
      pts.push_back({static_cast<int32_t>(511.5 + r * v[0] / len), static_cast<int32_t>(511.5 + r * v[1] / len),
                     static_cast<int32_t>(511.5 + r * v[2] / len)});
    }
  }
  return make_coords(std::move(pts), 1);
}

Outcome lossless_chains() {
  const auto t0 = Clock::now();
  Rng rng(6);
  ad::ParameterStore store;
  const codec::ModelConfig cfg;
  entropy::OccupancyRefiner refiner(store, "occ", cfg.occ_hidden, cfg.occ_latent, rng);
  int octree_bad = 0, occ_bad = 0;
  size_t largest = 0;
  for (int i = 0; i < kLosslessClouds; ++i) {
    const size_t n = 1 + rng.below(kLosslessMaxPoints);
    const CoordSetPtr cloud = random_cloud(rng, i == 0 ? kLosslessMaxPoints : n);
    largest = std::max(largest, cloud->size());
    if (!(entropy::octree_decode(entropy::octree_encode(*cloud, 10), 10) == *cloud)) ++octree_bad;
    const auto half = make_coords(downsample(*cloud));
    const auto s4 = make_coords(downsample(*half));
    const auto s8 = make_coords(downsample(*s4));
    ad::Tape t(false);
    nn::Ctx ctx(t);
    const auto p = refiner.encode(ctx, s8, s4);
    if (!(*refiner.decode(ctx, s8, p.latent, p.mask) == *s4)) ++occ_bad;
  }
  const double sec = seconds_since(t0);
  return {octree_bad == 0 && occ_bad == 0 && sec < kLosslessSeconds,
          fmt("%d clouds (largest %zu points, 10-bit): octree failures %d, occupancy failures %d, %.1f s (limit %.0f s)",
              kLosslessClouds, largest, octree_bad, occ_bad, sec, kLosslessSeconds)};
}

// ---- 7: closed loop ----

Outcome closed_loop() {
  codec::ModelConfig cfg;
  codec::CodecModel m(cfg);
  int frames = 0, intra = 0, inter = 0, bad = 0;
  for (auto kind : {eval::SynthKind::RigidTranslate, eval::SynthKind::RigidRotate, eval::SynthKind::TwoBlobArticulate,
                    eval::SynthKind::BreathingSphere}) {
    eval::SynthParams p;
    p.kind = kind;
    p.frames = 5;
    p.bit_depth = 8;
    p.points = 1500;
    const auto seq = eval::synth_sequence(p);
    const auto enc = codec::encode_sequence(m, seq, 3, p.bit_depth);
    const auto dec = codec::decode_sequence(m, codec::SequenceBitstream::parse(enc.stream.serialize()));
    for (size_t i = 0; i < seq.size(); ++i) {
      ++frames;
      (enc.frames[i].bits.type == codec::FrameType::Intra ? intra : inter)++;
      const bool same = *enc.frames[i].recon == *dec[i].recon && enc.frames[i].trace.y_prime == dec[i].trace.y_prime &&
                        *enc.frames[i].trace.c2 == *dec[i].trace.c2;
      if (!same) ++bad;
    }
  }
  return {bad == 0 && intra > 0 && inter > 0,
          fmt("%d frames (%d I, %d P) over 4 sequence kinds: %d mismatches in coordinates or features", frames, intra,
              inter, bad)};
}

// ---- 8: 3DAWI ----

double awi_single(const std::vector<Coord>& refs, const std::vector<double>& feats, const Vec3& p, double unit) {
  ad::Tape t(false);
  auto rc = make_coords(refs, 1);
  Matrix f(static_cast<Eigen::Index>(rc->size()), 1);
  for (size_t i = 0; i < refs.size(); ++i) f(rc->find(refs[i]), 0) = feats[i];
  Matrix w(1, 3);
  w << p[0], p[1], p[2];
  return inter::awi3d(t, t.constant(w), {rc, t.constant(f)}, 3.0, unit).value()(0, 0);
}

Outcome awi_cases() {
  const double a = awi_single({{0, 0, 0}, {0, 0, 1}, {0, 0, 3}}, {1, 2, 4}, {0, 0, -1}, 2.0);
  const double b = awi_single({{20, 0, 0}, {0, 20, 0}, {0, 0, 20}}, {1, 2, 4}, {0, 0, 0}, 2.0);
  Rng rng(8);
  auto x = testing::random_tensor(rng, 200, 10, 8, 2);
  ad::Tape t(false);
  ad::Var warped = inter::warp(t, x.coords(), t.constant(Matrix::Zero(static_cast<Eigen::Index>(x.size()), 24)));
  const double exact = (inter::awi3d(t, warped, nn::constant(t, x), 3.0, 2.0).value() - x.features()).cwiseAbs().maxCoeff();
  const double ea = std::abs(a - 12.0 / 7.0), eb = std::abs(b - 0.7 / 3.0);
  return {ea <= kAwiTol && eb <= kAwiTol && exact <= kAwiExactTol,
          fmt("12/7 case %.9f (err %.1e), 0.7/3 case %.9f (err %.1e), zero-flow max diff %.1e (limit %.0e)", a, ea, b, eb,
              exact, kAwiExactTol)};
}

// ---- 9: metric oracles ----

Outcome metric_oracles() {
  Rng rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    CoordSet a(testing::random_coords(rng, 100, 24), 1), b(testing::random_coords(rng, 60 + rng.below(40), 24), 1);
    const double peak = 255, s = 3 * peak * peak;
    const double d1 = 10 * std::log10(s / std::max(testing::brute_mse(a, b, false), testing::brute_mse(b, a, false)));
    const double d2 = 10 * std::log10(s / std::max(testing::brute_mse(a, b, true), testing::brute_mse(b, a, true)));
    worst = std::max({worst, std::abs(eval::d1_psnr(a, b, peak) - d1), std::abs(eval::d2_psnr(a, b, peak) - d2)});
  }
  const std::vector<eval::RdPoint> anchor{{0.1, 60}, {0.2, 64}, {0.4, 68}, {0.8, 71}};
  std::vector<eval::RdPoint> halved = anchor;
  for (auto& p : halved) p.bpp *= 0.5;
  const double same = eval::bd_rate(anchor, anchor), half = eval::bd_rate(anchor, halved);
  return {worst <= kMetricTol && same == 0.0 && std::abs(half + 50.0) <= kBdHalvedTol,
          fmt("D1/D2 vs brute force max diff %.1e (limit %.0e); BD-rate identical %.6g%%, halved %.9f%%", worst,
              kMetricTol, same, half)};
}

// ---- training criteria ----

eval::SynthParams toy_params(uint64_t seed) {
  eval::SynthParams p;
  p.kind = eval::SynthKind::RigidTranslate;
  p.frames = kInterFrames;
  p.bit_depth = 8;
  p.points = 2000;
  p.seed = seed;
  return p;
}

eval::TrainConfig toy_train(double lambda, long steps) {
  eval::TrainConfig c;
  c.lambda = lambda;
  c.epochs = 1 << 20;
  c.max_steps = steps;
  // An epoch of the toy corpus is 3 steps; decaying every 15 of them would
  // shrink lr 50x within 500 steps, so the decay is kept out of the run.
  c.lr_period = 1 << 20;
  return c;
}

struct Trained {
  std::unique_ptr<codec::CodecModel> model;
  double initial = 0.0, final = 0.0, seconds = 0.0;
};

Trained train_toy() {
  const auto t0 = Clock::now();
  Trained out;
  out.model = std::make_unique<codec::CodecModel>(codec::ModelConfig{});
  const auto samples = eval::make_samples({eval::synth_sequence(toy_params(1))}, 4);
  const auto cfg = toy_train(10.0, kTrainSteps);
  out.initial = eval::evaluate_loss(*out.model, samples, cfg.lambda);
  eval::train(*out.model, samples, cfg);
  out.final = eval::evaluate_loss(*out.model, samples, cfg.lambda);
  out.seconds = seconds_since(t0);
  return out;
}

Outcome training_reduces_loss(const Trained& t) {
  const double ratio = t.final / t.initial;
  return {ratio <= kTrainRatio && t.seconds < kTrainSeconds,
          fmt("%ld steps on rigid-translate (8-bit, ~2k points): loss %.4f -> %.4f, ratio %.3f (limit %.2f), %.0f s (limit %.0f s)",
              kTrainSteps, t.initial, t.final, ratio, kTrainRatio, t.seconds, kTrainSeconds)};
}

Outcome rate_fidelity(const codec::CodecModel& m) {
  auto p = toy_params(5);
  p.frames = kRateFrames;
  const auto enc = codec::encode_sequence(m, eval::synth_sequence(p), 4, p.bit_depth);
  struct Acc {
    const char* name;
    codec::StreamId id;
    double worst = 0.0;  // Largest |actual - estimate| / allowance.
    int frames = 0;
  };
  std::vector<Acc> acc{{"occ-latent", codec::StreamId::OccLatent}, {"occ-mask", codec::StreamId::OccMask},
                       {"flow-low", codec::StreamId::FlowLow},     {"flow-high", codec::StreamId::FlowHigh},
                       {"residual", codec::StreamId::Residual}};
  for (const auto& f : enc.frames) {
    const double est[] = {f.occ_latent_estimate, f.occ_mask_estimate, f.flow_low_estimate, f.flow_high_estimate,
                          f.residual_estimate};
    for (size_t s = 0; s < acc.size(); ++s) {
      if (!f.bits.has(acc[s].id)) continue;
      const double actual = static_cast<double>(f.bits.stream_bits(acc[s].id));
      acc[s].worst = std::max(acc[s].worst, std::abs(actual - est[s]) / (kRateRelTol * est[s] + kRateAbsBits));
      ++acc[s].frames;
    }
  }
  bool ok = true;
  std::string detail = fmt("%d frames; worst |actual - estimate| / (1%% est + 512 bits):", kRateFrames);
  for (const auto& a : acc) {
    ok = ok && a.frames > 0 && a.worst <= 1.0;
    detail += fmt(" %s %.3f (%d frames)", a.name, a.worst, a.frames);
  }
  return {ok, detail};
}

Outcome inter_utility(const codec::CodecModel& m) {
  const auto p = toy_params(5);
  const auto seq = eval::synth_sequence(p);
  const auto intra = codec::encode_sequence(m, seq, 1, p.bit_depth);
  const auto inter = codec::encode_sequence(m, seq, kInterFrames + 1, p.bit_depth);
  double bi = 0, bp = 0;
  int n = 0;
  for (size_t i = 1; i < seq.size(); ++i, ++n) {
    bi += codec::frame_rate(intra.frames[i].bits).total();
    bp += codec::frame_rate(inter.frames[i].bits).total();
  }
  bi /= n;
  bp /= n;
  return {bp < bi, fmt("slow rigid translation (1 voxel/frame), frames 1..%d: P %.4f bpp vs I %.4f bpp", n, bp, bi)};
}

Outcome rd_monotonicity(const codec::CodecModel& base) {
  const auto samples = eval::make_samples({eval::synth_sequence(toy_params(1))}, 4);
  const auto held = toy_params(5);
  const auto seq = eval::synth_sequence(held);
  std::vector<double> bpp, d1;
  std::string detail;
  for (double lambda : {5.0, 10.0, 15.0}) {
    auto m = codec::CodecModel::deserialize(base.serialize());
    auto cfg = toy_train(lambda, kLambdaSteps);
    cfg.two_stage = false;
    eval::train(*m, samples, cfg);
    const auto enc = codec::encode_sequence(*m, seq, 4, held.bit_depth);
    const auto curve = eval::rd_curve(eval::rd_rows(enc, seq, lambda));
    bpp.push_back(curve[0].bpp);
    d1.push_back(curve[0].psnr);
    detail += fmt("%slambda %.0f: %.4f bpp, D1 %.3f dB", detail.empty() ? "" : "; ", lambda, curve[0].bpp, curve[0].psnr);
  }
  const bool rate_up = bpp[0] < bpp[1] && bpp[1] < bpp[2];
  const bool dist_ok = d1[1] >= d1[0] - kMonotoneDb && d1[2] >= d1[1] - kMonotoneDb;
  return {rate_up && dist_ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments restrict the run to the listed criteria.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return only.empty() || only.count(n) > 0; };
  if (want(1))
    std::printf("[N/A ] criterion 1 (full-scale BD-rate): not reproducible at desk scale; the reported -9.96%%/-9.75%% "
                "vs D-DPCC and -88.80%% vs V-PCC need full training and evaluation on 8iVFB and Owlii, so criteria 2-12 "
                "stand in for it\n");
  if (want(2)) report(2, "entropy-coder exactness", coder_exactness());
  if (want(4)) report(4, "gradient suite", gradient_suite());
  if (want(5)) report(5, "dense-oracle equivalence", dense_equivalence());
  if (want(6)) report(6, "lossless chains", lossless_chains());
  if (want(7)) report(7, "closed-loop codec", closed_loop());
  if (want(8)) report(8, "3DAWI analytic cases", awi_cases());
  if (want(9)) report(9, "metric oracles", metric_oracles());
  if (want(3) || want(10) || want(11) || want(12)) {
    const Trained t = train_toy();
    if (want(10)) report(10, "desk-scale training", training_reduces_loss(t));
    if (want(3)) report(3, "rate-estimate fidelity", rate_fidelity(*t.model));
    if (want(11)) report(11, "inter-prediction utility", inter_utility(*t.model));
    if (want(12)) report(12, "RD monotonicity", rd_monotonicity(*t.model));
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
