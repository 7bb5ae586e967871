#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "hbm/autodiff/optimizer.hpp"
#include "hbm/codec/pipeline.hpp"

namespace hbm::eval {

/// Scalars of one training sample. `loss` is rate / N + lambda * D; the
/// occupancy-refiner term is optimised alongside but reported separately.
struct LossTerms {
  ad::Var objective;
  double loss = 0.0;
  double rate_low = 0.0, rate_high = 0.0, rate_residual = 0.0;  ///< Bits.
  double distortion = 0.0;
  double aux = 0.0;  ///< Occupancy-refiner bits per point.
  size_t points = 0;
};

/// Mean BCE (natural log) of the upsample logits against the true child set.
inline ad::Var mean_bce(const nn::UpsampleResult& r, const CoordSet& truth) {
  const Matrix labels = entropy::occupancy_labels(*r.logits.coords, truth);
  return ad::scale(ad::bce_with_logits(r.logits.feats, labels), 1.0 / static_cast<double>(labels.rows()));
}

/// Teacher-forced forward pass: true coordinate sets drive every pruning
/// step and `prev` is the ground-truth previous frame (null: intra sample).
inline LossTerms frame_loss(nn::Ctx& ctx, const codec::CodecModel& m, const CoordSetPtr& cur,
                            const CoordSetPtr& prev, double lambda, Rng& rng) {
  using codec::Latents;
  ad::Tape& t = ctx.tape;
  const Latents y = codec::extract(ctx, m, cur);
  const CoordSetPtr c3 = y.y3.coords, c2 = y.y2.coords;
  const double n = static_cast<double>(cur->size());

  entropy::OccupancyTrain occ = m.occupancy.train(ctx, c2, rng);
  ad::Var aux = ad::scale(ad::add(occ.latent_bits, occ.mask_bits), 1.0 / n);

  LossTerms out;
  std::vector<ad::Var> rates;
  nn::SparseVar pred{c2, t.constant(Matrix::Zero(static_cast<Eigen::Index>(c2->size()), m.config().y))};
  if (prev) {
    const Latents ref = codec::extract(ctx, m, prev);
    inter::StageResult low = m.low.encode(ctx, ref.y3, y.y3, ref.y2, {c3, c2}, m.unit(8), m.unit(4), &rng);
    inter::StageResult high = m.high.encode(ctx, low.prediction, y.y2, low.prediction, {c2}, m.unit(4), m.unit(4), &rng);
    pred = high.prediction;
    out.rate_low = low.bits.value()(0, 0);
    out.rate_high = high.bits.value()(0, 0);
    rates.push_back(low.bits);
    rates.push_back(high.bits);
  }
  nn::SparseVar z = codec::residual_analysis(ctx, m, nn::sub(y.y2, pred));
  ad::Var zq = entropy::quantize_train(z.feats, rng);
  ad::Var r_res = m.res_prior.bits(t, zq);
  out.rate_residual = r_res.value()(0, 0);
  rates.push_back(r_res);
  nn::SparseVar y_prime = nn::add(pred, codec::residual_synthesis(ctx, m, {c3, zq}, c2));

  const CoordSetPtr half = make_coords(downsample(*cur));
  nn::UpsampleResult a = m.up1.keep_set(ctx, y_prime, half);
  nn::UpsampleResult b = m.up2.keep_set(ctx, a.features, cur);
  ad::Var d = ad::scale(ad::add(mean_bce(a, *half), mean_bce(b, *cur)), 0.5);

  ad::Var rate = ad::scale(ad::add_scalars(rates), 1.0 / n);
  ad::Var loss = ad::add(rate, ad::scale(d, lambda));
  out.objective = ad::add(loss, aux);
  out.loss = loss.value()(0, 0);
  out.distortion = d.value()(0, 0);
  out.aux = aux.value()(0, 0);
  out.points = cur->size();
  return out;
}

struct TrainConfig {
  double lambda = 10.0;
  int epochs = 1;
  long max_steps = 0;  ///< Stop after this many optimiser steps when positive.
  int batch = 4;
  double lr = 1e-3;
  double lr_decay = 0.7;
  int lr_period = 15;  ///< Epochs between decays.
  bool two_stage = true;  ///< Warm up at `warmup_lambda` before switching to `lambda`.
  double warmup_lambda = 20.0;
  int warmup_epochs = 10;
  int intra_period = 4;  ///< Frames t with t % intra_period == 0 also train intra; 0 disables.
  ad::AdamConfig adam;
  uint64_t seed = 1;
};

struct Sample {
  CoordSetPtr cur, prev;  ///< prev null: intra sample.
};

/// Inter samples for every consecutive pair plus intra samples at t = 0 and
/// every `intra_period` frames.
inline std::vector<Sample> make_samples(const std::vector<std::vector<CoordSetPtr>>& sequences, int intra_period) {
  std::vector<Sample> s;
  for (const auto& seq : sequences)
    for (size_t t = 0; t < seq.size(); ++t) {
      if (t == 0 || (intra_period > 0 && t % static_cast<size_t>(intra_period) == 0)) s.push_back({seq[t], nullptr});
      if (t > 0) s.push_back({seq[t], seq[t - 1]});
    }
  return s;
}

struct StepInfo {
  long step = 0;
  int epoch = 0;
  double lambda = 0.0, lr = 0.0;
  double loss = 0.0;  ///< Batch mean of rate / N + lambda * D.
  double bpp = 0.0, distortion = 0.0, aux = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double lambda_for_epoch(const TrainConfig& c, int epoch) {
  return c.two_stage && epoch < c.warmup_epochs ? c.warmup_lambda : c.lambda;
}

/// Adam over shuffled mini-batches; gradients are averaged over the batch.
/// Weights are rounded to storage precision at the end so a saved model
/// reproduces the trained one exactly.
inline void train(codec::CodecModel& m, const std::vector<Sample>& samples, const TrainConfig& c,
                  const std::function<void(const StepInfo&)>& on_step = {}) {
  if (samples.empty()) throw std::invalid_argument("train: no samples");
  if (c.batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  Rng rng(c.seed);
  ad::Adam adam(c.adam);
  std::vector<size_t> order(samples.size());
  long step = 0;
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const double lambda = lambda_for_epoch(c, epoch);
    const double lr = ad::lr_schedule(epoch, c.lr, c.lr_decay, c.lr_period);
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(c.batch)) {
      if (c.max_steps > 0 && step >= c.max_steps) break;
      const size_t e = std::min(order.size(), b + static_cast<size_t>(c.batch));
      const double inv = 1.0 / static_cast<double>(e - b);
      m.store.zero_grad();
      StepInfo info{step, epoch, lambda, lr};
      for (size_t i = b; i < e; ++i) {
        const Sample& s = samples[order[i]];
        ad::Tape tape;
        nn::Ctx ctx(tape);
        LossTerms l;
        try {
          l = frame_loss(ctx, m, s.cur, s.prev, lambda, rng);
        } catch (const std::domain_error& err) {
          throw TrainingDiverged("step " + std::to_string(step) + ": " + err.what());
        }
        if (!std::isfinite(l.objective.value()(0, 0)))
          throw TrainingDiverged("non-finite loss at step " + std::to_string(step));
        tape.backward(ad::scale(l.objective, inv));
        info.loss += inv * l.loss;
        info.bpp += inv * (l.rate_low + l.rate_high + l.rate_residual) / static_cast<double>(l.points);
        info.distortion += inv * l.distortion;
        info.aux += inv * l.aux;
      }
      try {
        adam.step(m.store, lr);
      } catch (const std::runtime_error& err) {
        throw TrainingDiverged(err.what());
      }
      ++step;
      if (on_step) on_step(info);
    }
    if (c.max_steps > 0 && step >= c.max_steps) break;
  }
  ad::round_to_storage_precision(m.store);
}

/// Mean loss at a fixed lambda with a fixed noise seed; no gradients.
inline double evaluate_loss(const codec::CodecModel& m, const std::vector<Sample>& samples, double lambda,
                            uint64_t seed = 12345) {
  Rng rng(seed);
  double total = 0.0;
  for (const auto& s : samples) {
    ad::Tape tape(false);
    nn::Ctx ctx(tape);
    total += frame_loss(ctx, m, s.cur, s.prev, lambda, rng).loss;
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace hbm::eval
