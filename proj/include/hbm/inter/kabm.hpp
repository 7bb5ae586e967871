#pragma once

#include <string>

#include "hbm/geometry/neighbors.hpp"
#include "hbm/nn/conv.hpp"

namespace hbm::inter {

struct KabmConfig {
  double radius = 3.0;  ///< Ball radius in units of `unit`.
  int k = 16;
  int hidden = 32;      ///< Hidden width of every MLP.
  int value = 32;       ///< Width of attention value vectors.
  int out = 32;         ///< Flow-embedding width.
};

/// One attention stage over a neighbour list: per-neighbour attributes
/// [delta / unit (3), distance / unit (1), neighbour features] feed a score MLP
/// (softmax over the neighbourhood) and a value MLP; the output row is the
/// attention-weighted sum of values. Queries with no neighbours get zero rows.
inline ad::Var attend(ad::Tape& t, const NeighborList& nl, const ad::Var& ref_feats, const nn::Mlp& score,
                      const nn::Mlp& value, double unit) {
  const Eigen::Index e = static_cast<Eigen::Index>(nl.index.size());
  Matrix attrs(e, 4);
  for (Eigen::Index j = 0; j < e; ++j) {
    attrs(j, 0) = nl.delta[j][0] / unit;
    attrs(j, 1) = nl.delta[j][1] / unit;
    attrs(j, 2) = nl.delta[j][2] / unit;
    attrs(j, 3) = nl.distance[j] / unit;
  }
  ad::Var a = ad::concat_cols({t.constant(std::move(attrs)), ad::gather_rows(ref_feats, nl.index)});
  ad::Var w = ad::segment_softmax(score(t, a), nl.offsets);
  return ad::segment_weighted_sum(w, value(t, a), nl.offsets);
}

/// KNN-attention block matching. Stage 1 attends over the union support of
/// reference and current tensors, stage 2 gathers stage-1 outputs onto the
/// current coordinates, and a channel-aggregation MLP yields the flow embedding.
class Kabm {
 public:
  Kabm() = default;
  Kabm(ad::ParameterStore& store, const std::string& name, int channels, KabmConfig cfg, Rng& rng)
      : cfg_(cfg), channels_(channels) {
    const int a1 = 4 + 2 * channels, a2 = 4 + cfg.value;
    score1_ = nn::Mlp(store, name + ".s1.score", a1, cfg.hidden, 1, rng);
    value1_ = nn::Mlp(store, name + ".s1.value", a1, cfg.hidden, cfg.value, rng);
    score2_ = nn::Mlp(store, name + ".s2.score", a2, cfg.hidden, 1, rng);
    value2_ = nn::Mlp(store, name + ".s2.value", a2, cfg.hidden, cfg.value, rng);
    agg_ = nn::Mlp(store, name + ".agg", cfg.value, cfg.hidden, cfg.out, rng);
  }

  const KabmConfig& config() const { return cfg_; }

  /// Flow embedding e_o on C(cur). `unit` scales the radius and attributes
  /// (1 for voxel units, the tensor stride for stride units).
  nn::SparseVar operator()(nn::Ctx& ctx, const nn::SparseVar& ref, const nn::SparseVar& cur, double unit) const {
    if (ref.stride() != cur.stride()) throw std::invalid_argument("kabm: stride mismatch");
    if (ref.channels() != channels_ || cur.channels() != channels_) throw std::invalid_argument("kabm: channel mismatch");
    nn::SparseVar u = nn::concat_union(ref, cur);
    const double r = cfg_.radius * unit;
    const NeighborList n1 = ball_knn(*u.coords, *u.coords, r, cfg_.k);
    ad::Var h1 = attend(ctx.tape, n1, u.feats, score1_, value1_, unit);
    const NeighborList n2 = ball_knn(*cur.coords, *u.coords, r, cfg_.k);
    ad::Var h2 = attend(ctx.tape, n2, h1, score2_, value2_, unit);
    return {cur.coords, agg_(ctx.tape, h2)};
  }

 private:
  KabmConfig cfg_;
  int channels_ = 0;
  nn::Mlp score1_, value1_, score2_, value2_, agg_;
};

}  // namespace hbm::inter
