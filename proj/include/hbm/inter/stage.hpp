#pragma once

#include <string>
#include <vector>

#include "hbm/inter/awi3d.hpp"
#include "hbm/inter/kabm.hpp"
#include "hbm/inter/mmf.hpp"
#include "hbm/inter/mmr.hpp"
#include "hbm/inter/motion_codec.hpp"

namespace hbm::inter {

struct StageConfig {
  int channels = 64;      ///< Feature width of y2 / y3.
  int latent = 8;         ///< Flow latent width.
  int levels = 1;         ///< Stride halvings from the fused embedding to C(y2).
  double alpha = 3.0;
  KabmConfig kabm;
};

struct StageResult {
  nn::SparseVar prediction;  ///< Compensated features on the finest chain set.
  MotionField flow;
  ad::Var bits;              ///< Flow rate estimate.
  Matrix symbols;            ///< Integer flow latent (inference).
  std::vector<uint8_t> payload;
};

/// One Hie-ME/MC stage: KABM -> MMF -> motion codec -> MMR -> warp -> 3DAWI.
/// Distances inside KABM and 3DAWI are divided by `unit` (the tensor stride
/// in stride units, 1 in voxel units).
class InterStage {
 public:
  InterStage() = default;
  InterStage(ad::ParameterStore& store, const std::string& name, StageConfig cfg, Rng& rng) : cfg_(cfg) {
    const int e = cfg.kabm.out;
    kabm_ = Kabm(store, name + ".kabm", cfg.channels, cfg.kabm, rng);
    mmf_ = Mmf(store, name + ".mmf", e, rng);
    codec_ = MotionCodec(store, name + ".codec", e, cfg.latent, rng);
    mmr_ = Mmr(store, name + ".mmr", e, cfg.channels, cfg.levels, rng);
  }

  const StageConfig& config() const { return cfg_; }
  const MotionCodec& codec() const { return codec_; }

  /// Encoder side. `rng` non-null selects training (noisy latent, no payload).
  /// `chain` runs from the stride of the KABM inputs down to the prediction set.
  StageResult encode(nn::Ctx& ctx, const nn::SparseVar& ref, const nn::SparseVar& cur, const nn::SparseVar& awi_ref,
                     const std::vector<CoordSetPtr>& chain, double kabm_unit, double awi_unit, Rng* rng) const {
    nn::SparseVar e = mmf_(ctx, kabm_(ctx, ref, cur, kabm_unit));
    CodedLatent z = rng ? codec_.train(ctx, e, *rng) : codec_.encode(ctx, e);
    return finish(ctx, std::move(z), awi_ref, chain, awi_unit);
  }

  /// Decoder side: rebuilds the stage output from the payload and the fused
  /// embedding coordinates (the stride-2 parents of the KABM target set).
  StageResult decode(nn::Ctx& ctx, std::span<const uint8_t> payload, const CoordSetPtr& embed_coords,
                     const nn::SparseVar& awi_ref, const std::vector<CoordSetPtr>& chain, double awi_unit) const {
    return finish(ctx, codec_.decode(ctx, payload, embed_coords), awi_ref, chain, awi_unit);
  }

 private:
  StageResult finish(nn::Ctx& ctx, CodedLatent z, const nn::SparseVar& awi_ref, const std::vector<CoordSetPtr>& chain,
                     double awi_unit) const {
    StageResult r;
    const CoordSetPtr& target = chain.back();
    r.flow = {target, mmr_(ctx, z.decoded, chain)};
    ad::Var warped = warp(ctx.tape, *target, r.flow.flows);
    r.prediction = {target, awi3d(ctx.tape, warped, awi_ref, cfg_.alpha, awi_unit)};
    r.bits = z.bits;
    r.symbols = std::move(z.symbols);
    r.payload = std::move(z.payload);
    return r;
  }

  StageConfig cfg_;
  Kabm kabm_;
  Mmf mmf_;
  MotionCodec codec_;
  Mmr mmr_;
};

}  // namespace hbm::inter
