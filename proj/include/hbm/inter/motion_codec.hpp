#pragma once

#include <string>
#include <vector>

#include "hbm/entropy/latent_codec.hpp"
#include "hbm/nn/conv.hpp"

namespace hbm::inter {

/// Initial scale of the motion analysis transform relative to the default init.
inline constexpr double kLatentInitScale = 0.01;

struct CodedLatent {
  nn::SparseVar decoded;      ///< Synthesis output on the requested coordinates.
  ad::Var bits;               ///< Rate estimate (noisy latent in training, integer latent at inference).
  Matrix symbols;             ///< Integer latent (inference only).
  std::vector<uint8_t> payload;
};

/// Stride-2 analysis conv -> quantisation -> factorized entropy model ->
/// stride-2 synthesis deconv targeted at coordinates the decoder already knows.
class MotionCodec {
 public:
  MotionCodec() = default;
  MotionCodec(ad::ParameterStore& store, const std::string& name, int channels, int latent, Rng& rng)
      : enc_(store, name + ".enc", {channels, latent, 2, 2}, rng),
        dec_(store, name + ".dec", {latent, channels, 2, 2, true}, rng),
        prior_(store, name + ".prior", latent) {
    // Latents start near zero: motion side information is cheap until the
    // rate-distortion gradient finds it worth paying for.
    enc_.weight()->value *= kLatentInitScale;
  }

  const entropy::FactorizedModel& prior() const { return prior_; }

  /// Training pass: additive uniform noise replaces rounding.
  CodedLatent train(nn::Ctx& ctx, const nn::SparseVar& e, Rng& rng) const {
    nn::SparseVar z = enc_(ctx, e);
    ad::Var noisy = entropy::quantize_train(z.feats, rng);
    CodedLatent out;
    out.bits = prior_.bits(ctx.tape, noisy);
    out.decoded = dec_.targeted(ctx, {z.coords, noisy}, e.coords);
    return out;
  }

  /// Inference: rounds, entropy codes, and reconstructs through decode().
  CodedLatent encode(nn::Ctx& ctx, const nn::SparseVar& e) const {
    nn::SparseVar z = enc_(ctx, e);
    CodedLatent out = decode_symbols(ctx, entropy::quantize_infer(z.feats.value()), e.coords);
    out.payload = entropy::encode_latent(out.symbols, prior_);
    return out;
  }

  /// Decoder side: `target` is the coordinate set of the embedding; the
  /// latent lives on its stride-2 parents.
  CodedLatent decode(nn::Ctx& ctx, std::span<const uint8_t> payload, const CoordSetPtr& target) const {
    auto latent_coords = make_coords(downsample(*target));
    CodedLatent out = decode_symbols(ctx, entropy::decode_latent(payload, prior_, latent_coords->size()), target,
                                     latent_coords);
    out.payload.assign(payload.begin(), payload.end());
    return out;
  }

 private:
  CodedLatent decode_symbols(nn::Ctx& ctx, Matrix q, const CoordSetPtr& target, CoordSetPtr latent_coords = nullptr) const {
    if (!latent_coords) latent_coords = make_coords(downsample(*target));
    CodedLatent out;
    ad::Var qv = ctx.tape.constant(q);
    out.bits = prior_.bits(ctx.tape, qv);
    out.decoded = dec_.targeted(ctx, {latent_coords, qv}, target);
    out.symbols = std::move(q);
    return out;
  }

  nn::SparseConv enc_;
  nn::SparseDeconv dec_;
  entropy::FactorizedModel prior_;
};

}  // namespace hbm::inter
