#pragma once

#include <string>
#include <vector>

#include "hbm/inter/awi3d.hpp"
#include "hbm/nn/conv.hpp"

namespace hbm::inter {

/// Row of the stride-`parent_stride` ancestor of every coordinate in `target`.
inline std::vector<int32_t> parent_rows(const CoordSet& parents, const CoordSet& target) {
  std::vector<int32_t> rows(target.size());
  for (size_t i = 0; i < target.size(); ++i) {
    rows[i] = parents.find(floor_to_stride(target[i], parents.stride()));
    if (rows[i] < 0) throw std::invalid_argument("mmr: target coordinate has no parent in the embedding");
  }
  return rows;
}

/// Initial scale of the flow-emitting layers relative to the default init.
inline constexpr double kFlowInitScale = 0.01;

/// Multi-scale motion reconstruction, mirroring Mmf. Fine path: targeted
/// stride-2 deconvs down a chain of known coordinate sets (ReLU between), the
/// last emitting 3C channels. Coarse path: nearest-parent unpooling onto the
/// final target followed by a per-row linear map to 3C. Flows are the sum.
class Mmr {
 public:
  Mmr() = default;
  /// `levels` is the number of stride halvings from the embedding to the target.
  Mmr(ad::ParameterStore& store, const std::string& name, int embed, int channels, int levels, Rng& rng)
      : levels_(levels) {
    if (levels < 1) throw std::invalid_argument("mmr: at least one level");
    for (int l = 0; l < levels; ++l) {
      const int out = l + 1 == levels ? 3 * channels : embed;
      fine_.emplace_back(store, name + ".fine" + std::to_string(l), nn::ConvSpec{embed, out, 2, 2, true}, rng);
    }
    coarse_ = nn::Linear(store, name + ".coarse", embed, 3 * channels, rng);
    // Both flow heads start near zero so an untrained stage predicts the
    // co-located reference features instead of a random warp.
    fine_.back().weight()->value *= kFlowInitScale;
    coarse_.weight()->value *= kFlowInitScale;
  }

  int levels() const { return levels_; }

  /// `chain` lists the coordinate sets at each halved stride, finest last.
  ad::Var operator()(nn::Ctx& ctx, const nn::SparseVar& e, const std::vector<CoordSetPtr>& chain) const {
    if (static_cast<int>(chain.size()) != levels_) throw std::invalid_argument("mmr: chain length");
    nn::SparseVar h = e;
    for (int l = 0; l < levels_; ++l) {
      h = fine_[l].targeted(ctx, h, chain[l]);
      if (l + 1 < levels_) h = nn::relu(h);
    }
    ad::Var coarse = ad::gather_rows(coarse_(ctx.tape, e.feats), parent_rows(*e.coords, *chain.back()));
    return ad::add(h.feats, coarse);
  }

 private:
  int levels_ = 0;
  std::vector<nn::SparseDeconv> fine_;
  nn::Linear coarse_;
};

}  // namespace hbm::inter
