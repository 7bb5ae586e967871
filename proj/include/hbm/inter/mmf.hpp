#pragma once

#include <array>
#include <string>

#include "hbm/nn/blocks.hpp"

namespace hbm::inter {

/// Multi-scale motion fusion. Coarse branch: stride-2 conv and three residual
/// blocks give e_c. Fine branch: the detail e_o - up(e_c) lost by the coarse
/// branch is downsampled to e_f. Output e_t = e_c + e_f at twice the input stride.
class Mmf {
 public:
  Mmf() = default;
  Mmf(ad::ParameterStore& store, const std::string& name, int channels, Rng& rng) {
    down_ = nn::SparseConv(store, name + ".down", {channels, channels, 2, 2}, rng);
    for (int i = 0; i < 3; ++i) res_[i] = nn::ResBlock(store, name + ".res" + std::to_string(i), channels, rng);
    up_ = nn::SparseDeconv(store, name + ".up", {channels, channels, 2, 2, true}, rng);
    fine_ = nn::SparseConv(store, name + ".fine", {channels, channels, 2, 2}, rng);
  }

  nn::SparseVar operator()(nn::Ctx& ctx, const nn::SparseVar& e_o) const {
    nn::SparseVar e_c = down_(ctx, e_o);
    for (const auto& r : res_) e_c = r(ctx, e_c);
    nn::SparseVar delta = nn::sub(e_o, up_.targeted(ctx, e_c, e_o.coords));
    nn::SparseVar e_f = fine_.apply(ctx, delta, e_c.coords);
    return nn::add(e_c, e_f);
  }

 private:
  nn::SparseConv down_;
  std::array<nn::ResBlock, 3> res_;
  nn::SparseDeconv up_;
  nn::SparseConv fine_;
};

}  // namespace hbm::inter
