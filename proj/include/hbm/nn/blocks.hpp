#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "hbm/nn/conv.hpp"

namespace hbm::nn {

/// Inception residual unit: two stride-1 branches at C/2 channels,
/// [1^3 -> 3^3] and [1^3 -> 3^3 -> 1^3], concatenated and added to the input.
class Irn {
 public:
  Irn() = default;
  Irn(ad::ParameterStore& store, const std::string& name, int channels, Rng& rng) : channels_(channels) {
    if (channels < 2 || channels % 2) throw std::invalid_argument("Irn: channel count must be even and >= 2");
    const int h = channels / 2;
    a1_ = SparseConv(store, name + ".a1", {channels, h, 1}, rng);
    a2_ = SparseConv(store, name + ".a2", {h, h, 3}, rng);
    b1_ = SparseConv(store, name + ".b1", {channels, h, 1}, rng);
    b2_ = SparseConv(store, name + ".b2", {h, h, 3}, rng);
    b3_ = SparseConv(store, name + ".b3", {h, h, 1}, rng);
  }

  SparseVar operator()(Ctx& ctx, const SparseVar& x) const {
    if (x.channels() != channels_) throw std::invalid_argument("Irn: channel mismatch");
    SparseVar a = a2_(ctx, relu(a1_(ctx, x)));
    SparseVar b = b3_(ctx, relu(b2_(ctx, relu(b1_(ctx, x)))));
    return {x.coords, ad::add(x.feats, ad::concat_cols({a.feats, b.feats}))};
  }

  int channels() const { return channels_; }

 private:
  int channels_ = 0;
  SparseConv a1_, a2_, b1_, b2_, b3_;
};

/// x + conv3(relu(conv3(x))).
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ad::ParameterStore& store, const std::string& name, int channels, Rng& rng)
      : c1_(store, name + ".c1", {channels, channels, 3}, rng), c2_(store, name + ".c2", {channels, channels, 3}, rng) {}

  SparseVar operator()(Ctx& ctx, const SparseVar& x) const {
    return {x.coords, ad::add(x.feats, c2_(ctx, relu(c1_(ctx, x))).feats)};
  }

 private:
  SparseConv c1_, c2_;
};

/// Stride-2 conv (2^3) -> ReLU -> 3 x IRN -> conv 3^3 to the output width.
class DownsampleBlock {
 public:
  DownsampleBlock() = default;
  DownsampleBlock(ad::ParameterStore& store, const std::string& name, int in, int hidden, int out, Rng& rng)
      : out_channels_(out) {
    down_ = SparseConv(store, name + ".down", {in, hidden, 2, 2}, rng);
    for (int i = 0; i < 3; ++i) irn_[i] = Irn(store, name + ".irn" + std::to_string(i), hidden, rng);
    conv_ = SparseConv(store, name + ".conv", {hidden, out, 3}, rng);
  }

  SparseVar operator()(Ctx& ctx, const SparseVar& x) const {
    SparseVar h = relu(down_(ctx, x));
    for (const auto& irn : irn_) h = irn(ctx, h);
    return conv_(ctx, h);
  }

  int out_channels() const { return out_channels_; }

 private:
  int out_channels_ = 0;
  SparseConv down_;
  Irn irn_[3];
  SparseConv conv_;
};

/// Indices of the `keep` largest logits, ties broken by canonical row order;
/// returned sorted ascending.
inline std::vector<int32_t> top_k_rows(const Matrix& logits, size_t keep) {
  const size_t n = static_cast<size_t>(logits.rows());
  std::vector<int32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  keep = std::min(keep, n);
  auto cmp = [&](int32_t a, int32_t b) {
    const double la = logits(a, 0), lb = logits(b, 0);
    return la > lb || (la == lb && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), cmp);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

struct UpsampleResult {
  SparseVar features;   ///< Surviving candidates.
  SparseVar logits;     ///< Occupancy logits on every candidate (C = 1).
  bool keep_clamped = false;  ///< keep_count exceeded the candidate count.
};

/// Stride-2 transpose conv (2^3) -> ReLU -> 3 x IRN -> conv 3^3, plus a
/// one-channel occupancy head. Without the head, it is a targeted synthesis
/// transform.
class UpsampleBlock {
 public:
  UpsampleBlock() = default;
  UpsampleBlock(ad::ParameterStore& store, const std::string& name, int in, int hidden, int out, Rng& rng,
                bool classifier = true) {
    up_ = SparseDeconv(store, name + ".up", {in, hidden, 2, 2, true}, rng);
    for (int i = 0; i < 3; ++i) irn_[i] = Irn(store, name + ".irn" + std::to_string(i), hidden, rng);
    conv_ = SparseConv(store, name + ".conv", {hidden, out, 3}, rng);
    if (classifier) {
      cls_ = SparseConv(store, name + ".cls", {out, 1, 3}, rng);
      has_cls_ = true;
    }
  }

  /// Features on an explicit candidate set.
  SparseVar features(Ctx& ctx, const SparseVar& x, const CoordSetPtr& candidates) const {
    SparseVar h = relu(up_.targeted(ctx, x, candidates));
    for (const auto& irn : irn_) h = irn(ctx, h);
    return conv_(ctx, h);
  }

  /// Occupancy logits for features produced by features().
  SparseVar classify(Ctx& ctx, const SparseVar& f) const {
    if (!has_cls_) throw std::logic_error("UpsampleBlock: no occupancy head");
    return cls_(ctx, f);
  }

  CoordSetPtr candidates(const SparseVar& x) const {
    return make_coords(generative_children(*x.coords, up_.out_stride(x), 2));
  }

  /// Generative upsampling keeping the keep_count highest-logit candidates.
  UpsampleResult operator()(Ctx& ctx, const SparseVar& x, size_t keep_count) const {
    auto cand = candidates(x);
    SparseVar f = features(ctx, x, cand);
    SparseVar logits = classify(ctx, f);
    UpsampleResult r;
    r.keep_clamped = keep_count > cand->size();
    std::vector<int32_t> rows = top_k_rows(logits.feats.value(), keep_count);
    std::vector<Coord> kept;
    kept.reserve(rows.size());
    for (int32_t i : rows) kept.push_back((*cand)[i]);
    uint64_t h = rows.size();
    for (int32_t i : rows) h = mix64(h ^ (static_cast<uint64_t>(i) + 0x9e3779b97f4a7c15ULL));
    ctx.tape.mark(h);
    auto keep = make_coords(std::move(kept), cand->stride());
    r.features = {keep, ad::gather_rows(f.feats, std::move(rows))};
    r.logits = logits;
    return r;
  }

  /// Generative upsampling that keeps an externally chosen subset of candidates.
  UpsampleResult keep_set(Ctx& ctx, const SparseVar& x, const CoordSetPtr& keep) const {
    auto cand = candidates(x);
    SparseVar f = features(ctx, x, cand);
    UpsampleResult r;
    r.logits = classify(ctx, f);
    r.features = select(f, keep);
    return r;
  }

  bool has_classifier() const { return has_cls_; }

 private:
  SparseDeconv up_;
  Irn irn_[3];
  SparseConv conv_;
  SparseConv cls_;
  bool has_cls_ = false;
};

}  // namespace hbm::nn
