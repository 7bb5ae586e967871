#pragma once

#include <charconv>
#include <cstring>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hbm/autodiff/weights_io.hpp"
#include "hbm/entropy/occupancy.hpp"
#include "hbm/inter/stage.hpp"

namespace hbm::codec {

enum class DistanceUnit { Stride, Voxel };

/// Architecture and inter-prediction constants. Defaults follow the reference
/// settings: alpha = 3, r = 3, K = 16, 64-channel y2.
struct ModelConfig {
  int c0 = 16;               ///< Width after the first conv.
  int c1 = 32;               ///< Width at stride 2.
  int y = 64;                ///< Width of y2 and y3.
  int embed = 32;            ///< Flow embedding width.
  int kabm_hidden = 32;
  int kabm_value = 32;
  int flow_latent = 8;
  int residual_hidden = 32;
  int residual_latent = 8;
  int occ_hidden = 8;
  int occ_latent = 4;
  int recon_out = 8;         ///< Width of the last upsample block.
  double radius = 3.0;
  int k = 16;
  double alpha = 3.0;
  DistanceUnit unit = DistanceUnit::Stride;
  uint64_t seed = 1;         ///< Weight initialisation seed.

  /// Ordered key/value view; the single source for parsing, printing and hashing.
  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    m["c0"] = std::to_string(c0);
    m["c1"] = std::to_string(c1);
    m["y"] = std::to_string(y);
    m["embed"] = std::to_string(embed);
    m["kabm_hidden"] = std::to_string(kabm_hidden);
    m["kabm_value"] = std::to_string(kabm_value);
    m["flow_latent"] = std::to_string(flow_latent);
    m["residual_hidden"] = std::to_string(residual_hidden);
    m["residual_latent"] = std::to_string(residual_latent);
    m["occ_hidden"] = std::to_string(occ_hidden);
    m["occ_latent"] = std::to_string(occ_latent);
    m["recon_out"] = std::to_string(recon_out);
    m["radius"] = num(radius);
    m["k"] = std::to_string(k);
    m["alpha"] = num(alpha);
    m["distance_unit"] = unit == DistanceUnit::Stride ? "stride" : "voxel";
    m["seed"] = std::to_string(seed);
    return m;
  }

  /// Applies one key; throws std::invalid_argument on unknown keys or bad values.
  void set(const std::string& key, const std::string& value) {
    auto bad = [&] { return std::invalid_argument("bad value for " + key + ": '" + value + "'"); };
    auto as_int = [&](int& dst, int lo) {
      int v = 0;
      auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || end != value.data() + value.size() || v < lo) throw bad();
      dst = v;
    };
    auto as_real = [&](double& dst) {
      double v = 0;
      auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || end != value.data() + value.size() || !(v > 0)) throw bad();
      dst = v;
    };
    if (key == "c0") as_int(c0, 2);
    else if (key == "c1") as_int(c1, 2);
    else if (key == "y") as_int(y, 2);
    else if (key == "embed") as_int(embed, 1);
    else if (key == "kabm_hidden") as_int(kabm_hidden, 1);
    else if (key == "kabm_value") as_int(kabm_value, 1);
    else if (key == "flow_latent") as_int(flow_latent, 1);
    else if (key == "residual_hidden") as_int(residual_hidden, 2);
    else if (key == "residual_latent") as_int(residual_latent, 1);
    else if (key == "occ_hidden") as_int(occ_hidden, 2);
    else if (key == "occ_latent") as_int(occ_latent, 1);
    else if (key == "recon_out") as_int(recon_out, 1);
    else if (key == "radius") as_real(radius);
    else if (key == "k") as_int(k, 1);
    else if (key == "alpha") as_real(alpha);
    else if (key == "seed") {
      auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), seed);
      if (ec != std::errc() || end != value.data() + value.size()) throw bad();
    } else if (key == "distance_unit") {
      if (value == "stride") unit = DistanceUnit::Stride;
      else if (value == "voxel") unit = DistanceUnit::Voxel;
      else throw bad();
    } else {
      throw std::invalid_argument("unknown model config key: " + key);
    }
  }

  static bool known(const std::string& key) { return ModelConfig{}.to_map().count(key) > 0; }

  bool operator==(const ModelConfig& o) const { return to_map() == o.to_map(); }
};

/// 64-bit FNV-1a.
class Fnv64 {
 public:
  void add(const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(const std::string& s) { add(s.data(), s.size()); }
  uint64_t value() const { return h_; }

 private:
  uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline constexpr const char* kConfigPrefix = "meta.config.";

/// Every learned block of the codec plus its configuration.
class CodecModel {
 public:
  explicit CodecModel(ModelConfig cfg = {}) : cfg_(cfg) {
    Rng rng(cfg.seed);
    const auto& c = cfg_;
    conv0 = nn::SparseConv(store, "fe.conv0", {1, c.c0, 3}, rng);
    down1 = nn::DownsampleBlock(store, "fe.down1", c.c0, c.c0, c.c1, rng);
    down2 = nn::DownsampleBlock(store, "fe.down2", c.c1, c.c1, c.y, rng);
    down3 = nn::DownsampleBlock(store, "fe.down3", c.y, c.y, c.y, rng);
    inter::StageConfig sc;
    sc.channels = c.y;
    sc.latent = c.flow_latent;
    sc.alpha = c.alpha;
    sc.kabm = {c.radius, c.k, c.kabm_hidden, c.kabm_value, c.embed};
    sc.levels = 2;
    low = inter::InterStage(store, "low", sc, rng);
    sc.levels = 1;
    high = inter::InterStage(store, "high", sc, rng);
    res_down = nn::DownsampleBlock(store, "res.down", c.y, c.residual_hidden, c.residual_hidden, rng);
    res_latent = nn::SparseConv(store, "res.latent", {c.residual_hidden, c.residual_latent, 3}, rng);
    res_prior = entropy::FactorizedModel(store, "res.prior", c.residual_latent);
    res_up = nn::UpsampleBlock(store, "res.up", c.residual_latent, c.residual_hidden, c.y, rng, false);
    occupancy = entropy::OccupancyRefiner(store, "occ", c.occ_hidden, c.occ_latent, rng);
    up1 = nn::UpsampleBlock(store, "rec.up1", c.y, c.c1, c.c0, rng, true);
    up2 = nn::UpsampleBlock(store, "rec.up2", c.c0, c.c0, c.recon_out, rng, true);
    ad::round_to_storage_precision(store);
  }
  CodecModel(const CodecModel&) = delete;
  CodecModel& operator=(const CodecModel&) = delete;

  const ModelConfig& config() const { return cfg_; }

  /// Distance unit for KABM / 3DAWI at a tensor stride.
  double unit(int32_t stride) const { return cfg_.unit == DistanceUnit::Stride ? stride : 1.0; }

  /// FNV-1a over "key=value\n" config lines followed by every parameter name
  /// and its float32 values, in creation order.
  uint64_t hash() const {
    Fnv64 h;
    for (const auto& [k, v] : cfg_.to_map()) h.add(k + "=" + v + "\n");
    for (size_t i = 0; i < store.size(); ++i) {
      h.add(store[i].name);
      for (Eigen::Index j = 0; j < store[i].value.size(); ++j) {
        const float f = static_cast<float>(store[i].value.data()[j]);
        h.add(&f, sizeof f);
      }
    }
    return h.value();
  }

  std::vector<uint8_t> serialize() const {
    std::vector<ad::WeightRecord> recs;
    for (const auto& [k, v] : cfg_.to_map()) {
      ad::WeightRecord r{kConfigPrefix + k, {static_cast<uint32_t>(v.size())}, {}};
      for (unsigned char ch : v) r.data.push_back(static_cast<float>(ch));
      recs.push_back(std::move(r));
    }
    for (size_t i = 0; i < store.size(); ++i) recs.push_back(ad::to_record(store[i]));
    return ad::serialize_weights(recs);
  }

  /// Rebuilds a model from a weight file. Missing or extra tensors and shape
  /// mismatches raise FormatError.
  static std::unique_ptr<CodecModel> deserialize(std::span<const uint8_t> bytes) {
    auto recs = ad::parse_weights(bytes);
    ModelConfig cfg;
    std::vector<const ad::WeightRecord*> tensors;
    for (const auto& r : recs) {
      if (r.name.rfind(kConfigPrefix, 0) == 0) {
        std::string v;
        for (float f : r.data) v.push_back(static_cast<char>(static_cast<int>(f)));
        try {
          cfg.set(r.name.substr(std::strlen(kConfigPrefix)), v);
        } catch (const std::invalid_argument& e) {
          throw FormatError(std::string("weight file config: ") + e.what());
        }
      } else {
        tensors.push_back(&r);
      }
    }
    auto m = std::make_unique<CodecModel>(cfg);
    if (tensors.size() != m->store.size())
      throw FormatError("weight file has " + std::to_string(tensors.size()) + " tensors, model expects " +
                        std::to_string(m->store.size()));
    for (const auto* r : tensors) {
      ad::Parameter* p = m->store.find(r->name);
      if (!p) throw FormatError("weight file has unknown tensor " + r->name);
      ad::assign_record(*p, *r);
    }
    return m;
  }

  void save(const std::string& path) const { write_file(path, serialize()); }
  static std::unique_ptr<CodecModel> load(const std::string& path) { return deserialize(read_file(path)); }

  mutable ad::ParameterStore store;
  nn::SparseConv conv0;
  nn::DownsampleBlock down1, down2, down3;
  inter::InterStage low, high;
  nn::DownsampleBlock res_down;
  nn::SparseConv res_latent;
  entropy::FactorizedModel res_prior;
  nn::UpsampleBlock res_up;
  entropy::OccupancyRefiner occupancy;
  nn::UpsampleBlock up1, up2;

 private:
  ModelConfig cfg_;
};

}  // namespace hbm::codec
