#pragma once

#include <map>
#include <vector>

#include "hbm/codec/pipeline.hpp"
#include "hbm/eval/io.hpp"
#include "hbm/eval/metrics.hpp"

namespace hbm::eval {

inline double peak_for_depth(int depth) { return std::ldexp(1.0, depth) - 1.0; }

/// One CSV row per frame: stream rates in bits per input point and capped
/// PSNRs of the reconstruction against the source.
inline std::vector<RdRow> rd_rows(const codec::SequenceResult& enc, const std::vector<CoordSetPtr>& source,
                                  double lambda) {
  const double peak = peak_for_depth(enc.stream.bit_depth);
  std::vector<RdRow> rows;
  for (size_t i = 0; i < enc.frames.size(); ++i) {
    const codec::FrameRate r = codec::frame_rate(enc.frames[i].bits);
    RdRow row;
    row.lambda = lambda;
    row.frame = static_cast<int>(i);
    row.bpp = r.total();
    row.bpp_flow_low = r.flow_low;
    row.bpp_flow_high = r.flow_high;
    row.bpp_residual = r.residual;
    row.bpp_coords = r.coords;
    row.d1_psnr = cap_psnr(d1_psnr(*source[i], *enc.frames[i].recon, peak));
    row.d2_psnr = cap_psnr(d2_psnr(*source[i], *enc.frames[i].recon, peak));
    rows.push_back(row);
  }
  return rows;
}

/// Frame-averaged (bpp, PSNR) per lambda, in ascending lambda order.
inline std::vector<RdPoint> rd_curve(const std::vector<RdRow>& rows, bool use_d2 = false) {
  std::map<double, std::pair<RdPoint, int>> acc;
  for (const auto& r : rows) {
    auto& [p, n] = acc[r.lambda];
    p.bpp += r.bpp;
    p.psnr += use_d2 ? r.d2_psnr : r.d1_psnr;
    ++n;
  }
  std::vector<RdPoint> out;
  for (const auto& [lambda, v] : acc) out.push_back({v.first.bpp / v.second, v.first.psnr / v.second});
  return out;
}

}  // namespace hbm::eval
