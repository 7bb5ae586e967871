// hbmc: train, encode, decode, evaluate and inspect the dynamic point-cloud
// geometry codec. Exit codes: 0 ok, 1 usage, 2 I/O, 3 model mismatch,
// 4 corrupt stream or failed verification.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hbm/eval/report.hpp"
#include "hbm/eval/run_config.hpp"

namespace {

using namespace hbm;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kModel = 3, kCorrupt = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const std::string& path) {
  const auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

/// PLY paths, one per line; blank lines separate sequences.
std::vector<std::vector<std::string>> read_list(const std::string& path) {
  std::istringstream in(read_text(path));
  const fs::path base = fs::path(path).parent_path();
  std::vector<std::vector<std::string>> seqs(1);
  std::string line;
  while (std::getline(in, line)) {
    line = eval::detail::trim(line);
    if (line.empty()) {
      if (!seqs.back().empty()) seqs.emplace_back();
      continue;
    }
    if (line[0] == '#') continue;
    fs::path p(line);
    seqs.back().push_back((p.is_relative() ? base / p : p).string());
  }
  if (seqs.back().empty()) seqs.pop_back();
  if (seqs.empty()) throw IoError(path + ": list names no PLY files");
  return seqs;
}

std::vector<CoordSetPtr> load_frames(const std::vector<std::string>& paths, int shift) {
  std::vector<CoordSetPtr> out;
  for (const auto& p : paths) {
    try {
      out.push_back(eval::read_ply(p, shift));
    } catch (const FormatError& e) {
      throw IoError(e.what());
    }
    if (out.back()->empty()) throw IoError(p + ": no points");
  }
  return out;
}

std::unique_ptr<codec::CodecModel> load_model(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return codec::CodecModel::deserialize(bytes);
  } catch (const FormatError& e) {
    throw codec::ModelMismatch(path + ": " + e.what());
  }
}

void check_depth(const std::vector<CoordSetPtr>& frames, int depth) {
  const int32_t hi = (int32_t{1} << depth) - 1;
  for (const auto& f : frames)
    for (const auto& c : *f)
      if (c.x < 0 || c.y < 0 || c.z < 0 || c.x > hi || c.y > hi || c.z > hi)
        throw UsageError("coordinate outside the " + std::to_string(depth) + "-bit grid; check --bit-depth/--shift");
}

void write_frames(const std::string& dir, const std::vector<codec::FrameResult>& frames, eval::PlyFormat fmt) {
  fs::create_directories(dir);
  for (size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.ply", i);
    eval::write_ply((fs::path(dir) / name).string(), *frames[i].recon, fmt);
  }
}

// ---- commands ----

int cmd_train(const std::string& config_path, const std::string& out, const std::vector<std::string>& sets,
              bool quiet) {
  eval::RunConfig rc;
  try {
    if (!config_path.empty()) rc = eval::parse_run_config(read_text(config_path));
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      eval::set_run_key(rc, kv.substr(0, eq), kv.substr(eq + 1));
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  std::vector<std::vector<CoordSetPtr>> data;
  if (!rc.data.list.empty()) {
    for (const auto& seq : read_list(rc.data.list)) data.push_back(load_frames(seq, rc.data.shift));
  } else {
    for (int s = 0; s < rc.data.sequences; ++s) {
      eval::SynthParams p = rc.data.synth;
      p.seed += static_cast<uint64_t>(s);
      data.push_back(eval::synth_sequence(p));
    }
  }
  codec::CodecModel m(rc.model);
  const auto samples = eval::make_samples(data, rc.train.intra_period);
  if (!quiet) std::cout << "step,epoch,lambda,lr,loss,bpp,distortion,aux\n";
  int last_epoch = 0;
  eval::train(m, samples, rc.train, [&](const eval::StepInfo& s) {
    if (s.epoch != last_epoch) {
      m.save(out);  // Per-epoch checkpoint; the final save below overwrites it.
      last_epoch = s.epoch;
    }
    if (!quiet)
      std::printf("%ld,%d,%g,%g,%.6f,%.6f,%.6f,%.6f\n", s.step, s.epoch, s.lambda, s.lr, s.loss, s.bpp, s.distortion, s.aux);
    std::fflush(stdout);
  });
  m.save(out);
  std::cerr << "wrote " << out << " (hash " << std::hex << m.hash() << std::dec << ")\n";
  return kOk;
}

int cmd_encode(const std::string& input, const std::string& model, int gop, const std::string& out, int depth,
               int shift, double lambda, const std::string& csv) {
  auto m = load_model(model);
  const auto lists = read_list(input);
  if (lists.size() != 1) throw UsageError("encode expects a single sequence in the list file");
  const auto frames = load_frames(lists[0], shift);
  check_depth(frames, depth);
  const auto enc = codec::encode_sequence(*m, frames, gop, depth);
  write_file(out, enc.stream.serialize());
  const auto rows = eval::rd_rows(enc, frames, lambda);
  std::cout << eval::kRdHeader << "\n";
  for (const auto& r : rows) std::cout << eval::format_rd_row(r) << "\n";
  if (!csv.empty()) eval::write_rd_csv(csv, rows);
  return kOk;
}

int cmd_decode(const std::string& input, const std::string& model, const std::string& out, bool verify,
               const std::string& source, int shift, bool binary) {
  auto m = load_model(model);
  const auto s = codec::SequenceBitstream::parse(read_file(input));
  const auto dec = codec::decode_sequence(*m, s);
  write_frames(out, dec, binary ? eval::PlyFormat::BinaryLittleEndian : eval::PlyFormat::Ascii);
  if (!verify) return kOk;
  // A second decode must reproduce the first; with the source frames, a fresh
  // encode must reproduce the stream bytes and the decoder reconstructions.
  const auto again = codec::decode_sequence(*m, s);
  bool ok = again.size() == dec.size();
  for (size_t i = 0; ok && i < dec.size(); ++i) ok = *again[i].recon == *dec[i].recon;
  if (ok && !source.empty()) {
    const auto lists = read_list(source);
    const auto frames = load_frames(lists.at(0), shift);
    if (frames.size() != s.frames.size()) throw UsageError("--source frame count differs from the stream");
    int gop = static_cast<int>(s.frames.size()) + 1;
    for (size_t i = 1; i < s.frames.size(); ++i)
      if (s.frames[i].type == codec::FrameType::Intra) {
        gop = static_cast<int>(i);
        break;
      }
    const auto enc = codec::encode_sequence(*m, frames, gop, s.bit_depth);
    ok = enc.stream.serialize() == s.serialize();
    for (size_t i = 0; ok && i < dec.size(); ++i) ok = *enc.frames[i].recon == *dec[i].recon;
  }
  std::cout << (ok ? "OK" : "MISMATCH") << "\n";
  return ok ? kOk : kCorrupt;
}

int cmd_eval(const std::string& anchor, const std::string& test) {
  std::vector<eval::RdRow> a, t;
  try {
    a = eval::read_rd_csv(anchor);
    t = eval::read_rd_csv(test);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  try {
    std::printf("BD-rate: %.2f%%\n", eval::bd_rate(eval::rd_curve(a), eval::rd_curve(t)));
    std::printf("BD-rate (D2): %.2f%%\n", eval::bd_rate(eval::rd_curve(a, true), eval::rd_curve(t, true)));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return kOk;
}

int cmd_synth(const std::string& kind, int frames, uint64_t seed, const std::string& out, size_t points, int depth,
              bool binary) {
  eval::SynthParams p;
  try {
    p.kind = eval::parse_synth_kind(kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  p.frames = frames;
  p.seed = seed;
  p.points = points;
  p.bit_depth = depth;
  std::vector<CoordSetPtr> seq;
  try {
    seq = eval::synth_sequence(p);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(out);
  std::string list;
  for (size_t i = 0; i < seq.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.ply", i);
    eval::write_ply((fs::path(out) / name).string(), *seq[i],
                    binary ? eval::PlyFormat::BinaryLittleEndian : eval::PlyFormat::Ascii);
    list += std::string(name) + "\n";
  }
  const auto lp = (fs::path(out) / "list.txt").string();
  write_file(lp, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(list.data()), list.size()));
  std::cout << lp << "\n";
  return kOk;
}

int cmd_flowviz(const std::string& input, const std::string& model, int frame, const std::string& out,
                const std::string& stage) {
  auto m = load_model(model);
  auto s = codec::SequenceBitstream::parse(read_file(input));
  if (frame < 0 || static_cast<size_t>(frame) >= s.frames.size())
    throw UsageError("--frame out of range (stream has " + std::to_string(s.frames.size()) + " frames)");
  if (s.frames[frame].type != codec::FrameType::Inter) throw UsageError("frame " + std::to_string(frame) + " is intra and carries no flow");
  s.frames.resize(static_cast<size_t>(frame) + 1);
  const auto dec = codec::decode_sequence(*m, s);
  const auto& tr = dec.back().trace;
  eval::export_flow_ply(out, *tr.c2, stage == "low" ? tr.flow_low : tr.flow_high);
  return kOk;
}

int cmd_bench(const std::string& model, int frames, size_t points, int depth, int gop) {
  std::unique_ptr<codec::CodecModel> m = model.empty() ? std::make_unique<codec::CodecModel>() : load_model(model);
  eval::SynthParams p;
  p.frames = frames;
  p.points = points;
  p.bit_depth = depth;
  const auto seq = eval::synth_sequence(p);
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto enc = codec::encode_sequence(*m, seq, gop, depth);
  const auto t1 = clock::now();
  const auto dec = codec::decode_sequence(*m, enc.stream);
  const auto t2 = clock::now();
  double bpp = 0;
  for (const auto& f : enc.frames) bpp += codec::frame_rate(f.bits).total();
  const double n = static_cast<double>(seq.size());
  std::printf("frames %d, ~%zu points, %d-bit, gop %d\n", frames, points, depth, gop);
  std::printf("encode %.3f s/frame, decode %.3f s/frame, mean %.4f bpp\n",
              std::chrono::duration<double>(t1 - t0).count() / n, std::chrono::duration<double>(t2 - t1).count() / n,
              bpp / n);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hbmc: learned dynamic point-cloud geometry codec"};
  app.require_subcommand(1);

  std::string config, out, input, model, csv, source, anchor, test, kind = "rigid-translate", stage = "high";
  std::vector<std::string> sets;
  int gop = 8, depth = 10, shift = 0, frames = 5, frame = 1;
  double lambda = 0;
  uint64_t seed = 1;
  size_t points = 2000;
  bool verify = false, binary = false, quiet = false, print_config = false;

  auto* train = app.add_subcommand("train", "Train a model and write an HWTS weight file");
  train->add_option("--config", config, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
  train->add_option("--set", sets, "Override one config key (key=value); repeatable");
  train->add_option("--out", out, "Output weight file");
  train->add_flag("--quiet", quiet, "Do not print the per-step loss history");
  train->add_flag("--print-config", print_config, "Print the default config file and exit");

  auto* encode = app.add_subcommand("encode", "Encode a PLY sequence to an HBMX stream");
  encode->add_option("--input", input, "List file of PLY paths, one per line")->required();
  encode->add_option("--model", model, "HWTS weight file")->required();
  encode->add_option("--gop", gop, "Intra period; 1 codes every frame intra")->check(CLI::PositiveNumber);
  encode->add_option("--out", out, "Output .hbmx file")->required();
  encode->add_option("--bit-depth", depth, "Coordinate bit depth")->check(CLI::Range(4, 21));
  encode->add_option("--shift", shift, "Right shift applied to PLY coordinates (11 -> 10 bit: 1)")->check(CLI::Range(0, 20));
  encode->add_option("--lambda", lambda, "Lambda label for the CSV rows");
  encode->add_option("--csv", csv, "Also write the RD CSV here");

  auto* decode = app.add_subcommand("decode", "Decode an HBMX stream to PLY frames");
  decode->add_option("--input", input, "Input .hbmx file")->required();
  decode->add_option("--model", model, "HWTS weight file")->required();
  decode->add_option("--out", out, "Output directory")->required();
  decode->add_flag("--verify", verify, "Re-run decode (and encode with --source) and compare; prints OK");
  decode->add_option("--source", source, "Source PLY list for --verify re-encoding");
  decode->add_option("--shift", shift, "Right shift for --source PLY coordinates")->check(CLI::Range(0, 20));
  decode->add_flag("--binary", binary, "Write binary little-endian PLY");

  auto* evalc = app.add_subcommand("eval", "BD-rate of a test RD CSV against an anchor RD CSV");
  evalc->add_option("--anchor", anchor, "Anchor RD CSV")->required();
  evalc->add_option("--test", test, "Test RD CSV")->required();

  auto* bench = app.add_subcommand("bench", "Time encode and decode on a synthetic sequence");
  bench->add_option("--model", model, "HWTS weight file (default: untrained model)");
  bench->add_option("--frames", frames, "Frames")->check(CLI::PositiveNumber);
  bench->add_option("--points", points, "Approximate points per frame");
  bench->add_option("--bit-depth", depth, "Coordinate bit depth")->check(CLI::Range(5, 16));
  bench->add_option("--gop", gop, "Intra period")->check(CLI::PositiveNumber);

  auto* synth = app.add_subcommand("synth", "Write a synthetic PLY sequence and its list file");
  synth->add_option("--kind", kind, "rigid-translate | rigid-rotate | two-blob-articulate | breathing-sphere");
  synth->add_option("--frames", frames, "Frames")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--points", points, "Approximate points per frame");
  synth->add_option("--bit-depth", depth, "Coordinate bit depth")->check(CLI::Range(5, 16));
  synth->add_flag("--binary", binary, "Write binary little-endian PLY");

  auto* flow = app.add_subcommand("flow-viz", "Export a decoded motion field as a coloured PLY");
  flow->add_option("--input", input, "Input .hbmx file")->required();
  flow->add_option("--model", model, "HWTS weight file")->required();
  flow->add_option("--frame", frame, "Inter frame index")->check(CLI::NonNegativeNumber);
  flow->add_option("--out", out, "Output PLY")->required();
  flow->add_option("--stage", stage, "low | high")->check(CLI::IsMember({"low", "high"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) {
      if (print_config) {
        std::cout << eval::default_run_config_text();
        return kOk;
      }
      if (out.empty()) throw UsageError("train: --out is required");
      return cmd_train(config, out, sets, quiet);
    }
    if (*encode) return cmd_encode(input, model, gop, out, depth, shift, lambda, csv);
    if (*decode) return cmd_decode(input, model, out, verify, source, shift, binary);
    if (*evalc) return cmd_eval(anchor, test);
    if (*bench) return cmd_bench(model, frames, points, depth, gop);
    if (*synth) return cmd_synth(kind, frames, seed, out, points, depth, binary);
    if (*flow) return cmd_flowviz(input, model, frame, out, stage);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const codec::ModelMismatch& e) {
    std::cerr << "model mismatch: " << e.what() << "\n";
    return kModel;
  } catch (const FormatError& e) {
    std::cerr << "corrupt stream: " << e.what() << "\n";
    return kCorrupt;
  } catch (const eval::TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
