// File formats: MOT Challenge CSV, embedding tables, checkpoints, key=value
// configuration files and scenario bundles.
//
// Binary files are little-endian regardless of host byte order.

#pragma once

#include "sbtrack/core.hpp"
#include "sbtrack/encoder.hpp"
#include "sbtrack/hungarian.hpp"
#include "sbtrack/sbto.hpp"
#include "sbtrack/synth.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace sbtrack {

// ---------------------------------------------------------------- MOT CSV

enum class MotKind { det, gt };

struct MotRecord {
  int frame = 0;
  int id = -1;
  BBox box;
  double confidence = 1.0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  const std::string tmp(s);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view s, int& out) {
  double d = 0.0;
  if (!parse_double(s, d) || d != std::floor(d) || std::abs(d) > 2e9) return false;
  out = static_cast<int>(d);
  return true;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Parses MOT CSV text. Detection files ignore the id column; ground-truth
/// files require id >= 1. Every malformed line is reported in one error.
inline std::vector<MotRecord> parse_mot_text(std::istream& in, MotKind kind, const std::string& source = "<input>") {
  std::vector<MotRecord> out;
  std::vector<std::string> errors;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view view = detail::trim(line);
    if (view.empty() || view.front() == '#') continue;
    const auto f = detail::split(view, ',');
    auto fail = [&](const std::string& why) { errors.push_back("line " + std::to_string(lineno) + ": " + why); };
    if (f.size() < 6) {
      fail("expected at least 6 fields, got " + std::to_string(f.size()));
      continue;
    }
    MotRecord r;
    double l = 0, t = 0, w = 0, h = 0;
    int id = 0;
    if (!detail::parse_int(f[0], r.frame) || r.frame < 1) {
      fail("frame must be an integer >= 1");
      continue;
    }
    if (!detail::parse_int(f[1], id)) {
      fail("id is not an integer");
      continue;
    }
    if (!detail::parse_double(f[2], l) || !detail::parse_double(f[3], t) || !detail::parse_double(f[4], w) ||
        !detail::parse_double(f[5], h)) {
      fail("non-numeric box field");
      continue;
    }
    if (!(w > 0.0) || !(h > 0.0)) {
      fail("box width and height must be positive");
      continue;
    }
    if (f.size() > 6 && !detail::parse_double(f[6], r.confidence)) {
      fail("non-numeric confidence");
      continue;
    }
    if (kind == MotKind::gt) {
      if (id < 1) {
        fail("ground-truth id must be >= 1");
        continue;
      }
      r.id = id;
    } else {
      r.id = -1;
    }
    r.box = BBox(l, t, w, h);
    out.push_back(r);
  }
  if (!errors.empty()) {
    std::string msg = source + ": " + std::to_string(errors.size()) + " malformed line(s)";
    for (const auto& e : errors) msg += "\n  " + e;
    throw DataError(msg);
  }
  return out;
}

inline std::vector<MotRecord> parse_mot(const std::filesystem::path& path, MotKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_mot_text(in, kind, path.string());
}

/// Groups ground-truth records into trajectories ordered by id.
inline std::vector<Trajectory> trajectories_from_records(const std::vector<MotRecord>& recs) {
  std::map<int, std::map<int, BBox>> by_id;
  for (const auto& r : recs) {
    if (!by_id[r.id].emplace(r.frame, r.box).second) {
      throw DataError("track " + std::to_string(r.id) + " has two boxes in frame " + std::to_string(r.frame));
    }
  }
  std::vector<Trajectory> out;
  for (const auto& [id, frames] : by_id) {
    Trajectory t;
    t.track_id = id;
    for (const auto& [f, b] : frames) t.entries.push_back({f, b});
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<Trajectory> load_trajectories(const std::filesystem::path& path) {
  return trajectories_from_records(parse_mot(path, MotKind::gt));
}

/// MOT result CSV: rows sorted by (frame, id), two decimals, conf 1 and
/// world coordinates -1.
inline std::string format_mot(std::span<const Trajectory> trajs) {
  validate_trajectories(trajs);
  struct Row {
    int frame, id;
    BBox box;
  };
  std::vector<Row> rows;
  for (const auto& t : trajs) {
    for (const auto& e : t.entries) rows.push_back({e.frame, t.track_id, e.box});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return std::tie(a.frame, a.id) < std::tie(b.frame, b.id); });
  std::string out;
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.2f,%.2f,%.2f,%.2f,1,-1,-1,-1\n", r.frame, r.id, r.box.left, r.box.top,
                  r.box.width, r.box.height);
    out += buf;
  }
  return out;
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline void write_mot(std::span<const Trajectory> trajs, const std::filesystem::path& path) {
  detail::write_text(path, format_mot(trajs));
}

// ------------------------------------------------------- binary primitives

namespace detail {

class BinWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    u64(bits);
  }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class BinReader {
 public:
  BinReader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& why) const { throw DataError(source_ + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail("truncated file");
  }
  std::string data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------- embeddings

inline constexpr std::string_view kEmbeddingMagic = "SBEM";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct EmbeddingRow {
  std::uint32_t frame = 0;
  std::uint32_t index = 0;  // detection index within the frame
  Eigen::VectorXd feature;
};

struct EmbeddingTable {
  int dim = 0;
  std::vector<EmbeddingRow> rows;

  const Eigen::VectorXd* find(std::uint32_t frame, std::uint32_t index) const {
    for (const auto& r : rows) {
      if (r.frame == frame && r.index == index) return &r.feature;
    }
    return nullptr;
  }
};

inline std::string encode_embeddings(const EmbeddingTable& t) {
  detail::BinWriter w;
  w.bytes(kEmbeddingMagic);
  w.u32(kEmbeddingVersion);
  w.u32(static_cast<std::uint32_t>(t.dim));
  w.u64(t.rows.size());
  for (const auto& r : t.rows) {
    if (r.feature.size() != t.dim) throw DataError("embedding row dimension does not match the table");
    w.u32(r.frame);
    w.u32(r.index);
    for (Eigen::Index i = 0; i < r.feature.size(); ++i) w.f64(r.feature(i));
  }
  return w.data();
}

inline EmbeddingTable decode_embeddings(std::string data, const std::string& source = "<embeddings>",
                                        int expected_dim = -1) {
  detail::BinReader r(std::move(data), source);
  if (r.bytes(4) != kEmbeddingMagic) r.fail("bad magic, not an embedding file");
  const std::uint32_t version = r.u32();
  if (version != kEmbeddingVersion) r.fail("unsupported embedding version " + std::to_string(version));
  EmbeddingTable t;
  t.dim = static_cast<int>(r.u32());
  if (expected_dim >= 0 && t.dim != expected_dim) {
    r.fail("embedding dimension " + std::to_string(t.dim) + " does not match expected " + std::to_string(expected_dim));
  }
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    EmbeddingRow row;
    row.frame = r.u32();
    row.index = r.u32();
    row.feature.resize(t.dim);
    for (int k = 0; k < t.dim; ++k) row.feature(k) = r.f64();
    t.rows.push_back(std::move(row));
  }
  if (!r.at_end()) r.fail("trailing bytes after the last row");
  return t;
}

inline void save_embeddings(const EmbeddingTable& t, const std::filesystem::path& path) {
  detail::write_text(path, encode_embeddings(t));
}

inline EmbeddingTable load_embeddings(const std::filesystem::path& path, int expected_dim = -1) {
  return decode_embeddings(detail::read_text(path), path.string(), expected_dim);
}

// ---------------------------------------------------------------- checkpoints

inline constexpr std::string_view kCheckpointMagic = "SBCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelParams& p) {
  detail::BinWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(p.config.input_dim));
  w.u32(static_cast<std::uint32_t>(p.config.hidden));
  w.u32(static_cast<std::uint32_t>(p.config.max_len));
  w.u32(static_cast<std::uint32_t>(p.config.variant));
  const auto views = p.w.views();
  w.u32(static_cast<std::uint32_t>(views.size()));
  for (const auto& v : views) {
    w.u32(static_cast<std::uint32_t>(v.name.size()));
    w.bytes(v.name);
    w.u32(static_cast<std::uint32_t>(v.rows));
    w.u32(static_cast<std::uint32_t>(v.cols));
    // row-major on disk; Eigen storage is column-major
    for (Eigen::Index r = 0; r < v.rows; ++r) {
      for (Eigen::Index c = 0; c < v.cols; ++c) w.f64(v.data[c * v.rows + r]);
    }
  }
  return w.data();
}

inline ModelParams decode_checkpoint(std::string data, const std::string& source = "<checkpoint>") {
  detail::BinReader r(std::move(data), source);
  if (r.bytes(4) != kCheckpointMagic) r.fail("bad magic, not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  EncoderConfig cfg;
  cfg.input_dim = static_cast<int>(r.u32());
  cfg.hidden = static_cast<int>(r.u32());
  cfg.max_len = static_cast<int>(r.u32());
  const std::uint32_t variant = r.u32();
  if (variant > static_cast<std::uint32_t>(EncoderVariant::self_attention)) r.fail("unknown encoder variant");
  cfg.variant = static_cast<EncoderVariant>(variant);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(e.what());
  }
  ModelParams p{cfg, Weights::zeros(cfg)};
  auto views = p.w.views();
  const std::uint32_t n = r.u32();
  if (n != views.size()) r.fail("expected " + std::to_string(views.size()) + " tensors, found " + std::to_string(n));
  for (auto& v : views) {
    const std::string name = r.bytes(r.u32());
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    if (name != v.name || rows != v.rows || cols != v.cols) {
      r.fail("tensor '" + name + "' does not match expected '" + v.name + "' " + std::to_string(v.rows) + "x" +
             std::to_string(v.cols));
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index c = 0; c < cols; ++c) v.data[c * rows + i] = r.f64();
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after the last tensor");
  if (!p.w.all_finite()) r.fail("checkpoint contains non-finite values");
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  detail::write_text(path, encode_checkpoint(p));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_text(path), path.string());
}

// ---------------------------------------------------------- key=value files

using KeyValues = std::map<std::string, std::string>;

/// `key = value` lines; blank lines and lines starting with '#' are ignored.
inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view v = detail::trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw DataError(source + ": line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key(detail::trim(v.substr(0, eq)));
    const std::string value(detail::trim(v.substr(eq + 1)));
    if (key.empty()) throw DataError(source + ": line " + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_key_values(in, path.string());
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

namespace detail {

inline std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

/// Reads typed values out of a KeyValues map and rejects leftovers.
class KvReader {
 public:
  KvReader(const KeyValues& kv, std::string source) : kv_(kv), source_(std::move(source)) {}

  void get(const std::string& key, int& out) {
    if (auto v = take(key)) {
      if (!parse_int(*v, out)) bad(key, *v);
    }
  }
  void get(const std::string& key, double& out) {
    if (auto v = take(key)) {
      if (!parse_double(*v, out)) bad(key, *v);
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (auto v = take(key)) {
      const auto res = std::from_chars(v->data(), v->data() + v->size(), out);
      if (res.ec != std::errc() || res.ptr != v->data() + v->size()) bad(key, *v);
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto v = take(key)) out = *v;
  }
  template <class F>
  void get_with(const std::string& key, F&& convert) {
    if (auto v = take(key)) {
      try {
        convert(*v);
      } catch (const std::invalid_argument&) {
        bad(key, *v);
      }
    }
  }
  void finish() const {
    for (const auto& [k, _] : kv_) {
      if (!used_.count(k)) throw DataError(source_ + ": unknown key '" + k + "'");
    }
  }

 private:
  std::optional<std::string> take(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    used_[key] = true;
    return it->second;
  }
  [[noreturn]] void bad(const std::string& key, const std::string& v) const {
    throw DataError(source_ + ": bad value '" + v + "' for key '" + key + "'");
  }

  const KeyValues& kv_;
  std::string source_;
  std::map<std::string, bool> used_;
};

}  // namespace detail

inline KeyValues to_key_values(const TrainConfig& c) {
  return {
      {"input_dim", std::to_string(c.encoder.input_dim)},
      {"hidden", std::to_string(c.encoder.hidden)},
      {"max_len", std::to_string(c.encoder.max_len)},
      {"variant", to_string(c.encoder.variant)},
      {"K", std::to_string(c.K)},
      {"C", std::to_string(c.C)},
      {"n_length", std::to_string(c.n_length)},
      {"alpha", detail::fmt_double(c.alpha)},
      {"rank_weight", detail::fmt_double(c.rank_weight)},
      {"learning_rate", detail::fmt_double(c.learning_rate)},
      {"weight_decay", detail::fmt_double(c.weight_decay)},
      {"batch_size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"warmup_epochs", std::to_string(c.warmup_epochs)},
      {"loss_mode", to_string(c.loss_mode)},
      {"negative_corruption", detail::fmt_double(c.negative_corruption)},
      {"clips_per_scenario", std::to_string(c.clips_per_scenario)},
      {"seed", std::to_string(c.seed)},
  };
}

/// Overrides fields of `c` from the map; unknown keys are an error.
inline TrainConfig train_config_from(const KeyValues& kv, TrainConfig c = {}, const std::string& source = "<config>") {
  detail::KvReader r(kv, source);
  r.get("input_dim", c.encoder.input_dim);
  r.get("hidden", c.encoder.hidden);
  r.get("max_len", c.encoder.max_len);
  r.get_with("variant", [&](const std::string& v) { c.encoder.variant = encoder_variant_from_string(v); });
  r.get("K", c.K);
  r.get("C", c.C);
  r.get("n_length", c.n_length);
  r.get("alpha", c.alpha);
  r.get("rank_weight", c.rank_weight);
  r.get("learning_rate", c.learning_rate);
  r.get("weight_decay", c.weight_decay);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("warmup_epochs", c.warmup_epochs);
  r.get_with("loss_mode", [&](const std::string& v) { c.loss_mode = loss_mode_from_string(v); });
  r.get("negative_corruption", c.negative_corruption);
  r.get("clips_per_scenario", c.clips_per_scenario);
  r.get("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": " + e.what());
  }
  return c;
}

inline KeyValues to_key_values(const SynthConfig& c) {
  return {
      {"name", c.name},
      {"n_identities", std::to_string(c.n_identities)},
      {"n_frames", std::to_string(c.n_frames)},
      {"arena_width", detail::fmt_double(c.arena_width)},
      {"arena_height", detail::fmt_double(c.arena_height)},
      {"box_width_min", detail::fmt_double(c.box_width_min)},
      {"box_width_max", detail::fmt_double(c.box_width_max)},
      {"aspect", detail::fmt_double(c.aspect)},
      {"speed_min", detail::fmt_double(c.speed_min)},
      {"speed_max", detail::fmt_double(c.speed_max)},
      {"motion_jitter", detail::fmt_double(c.motion_jitter)},
      {"embedding_dim", std::to_string(c.embedding_dim)},
      {"identity_separation", detail::fmt_double(c.identity_separation)},
      {"appearance_noise", detail::fmt_double(c.appearance_noise)},
      {"detection_noise", detail::fmt_double(c.detection_noise)},
      {"fp_rate", detail::fmt_double(c.fp_rate)},
      {"fn_rate", detail::fmt_double(c.fn_rate)},
      {"crossing_rate", detail::fmt_double(c.crossing_rate)},
      {"seed", std::to_string(c.seed)},
  };
}

inline SynthConfig synth_config_from(const KeyValues& kv, SynthConfig c = {}, const std::string& source = "<config>") {
  detail::KvReader r(kv, source);
  r.get("name", c.name);
  r.get("n_identities", c.n_identities);
  r.get("n_frames", c.n_frames);
  r.get("arena_width", c.arena_width);
  r.get("arena_height", c.arena_height);
  r.get("box_width_min", c.box_width_min);
  r.get("box_width_max", c.box_width_max);
  r.get("aspect", c.aspect);
  r.get("speed_min", c.speed_min);
  r.get("speed_max", c.speed_max);
  r.get("motion_jitter", c.motion_jitter);
  r.get("embedding_dim", c.embedding_dim);
  r.get("identity_separation", c.identity_separation);
  r.get("appearance_noise", c.appearance_noise);
  r.get("detection_noise", c.detection_noise);
  r.get("fp_rate", c.fp_rate);
  r.get("fn_rate", c.fn_rate);
  r.get("crossing_rate", c.crossing_rate);
  r.get("seed", c.seed);
  r.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------- bundles

/// Detections as MOT det rows (id -1) in per-frame order, two decimals.
inline std::string format_detections(const Scenario& s) {
  std::string out;
  char buf[160];
  for (int f = 1; f <= s.frame_count; ++f) {
    for (const auto& d : s.at_frame(f)) {
      std::snprintf(buf, sizeof buf, "%d,-1,%.2f,%.2f,%.2f,%.2f,%.2f,-1,-1,-1\n", f, d->box.left, d->box.top,
                    d->box.width, d->box.height, d->confidence);
      out += buf;
    }
  }
  return out;
}

/// Writes {gt.txt, det.txt, emb.bin, meta}. Embedding rows are keyed by
/// (frame, position of the detection within its frame in det.txt).
inline void write_bundle(const Scenario& s, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
  write_mot(s.gt, dir / "gt.txt");
  detail::write_text(dir / "det.txt", format_detections(s));
  EmbeddingTable t;
  t.dim = s.feature_dim;
  for (int f = 1; f <= s.frame_count; ++f) {
    const auto& dets = s.at_frame(f);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      t.rows.push_back({static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(i), dets[i]->feature});
    }
  }
  save_embeddings(t, dir / "emb.bin");
  detail::write_text(dir / "meta", format_key_values({{"name", s.name},
                                                       {"frame_count", std::to_string(s.frame_count)},
                                                       {"feature_dim", std::to_string(s.feature_dim)}}));
}

/// Identity labels for detections: per frame, a maximum-IoU one-to-one
/// matching of detections to ground-truth boxes at IoU >= tau.
inline void label_detections(Scenario& s, double tau = 0.5) {
  std::map<int, std::vector<std::pair<int, BBox>>> gt_at;
  for (const auto& t : s.gt) {
    for (const auto& e : t.entries) gt_at[e.frame].push_back({t.track_id, e.box});
  }
  for (int f = 1; f <= s.frame_count; ++f) {
    auto& dets = s.detections[static_cast<std::size_t>(f - 1)];
    std::vector<Detection> copy;
    for (const auto& d : dets) {
      copy.push_back(*d);
      copy.back().gt_identity.reset();
    }
    const auto it = gt_at.find(f);
    if (it != gt_at.end() && !copy.empty()) {
      Eigen::MatrixXd cost(static_cast<Eigen::Index>(copy.size()), static_cast<Eigen::Index>(it->second.size()));
      for (std::size_t i = 0; i < copy.size(); ++i) {
        for (std::size_t j = 0; j < it->second.size(); ++j) {
          const double o = iou(copy[i].box, it->second[j].second);
          cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = o >= tau ? 1.0 - o : kForbidden;
        }
      }
      for (auto [i, j] : hungarian(cost)) copy[static_cast<std::size_t>(i)].gt_identity = it->second[static_cast<std::size_t>(j)].first;
    }
    dets.clear();
    for (auto& d : copy) dets.push_back(make_detection(std::move(d)));
  }
}

/// Reads a bundle. Ground truth is optional; when present, detections are
/// labelled by IoU matching against it.
inline Scenario load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a scenario bundle directory");
  Scenario s;
  const KeyValues meta = load_key_values(dir / "meta");
  int frame_count = -1;
  detail::KvReader r(meta, (dir / "meta").string());
  r.get("name", s.name);
  r.get("frame_count", frame_count);
  r.get("feature_dim", s.feature_dim);
  r.finish();
  if (s.feature_dim < 1) throw DataError((dir / "meta").string() + ": feature_dim missing or invalid");

  const auto dets = parse_mot(dir / "det.txt", MotKind::det);
  const EmbeddingTable emb = load_embeddings(dir / "emb.bin", s.feature_dim);
  std::map<std::pair<std::uint32_t, std::uint32_t>, const Eigen::VectorXd*> feat;
  for (const auto& row : emb.rows) feat[{row.frame, row.index}] = &row.feature;

  if (std::filesystem::exists(dir / "gt.txt")) s.gt = load_trajectories(dir / "gt.txt");
  int max_frame = std::max(frame_count, 0);
  for (const auto& d : dets) max_frame = std::max(max_frame, d.frame);
  for (const auto& t : s.gt) {
    for (const auto& e : t.entries) max_frame = std::max(max_frame, e.frame);
  }
  s.frame_count = max_frame;
  s.detections.assign(static_cast<std::size_t>(max_frame), {});
  std::map<int, std::uint32_t> next_index;
  for (const auto& rec : dets) {
    const std::uint32_t idx = next_index[rec.frame]++;
    auto it = feat.find({static_cast<std::uint32_t>(rec.frame), idx});
    if (it == feat.end()) {
      throw DataError((dir / "emb.bin").string() + ": no embedding for detection " + std::to_string(idx) + " of frame " +
                      std::to_string(rec.frame));
    }
    Detection d;
    d.frame = rec.frame;
    d.box = rec.box;
    d.confidence = rec.confidence;
    d.feature = *it->second;
    s.detections[static_cast<std::size_t>(rec.frame - 1)].push_back(make_detection(std::move(d)));
  }
  if (!s.gt.empty()) label_detections(s);
  validate_scenario(s);
  return s;
}

/// True when dir holds a single scenario bundle.
inline bool is_bundle(const std::filesystem::path& dir) {
  return std::filesystem::is_regular_file(dir / "meta");
}

/// A bundle directory, or a directory whose immediate subdirectories are
/// bundles (loaded in name order).
inline std::vector<Scenario> load_collection(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a directory");
  if (is_bundle(dir)) return {load_bundle(dir)};
  std::vector<std::filesystem::path> subdirs;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && is_bundle(e.path())) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw DataError("'" + dir.string() + "' contains no scenario bundles");
  std::vector<Scenario> out;
  for (const auto& d : subdirs) out.push_back(load_bundle(d));
  return out;
}

}  // namespace sbtrack
