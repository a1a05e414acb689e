#pragma once

// On-disk formats and the synthetic dataset generator.
//
// CTAPFEAT layout (little-endian):
//   "CTAPFEAT" | version u32 | n_units u32 | d_f u32 | n_units*d_f f32 (row-major)

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctap/core.hpp"
#include "ctap/error.hpp"
#include "ctap/rng.hpp"

namespace ctap {

inline constexpr std::array<char, 8> kFeatureMagic = {'C', 'T', 'A', 'P',
                                                      'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Unit-level features of one video, one row per unit.
struct FeatureSequence {
  std::string video_id;
  std::size_t n_units = 0;
  std::size_t d_f = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t unit) const {
    return {data.data() + unit * d_f, d_f};
  }

  void validate() const {
    if (data.size() != n_units * d_f) {
      throw Error(ErrorKind::Data, "feature matrix of " + video_id +
                                       " does not match n_units x d_f");
    }
    for (float v : data) {
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::Data, "non-finite feature in " + video_id);
      }
    }
  }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

/// Bounds-checked little-endian reader over an in-memory buffer.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DecodeError("truncated file");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }

  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return std::move(buffer).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "short write to " + path.string());
}

/// Shortest round-trip decimal form.
inline std::string format_real(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    fields.push_back(line.substr(pos, tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

/// Calls fn(line_number, line) for each record line, skipping blanks and '#'.
template <typename Fn>
void for_each_record(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    fn(line_no, line);
  }
}

}  // namespace detail

inline std::string encode_features(const FeatureSequence& seq) {
  seq.validate();
  if (seq.n_units > UINT32_MAX || seq.d_f > UINT32_MAX) {
    throw Error(ErrorKind::InvalidArgument, "feature dimensions exceed u32");
  }
  std::string out(kFeatureMagic.begin(), kFeatureMagic.end());
  detail::put_u32(out, kFeatureVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(seq.n_units));
  detail::put_u32(out, static_cast<std::uint32_t>(seq.d_f));
  out.reserve(out.size() + 4 * seq.data.size());
  for (float v : seq.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline FeatureSequence decode_features(std::string_view bytes,
                                       std::string video_id = {}) {
  detail::ByteReader reader(bytes);
  if (bytes.size() < kFeatureMagic.size() ||
      reader.take(kFeatureMagic.size()) !=
          std::string_view(kFeatureMagic.data(), kFeatureMagic.size())) {
    throw DecodeError("bad magic");
  }
  const std::uint32_t version = reader.u32();
  if (version != kFeatureVersion) {
    throw DecodeError("unsupported feature format version " + std::to_string(version));
  }
  FeatureSequence seq;
  seq.video_id = std::move(video_id);
  seq.n_units = reader.u32();
  seq.d_f = reader.u32();
  const std::uint64_t count = std::uint64_t{seq.n_units} * seq.d_f;
  if (count > reader.remaining() / 4) {
    throw DecodeError(count > UINT64_MAX / 4 ? "dimension overflow" : "truncated file");
  }
  seq.data.resize(count);
  for (auto& v : seq.data) v = std::bit_cast<float>(reader.u32());
  if (reader.remaining() != 0) throw DecodeError("trailing bytes after feature data");
  return seq;
}

inline void write_features(const FeatureSequence& seq, const std::filesystem::path& path) {
  detail::write_file(path, encode_features(seq));
}

inline FeatureSequence read_features(const std::filesystem::path& path,
                                     std::string video_id = {}) {
  return decode_features(detail::read_file(path), std::move(video_id));
}

// ---------------------------------------------------------------------------
// Tab-separated annotation and proposal records.

inline std::vector<GroundTruthSegment> parse_annotations(std::string_view text) {
  std::vector<GroundTruthSegment> out;
  detail::for_each_record(text, [&](std::size_t line_no, std::string_view line) {
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3 && fields.size() != 4) {
      throw ParseError(line_no, "expected 3 or 4 tab-separated fields");
    }
    UnitIndex start = 0;
    UnitIndex end = 0;
    if (!detail::parse_number(fields[1], start) || !detail::parse_number(fields[2], end)) {
      throw ParseError(line_no, "non-integer unit index");
    }
    if (start < 0 || end <= start) throw ParseError(line_no, "start must be < end and >= 0");
    std::optional<int> label;
    if (fields.size() == 4 && !fields[3].empty()) {
      int value = 0;
      if (!detail::parse_number(fields[3], value)) throw ParseError(line_no, "bad label");
      label = value;
    }
    out.push_back({std::string(fields[0]), Interval(start, end), label});
  });
  return out;
}

inline std::string format_annotations(std::span<const GroundTruthSegment> gts) {
  std::string out;
  for (const auto& gt : gts) {
    out += gt.video_id + '\t' + std::to_string(gt.interval.start()) + '\t' +
           std::to_string(gt.interval.end());
    if (gt.label) out += '\t' + std::to_string(*gt.label);
    out += '\n';
  }
  return out;
}

inline std::vector<GroundTruthSegment> read_annotations(const std::filesystem::path& path) {
  return parse_annotations(detail::read_file(path));
}

inline void write_annotations(std::span<const GroundTruthSegment> gts,
                              const std::filesystem::path& path) {
  detail::write_file(path, format_annotations(gts));
}

/// Canonical file order: video id, then descending score, then the NMS tie-break.
inline void sort_for_output(std::vector<Proposal>& proposals) {
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const Proposal& a, const Proposal& b) {
                     if (a.video_id != b.video_id) return a.video_id < b.video_id;
                     if (a.score != b.score) return a.score > b.score;
                     if (a.interval.start() != b.interval.start())
                       return a.interval.start() < b.interval.start();
                     return a.interval.length() > b.interval.length();
                   });
}

// Columns: video_id start end score source pate_score('-' if absent) adjusted(0/1)
inline std::string format_proposals(std::vector<Proposal> proposals) {
  sort_for_output(proposals);
  std::string out;
  for (const auto& p : proposals) {
    out += p.video_id;
    out += '\t' + std::to_string(p.interval.start());
    out += '\t' + std::to_string(p.interval.end());
    out += '\t' + detail::format_real(p.score);
    out += '\t';
    out += to_string(p.source);
    out += '\t' + (p.pate_score ? detail::format_real(*p.pate_score) : std::string("-"));
    out += p.adjusted ? "\t1\n" : "\t0\n";
  }
  return out;
}

inline std::vector<Proposal> parse_proposals(std::string_view text) {
  std::vector<Proposal> out;
  detail::for_each_record(text, [&](std::size_t line_no, std::string_view line) {
    const auto f = detail::split_tabs(line);
    if (f.size() != 7) throw ParseError(line_no, "expected 7 tab-separated fields");
    UnitIndex start = 0;
    UnitIndex end = 0;
    double score = 0.0;
    if (!detail::parse_number(f[1], start) || !detail::parse_number(f[2], end)) {
      throw ParseError(line_no, "non-integer unit index");
    }
    if (start < 0 || end <= start) throw ParseError(line_no, "start must be < end and >= 0");
    if (!detail::parse_number(f[3], score)) throw ParseError(line_no, "bad score");
    ProposalSource source;
    if (f[4] == "actionness") {
      source = ProposalSource::Actionness;
    } else if (f[4] == "sliding_window") {
      source = ProposalSource::SlidingWindow;
    } else {
      throw ParseError(line_no, "unknown source '" + std::string(f[4]) + "'");
    }
    std::optional<double> pate;
    if (f[5] != "-") {
      double value = 0.0;
      if (!detail::parse_number(f[5], value)) throw ParseError(line_no, "bad pate_score");
      pate = value;
    }
    if (f[6] != "0" && f[6] != "1") throw ParseError(line_no, "adjusted flag must be 0 or 1");
    out.push_back({std::string(f[0]), Interval(start, end), score, source, pate, f[6] == "1"});
  });
  return out;
}

inline void write_proposals(std::vector<Proposal> proposals, const std::filesystem::path& path) {
  detail::write_file(path, format_proposals(std::move(proposals)));
}

inline std::vector<Proposal> read_proposals(const std::filesystem::path& path) {
  return parse_proposals(detail::read_file(path));
}

template <typename T>
std::map<std::string, std::vector<T>> group_by_video(std::span<const T> items) {
  std::map<std::string, std::vector<T>> out;
  for (const auto& item : items) out[item.video_id].push_back(item);
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and manifests.

struct ManifestEntry {
  std::string video_id;
  std::filesystem::path features;
  std::size_t n_units = 0;
};

struct DatasetManifest {
  std::string split;
  std::filesystem::path annotations;
  std::vector<ManifestEntry> videos;
};

/// A fully loaded split: features for every video plus its annotations.
struct Dataset {
  std::string split;
  std::vector<FeatureSequence> videos;
  std::vector<GroundTruthSegment> annotations;

  std::vector<GroundTruthSegment> gts_for(const std::string& video_id) const {
    std::vector<GroundTruthSegment> out;
    for (const auto& gt : annotations) {
      if (gt.video_id == video_id) out.push_back(gt);
    }
    return out;
  }

  const FeatureSequence& video(const std::string& video_id) const {
    for (const auto& v : videos) {
      if (v.video_id == video_id) return v;
    }
    throw Error(ErrorKind::Data, "unknown video_id " + video_id);
  }

  void validate() const {
    std::vector<std::string> ids;
    for (const auto& v : videos) ids.push_back(v.video_id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
      throw Error(ErrorKind::Data, "duplicate video_id in dataset");
    }
    for (const auto& gt : annotations) {
      if (!std::binary_search(ids.begin(), ids.end(), gt.video_id)) {
        throw Error(ErrorKind::Data, "unknown video_id " + gt.video_id);
      }
      if (static_cast<std::size_t>(gt.interval.end()) > video(gt.video_id).n_units) {
        throw Error(ErrorKind::Data, "annotation beyond video end in " + gt.video_id);
      }
    }
  }
};

/// Paths inside a manifest are stored relative to the manifest's directory.
inline void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  doc["split"] = manifest.split;
  doc["annotations"] = manifest.annotations.generic_string();
  doc["videos"] = nlohmann::ordered_json::array();
  for (const auto& v : manifest.videos) {
    doc["videos"].push_back({{"video_id", v.video_id},
                             {"features", v.features.generic_string()},
                             {"n_units", v.n_units}});
  }
  detail::write_file(path, doc.dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  DatasetManifest manifest;
  try {
    const auto doc = nlohmann::json::parse(detail::read_file(path));
    manifest.split = doc.at("split").get<std::string>();
    manifest.annotations = doc.at("annotations").get<std::string>();
    for (const auto& v : doc.at("videos")) {
      manifest.videos.push_back({v.at("video_id").get<std::string>(),
                                 v.at("features").get<std::string>(),
                                 v.at("n_units").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return manifest;
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  Dataset dataset;
  dataset.split = manifest.split;
  for (const auto& entry : manifest.videos) {
    auto seq = read_features(base / entry.features, entry.video_id);
    if (seq.n_units != entry.n_units) {
      throw Error(ErrorKind::Data, "n_units mismatch for " + entry.video_id);
    }
    seq.validate();
    dataset.videos.push_back(std::move(seq));
  }
  dataset.annotations = read_annotations(base / manifest.annotations);
  dataset.validate();
  return dataset;
}

/// Writes features under <dir>/features/, annotations and the manifest.
/// Returns the manifest path.
inline std::filesystem::path save_dataset(const Dataset& dataset,
                                          const std::filesystem::path& dir) {
  DatasetManifest manifest;
  manifest.split = dataset.split;
  manifest.annotations = dataset.split + "_annotations.tsv";
  for (const auto& v : dataset.videos) {
    const std::filesystem::path rel = std::filesystem::path("features") / (v.video_id + ".feat");
    write_features(v, dir / rel);
    manifest.videos.push_back({v.video_id, rel, v.n_units});
  }
  write_annotations(dataset.annotations, dir / manifest.annotations);
  const auto path = dir / (dataset.split + "_manifest.json");
  write_manifest(manifest, path);
  return path;
}

// ---------------------------------------------------------------------------
// Synthetic data.

struct SynthConfig {
  std::size_t n_videos = 20;
  std::size_t units_min = 200;
  std::size_t units_max = 400;
  std::size_t segments_min = 1;
  std::size_t segments_max = 4;
  std::size_t segment_length_min = 12;
  std::size_t segment_length_max = 48;
  std::size_t d_f = 16;
  /// Distance between action and background means, in noise std units.
  double separation = 4.0;
  double failure_fraction = 0.0;
  std::uint64_t seed = 0;
  std::string split = "train";

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, m); };
    if (n_videos == 0) fail("synth.n_videos: must be >= 1");
    if (units_min == 0 || units_max < units_min) fail("synth.units: need 1 <= min <= max");
    if (segments_max < segments_min) fail("synth.segments: need min <= max");
    if (segment_length_min == 0 || segment_length_max < segment_length_min) {
      fail("synth.segment_length: need 1 <= min <= max");
    }
    if (segment_length_max > units_min) fail("synth.segment_length: max exceeds shortest video");
    if (d_f == 0) fail("synth.d_f: must be >= 1");
    if (!(separation >= 0.0) || !std::isfinite(separation)) fail("synth.separation: must be >= 0");
    if (!(failure_fraction >= 0.0 && failure_fraction <= 1.0)) {
      fail("synth.failure_fraction: must be in [0,1]");
    }
    if (split.empty()) fail("synth.split: must be non-empty");
  }
};

struct SyntheticDataset {
  Dataset dataset;
  /// Parallel to dataset.annotations: true when the segment's units were
  /// drawn from the background distribution.
  std::vector<bool> failed;
  std::vector<double> action_direction;
};

/// Unit-norm mean-shift direction; depends only on (seed, d_f) so every
/// split generated from one seed shares it.
inline std::vector<double> synthetic_direction(std::uint64_t seed, std::size_t d_f) {
  Rng rng(derive_seed(seed, "synth/direction"));
  std::vector<double> dir(d_f);
  double norm = 0.0;
  while (norm < 1e-12) {
    norm = 0.0;
    for (auto& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
  }
  norm = std::sqrt(norm);
  for (auto& v : dir) v /= norm;
  return dir;
}

inline SyntheticDataset generate_synthetic_dataset(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticDataset out;
  out.dataset.split = cfg.split;
  out.action_direction = synthetic_direction(cfg.seed, cfg.d_f);

  Rng layout(derive_seed(cfg.seed, "synth/layout/" + cfg.split));
  std::vector<std::size_t> lengths_of_video;
  for (std::size_t v = 0; v < cfg.n_videos; ++v) {
    std::array<char, 16> id{};
    std::snprintf(id.data(), id.size(), "%04zu", v);
    const std::string video_id = cfg.split + "_" + id.data();
    const auto n_units = static_cast<std::size_t>(layout.uniform_int(
        static_cast<std::int64_t>(cfg.units_min), static_cast<std::int64_t>(cfg.units_max)));
    const auto n_segments = static_cast<std::size_t>(layout.uniform_int(
        static_cast<std::int64_t>(cfg.segments_min), static_cast<std::int64_t>(cfg.segments_max)));
    std::vector<std::int64_t> lengths(n_segments);
    std::int64_t occupied = 0;
    for (auto& len : lengths) {
      len = layout.uniform_int(static_cast<std::int64_t>(cfg.segment_length_min),
                               static_cast<std::int64_t>(cfg.segment_length_max));
      occupied += len;
    }
    // Segments keep at least one background unit between them.
    const std::int64_t gaps_required = n_segments > 0 ? static_cast<std::int64_t>(n_segments) - 1 : 0;
    const std::int64_t free = static_cast<std::int64_t>(n_units) - occupied - gaps_required;
    if (free < 0) {
      throw Error(ErrorKind::Data, "infeasible segment packing in video " + std::to_string(v));
    }
    std::vector<std::int64_t> cuts(n_segments);
    for (auto& c : cuts) c = layout.uniform_int(0, free);
    std::sort(cuts.begin(), cuts.end());
    std::int64_t pos = 0;
    std::int64_t prev_cut = 0;
    for (std::size_t s = 0; s < n_segments; ++s) {
      pos += cuts[s] - prev_cut + (s > 0 ? 1 : 0);
      prev_cut = cuts[s];
      out.dataset.annotations.push_back({video_id, Interval(pos, pos + lengths[s]), std::nullopt});
      pos += lengths[s];
    }
    FeatureSequence seq;
    seq.video_id = video_id;
    seq.n_units = n_units;
    seq.d_f = cfg.d_f;
    out.dataset.videos.push_back(std::move(seq));
  }

  const std::size_t n_gts = out.dataset.annotations.size();
  out.failed.assign(n_gts, false);
  {
    Rng pick(derive_seed(cfg.seed, "synth/failures/" + cfg.split));
    std::vector<std::size_t> order(n_gts);
    for (std::size_t i = 0; i < n_gts; ++i) order[i] = i;
    pick.shuffle(order);
    const auto n_failed = static_cast<std::size_t>(
        std::llround(cfg.failure_fraction * static_cast<double>(n_gts)));
    for (std::size_t i = 0; i < n_failed; ++i) out.failed[order[i]] = true;
  }

  Rng noise(derive_seed(cfg.seed, "synth/features/" + cfg.split));
  std::size_t gt_cursor = 0;
  for (auto& seq : out.dataset.videos) {
    std::vector<bool> action(seq.n_units, false);
    for (; gt_cursor < n_gts && out.dataset.annotations[gt_cursor].video_id == seq.video_id;
         ++gt_cursor) {
      if (out.failed[gt_cursor]) continue;
      const auto& iv = out.dataset.annotations[gt_cursor].interval;
      for (auto u = iv.start(); u < iv.end(); ++u) action[static_cast<std::size_t>(u)] = true;
    }
    seq.data.resize(seq.n_units * seq.d_f);
    for (std::size_t u = 0; u < seq.n_units; ++u) {
      const double shift = action[u] ? cfg.separation : 0.0;
      for (std::size_t d = 0; d < seq.d_f; ++d) {
        seq.data[u * seq.d_f + d] =
            static_cast<float>(noise.normal() + shift * out.action_direction[d]);
      }
    }
  }
  return out;
}

}  // namespace ctap
