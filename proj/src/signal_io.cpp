#include "twinforge/signal_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace twinforge {

namespace {

constexpr char kRecordMagic[4] = {'T', 'W', 'F', '1'};

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void RawRecord::validate() const {
  require(channels >= 1, "record must have at least one channel");
  require(samples_per_channel >= 2, "record must have at least two samples per channel");
  require(sample_rate_hz > 0.0, "sample rate must be positive");
  require(data.rows() == channels && data.cols() == samples_per_channel,
          "record data shape does not match header");
  for (int c = 0; c < channels; ++c) {
    for (std::int64_t i = 0; i < samples_per_channel; ++i) {
      if (!std::isfinite(data(c, i))) {
        throw std::runtime_error("non-finite sample at (" + std::to_string(c) + "," +
                                 std::to_string(i) + ")");
      }
    }
  }
}

void PreprocessConfig::validate() const {
  require(segment_length >= 2, "segment_length must be >= 2");
  require(overlap >= 0 && overlap < segment_length, "overlap must satisfy 0 <= overlap < segment_length");
  require(augmentation_noise_std >= 0.0, "augmentation_noise_std must be >= 0");
}

void SegmentSet::recount() {
  counts_per_label.clear();
  for (const auto& s : segments) ++counts_per_label[s.condition_label];
}

RawRecord load_record(const std::filesystem::path& path, RecordFormat format) {
  RawRecord rec;
  rec.source_tag = path.stem().string();
  if (format == RecordFormat::csv) {
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open record: " + path.string());
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "malformed header: empty file");
    {
      std::istringstream hs(line);
      char c1 = 0, c2 = 0;
      long long channels = 0, samples = 0;
      double rate = 0.0;
      hs >> channels >> c1 >> samples >> c2 >> rate;
      require(!hs.fail() && c1 == ',' && c2 == ',',
              "malformed header: expected 'channels,samples,rate_hz'");
      require(channels >= 1 && samples >= 2 && rate > 0.0, "malformed header: invalid values");
      rec.channels = static_cast<int>(channels);
      rec.samples_per_channel = samples;
      rec.sample_rate_hz = rate;
    }
    rec.data.resize(rec.channels, rec.samples_per_channel);
    for (std::int64_t i = 0; i < rec.samples_per_channel; ++i) {
      require(static_cast<bool>(std::getline(in, line)),
              "channel length mismatch: expected " + std::to_string(rec.samples_per_channel) +
                  " rows, got " + std::to_string(i));
      const char* p = line.c_str();
      for (int c = 0; c < rec.channels; ++c) {
        if (c > 0) {
          require(*p == ',', "malformed row " + std::to_string(i + 2));
          ++p;
        }
        char* end = nullptr;
        const double v = std::strtod(p, &end);  // accepts nan/inf tokens
        require(end != p, "malformed row " + std::to_string(i + 2));
        p = end;
        rec.data(c, i) = v;
      }
    }
  } else {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open record: " + path.string());
    char magic[4];
    in.read(magic, 4);
    require(in.good() && std::memcmp(magic, kRecordMagic, 4) == 0,
            "malformed header: bad magic in " + path.string());
    std::uint32_t channels = 0;
    std::uint64_t samples = 0;
    double rate = 0.0;
    read_raw(in, channels);
    read_raw(in, samples);
    read_raw(in, rate);
    require(in.good(), "malformed header: truncated");
    require(channels >= 1 && samples >= 2 && rate > 0.0, "malformed header: invalid values");
    rec.channels = static_cast<int>(channels);
    rec.samples_per_channel = static_cast<std::int64_t>(samples);
    rec.sample_rate_hz = rate;
    rec.data.resize(rec.channels, rec.samples_per_channel);
    // channel-major payload: read one contiguous channel at a time
    std::vector<double> buf(static_cast<std::size_t>(rec.samples_per_channel));
    for (int c = 0; c < rec.channels; ++c) {
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
      require(in.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(double)),
              "channel length mismatch: truncated data");
      for (std::int64_t i = 0; i < rec.samples_per_channel; ++i) rec.data(c, i) = buf[static_cast<std::size_t>(i)];
    }
  }
  rec.validate();
  return rec;
}

void save_record(const RawRecord& record, const std::filesystem::path& path, RecordFormat format) {
  record.validate();
  if (format == RecordFormat::csv) {
    std::ostringstream out;
    out << record.channels << ',' << record.samples_per_channel << ','
        << format_double(record.sample_rate_hz) << '\n';
    for (std::int64_t i = 0; i < record.samples_per_channel; ++i) {
      for (int c = 0; c < record.channels; ++c) {
        if (c > 0) out << ',';
        out << format_double(record.data(c, i));
      }
      out << '\n';
    }
    write_text_file(path, out.str());
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot write record: " + path.string());
    out.write(kRecordMagic, 4);
    write_raw(out, static_cast<std::uint32_t>(record.channels));
    write_raw(out, static_cast<std::uint64_t>(record.samples_per_channel));
    write_raw(out, record.sample_rate_hz);
    std::vector<double> buf(static_cast<std::size_t>(record.samples_per_channel));
    for (int c = 0; c < record.channels; ++c) {
      for (std::int64_t i = 0; i < record.samples_per_channel; ++i) buf[static_cast<std::size_t>(i)] = record.data(c, i);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    require(static_cast<bool>(out), "short write: " + path.string());
  }
}

VectorXd detrend_linear(const VectorXd& values) {
  const auto n = values.size();
  require(n >= 2, "detrend_linear needs length >= 2");
  // Least-squares line via the closed-form normal equations on t = 0..n-1.
  const double nn = static_cast<double>(n);
  const double t_mean = (nn - 1.0) / 2.0;
  const double y_mean = values.mean();
  double sxy = 0.0, sxx = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - t_mean;
    sxy += dt * (values[i] - y_mean);
    sxx += dt * dt;
  }
  const double slope = sxy / sxx;
  const double intercept = y_mean - slope * t_mean;
  VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = values[i] - (intercept + slope * static_cast<double>(i));
  return out;
}

VectorXd standardize(const VectorXd& values) {
  const auto n = values.size();
  require(n >= 1, "standardize needs non-empty input");
  const double mean = values.mean();
  const double var = (values.array() - mean).square().sum() / static_cast<double>(n);
  const double sd = std::sqrt(var);
  require(sd > 1e-12, "standardize: near-constant input (std <= 1e-12)");
  return (values.array() - mean) / sd;
}

std::int64_t window_count(std::int64_t samples, int segment_length, int overlap) {
  if (samples < segment_length) return 0;
  const std::int64_t step = segment_length - overlap;
  return (samples - segment_length) / step + 1;
}

SegmentSet segment_record(const RawRecord& record, const PreprocessConfig& cfg, int label) {
  record.validate();
  cfg.validate();
  require(label == 0 || label == 1, "condition label must be 0 or 1");
  require(record.samples_per_channel >= cfg.segment_length,
          "record shorter than one window (" + std::to_string(record.samples_per_channel) +
              " < " + std::to_string(cfg.segment_length) + ")");

  MatrixXd data = record.data;
  if (cfg.detrend_whole_record) {
    for (int c = 0; c < record.channels; ++c) {
      data.row(c) = detrend_linear(data.row(c).transpose()).transpose();
    }
  }

  const std::int64_t step = cfg.segment_length - cfg.overlap;
  const std::int64_t windows = window_count(record.samples_per_channel, cfg.segment_length, cfg.overlap);

  SegmentSet set;
  set.sample_rate_hz = record.sample_rate_hz;
  set.segments.reserve(static_cast<std::size_t>(windows) * static_cast<std::size_t>(record.channels));
  for (int c = 0; c < record.channels; ++c) {
    for (std::int64_t w = 0; w < windows; ++w) {
      Segment seg;
      seg.values = data.row(c).segment(w * step, cfg.segment_length).transpose();
      if (cfg.detrend) seg.values = detrend_linear(seg.values);
      if (cfg.standardize) {
        seg.values = standardize(seg.values);
      } else {
        seg.values.array() -= seg.values.mean();  // mean removal stays on
      }
      seg.channel_index = c;
      seg.window_index = static_cast<int>(w);
      seg.condition_label = label;
      seg.source_tag = record.source_tag;
      set.segments.push_back(std::move(seg));
    }
  }
  set.recount();
  return set;
}

Segment add_training_noise(const Segment& segment, double std, Rng& rng) {
  require(std >= 0.0, "noise std must be >= 0");
  if (std == 0.0) return segment;
  Segment out = segment;
  for (Eigen::Index i = 0; i < out.values.size(); ++i) out.values[i] += rng.normal(0.0, std);
  return out;
}

SegmentSet add_training_noise(const SegmentSet& set, double std, std::uint64_t seed) {
  SegmentSet out = set;
  if (std == 0.0) return out;
  for (auto& seg : out.segments) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(seg.condition_label),
                               static_cast<std::uint64_t>(seg.channel_index),
                               static_cast<std::uint64_t>(seg.window_index)}));
    seg = add_training_noise(seg, std, rng);
  }
  return out;
}

void save_segment_set(const SegmentSet& set, const std::filesystem::path& data_path,
                      const std::filesystem::path& manifest_path, const PreprocessConfig& cfg) {
  require(!set.segments.empty(), "cannot save empty segment set");
  const int len = set.segment_length();
  RawRecord rec;
  rec.channels = static_cast<int>(set.segments.size());
  rec.samples_per_channel = len;
  rec.sample_rate_hz = set.sample_rate_hz;
  rec.source_tag = "segment-set";
  rec.data.resize(rec.channels, len);
  for (int i = 0; i < rec.channels; ++i) {
    require(set.segments[static_cast<std::size_t>(i)].values.size() == len,
            "segment set has inconsistent lengths");
    rec.data.row(i) = set.segments[static_cast<std::size_t>(i)].values.transpose();
  }
  save_record(rec, data_path, RecordFormat::f64_binary);

  nlohmann::json j;
  j["kind"] = "twinforge-segment-set";
  j["segment_length"] = len;
  j["sample_rate_hz"] = set.sample_rate_hz;
  j["data_file"] = data_path.filename().string();
  j["data_hash"] = hex64(hash_file(data_path));
  j["preprocess"] = {{"segment_length", cfg.segment_length},
                     {"overlap", cfg.overlap},
                     {"detrend", cfg.detrend},
                     {"detrend_whole_record", cfg.detrend_whole_record},
                     {"standardize", cfg.standardize},
                     {"augmentation_noise_std", cfg.augmentation_noise_std}};
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : set.segments) {
    segs.push_back({{"channel", s.channel_index},
                    {"window", s.window_index},
                    {"label", s.condition_label},
                    {"source_tag", s.source_tag}});
  }
  j["segments"] = std::move(segs);
  write_text_file(manifest_path, j.dump(2) + "\n");
}

SegmentSet load_segment_set(const std::filesystem::path& manifest_path) {
  const auto j = nlohmann::json::parse(read_text_file(manifest_path));
  require(j.value("kind", "") == "twinforge-segment-set", "not a segment-set manifest");
  const auto data_path = manifest_path.parent_path() / j.at("data_file").get<std::string>();
  const auto expect_hash = j.at("data_hash").get<std::string>();
  require(hex64(hash_file(data_path)) == expect_hash,
          "segment data hash mismatch (stale or tampered): " + data_path.string());
  RawRecord rec = load_record(data_path, RecordFormat::f64_binary);
  const auto& segs = j.at("segments");
  require(static_cast<int>(segs.size()) == rec.channels, "manifest/segment count mismatch");
  SegmentSet set;
  set.sample_rate_hz = rec.sample_rate_hz;
  set.segments.resize(segs.size());
  for (std::size_t i = 0; i < segs.size(); ++i) {
    auto& s = set.segments[i];
    s.values = rec.data.row(static_cast<int>(i)).transpose();
    s.channel_index = segs[i].at("channel").get<int>();
    s.window_index = segs[i].at("window").get<int>();
    s.condition_label = segs[i].at("label").get<int>();
    s.source_tag = segs[i].at("source_tag").get<std::string>();
  }
  set.recount();
  return set;
}

}  // namespace twinforge
