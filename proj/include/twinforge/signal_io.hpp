#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "twinforge/common.hpp"

namespace twinforge {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Multi-channel acceleration record, channel-major.
struct RawRecord {
  int channels = 0;
  std::int64_t samples_per_channel = 0;
  double sample_rate_hz = 0.0;
  MatrixXd data;  // channels x samples
  std::string source_tag;

  void validate() const;
};

// One preprocessed vibration window; the unit of training data.
struct Segment {
  VectorXd values;
  int channel_index = 0;
  int window_index = 0;
  int condition_label = 0;  // 0 or 1
  std::string source_tag;
};

struct PreprocessConfig {
  int segment_length = 1201;
  int overlap = 0;
  bool detrend = true;            // per-window linear detrend
  bool detrend_whole_record = false;
  bool standardize = true;
  double augmentation_noise_std = 0.0;

  void validate() const;
};

struct SegmentSet {
  std::vector<Segment> segments;
  double sample_rate_hz = 0.0;
  std::map<int, std::int64_t> counts_per_label;

  int segment_length() const {
    return segments.empty() ? 0 : static_cast<int>(segments.front().values.size());
  }
  void recount();
};

enum class RecordFormat { csv, f64_binary };

RawRecord load_record(const std::filesystem::path& path, RecordFormat format);
void save_record(const RawRecord& record, const std::filesystem::path& path, RecordFormat format);

// Removes the least-squares line a + b*t (t = 0..n-1).
VectorXd detrend_linear(const VectorXd& values);

// Zero mean, unit population standard deviation.
VectorXd standardize(const VectorXd& values);

// Windows every channel, applies detrend -> mean removal/standardize in that
// order, and attaches the condition label.
SegmentSet segment_record(const RawRecord& record, const PreprocessConfig& cfg, int label);

// Adds iid Gaussian noise; std = 0 returns the segment unchanged.
Segment add_training_noise(const Segment& segment, double std, Rng& rng);

// Applies add_training_noise to a whole set with a per-segment stream derived
// from (seed, channel, window), so the result is schedule independent.
SegmentSet add_training_noise(const SegmentSet& set, double std, std::uint64_t seed);

std::int64_t window_count(std::int64_t samples, int segment_length, int overlap);

// Segment sets serialize as the record binary layout (one segment per
// channel) plus a JSON manifest with labels, tags, and the preprocess config.
void save_segment_set(const SegmentSet& set, const std::filesystem::path& data_path,
                      const std::filesystem::path& manifest_path,
                      const PreprocessConfig& cfg);
SegmentSet load_segment_set(const std::filesystem::path& manifest_path);

}  // namespace twinforge
