#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nerfloc/image.hpp"

namespace nerfloc {

struct Keypoint {
  double x = 0;
  double y = 0;
  double score = 0;
};

/// 256-bit binary descriptor.
using Descriptor = std::array<uint64_t, 4>;

struct Match {
  int query = 0;
  int reference = 0;
  int distance = 0;
  double ratio = 0;  ///< best / second-best distance
};

/// Keypoints stay this far from every image edge so the descriptor patch fits.
inline constexpr int kPatchMargin = 16;

struct DetectOptions {
  int max_count = 500;
  float fast_threshold = 0.05f;  ///< intensity units, images in [0,1]
  int nms_radius = 3;
};

struct MatchOptions {
  int max_distance = 64;
  double ratio_threshold = 0.8;
  bool cross_check = true;
};

/// FAST-9 corners, greedy non-max suppression in a square window (strongest
/// first, ties by (y, x)), then a parabolic subpixel offset from the score.
/// Returned in that order.
std::vector<Keypoint> detect_keypoints(const GrayImage& image, const DetectOptions& opts = {});
std::vector<Keypoint> detect_keypoints(const RgbImage& image, const DetectOptions& opts = {});

struct DescribedKeypoints {
  std::vector<Keypoint> keypoints;  ///< those that kept a descriptor
  std::vector<Descriptor> descriptors;
  size_t dropped = 0;  ///< keypoints too close to the border
};

/// Upright BRIEF-256 on a box-smoothed image.
DescribedKeypoints compute_descriptors(const GrayImage& image, const std::vector<Keypoint>& keypoints);
DescribedKeypoints compute_descriptors(const RgbImage& image, const std::vector<Keypoint>& keypoints);

/// detect_keypoints followed by compute_descriptors.
DescribedKeypoints extract_features(const RgbImage& image, const DetectOptions& opts = {});

int hamming_distance(const Descriptor& a, const Descriptor& b);

/// Nearest neighbour by Hamming distance with ratio and distance gates.
/// Equal distances resolve to the lower index. With cross_check both
/// directions must pass the gates and agree.
std::vector<Match> match_descriptors(const std::vector<Descriptor>& query, const std::vector<Descriptor>& reference,
                                     const MatchOptions& opts = {});

/// Debug output: JSON array of {qx, qy, rx, ry, distance}.
void write_matches_json(const std::string& path, const std::vector<Keypoint>& query_kp,
                        const std::vector<Keypoint>& ref_kp, const std::vector<Match>& matches);

/// Query and reference side by side with a line per match.
RgbImage draw_matches(const RgbImage& query, const RgbImage& reference, const std::vector<Keypoint>& query_kp,
                      const std::vector<Keypoint>& ref_kp, const std::vector<Match>& matches);

}  // namespace nerfloc
