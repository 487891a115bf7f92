#include "nerfloc/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "nerfloc/error.hpp"

namespace nerfloc {

namespace {

// Bresenham circle of radius 3, clockwise from 12 o'clock.
constexpr int kCircle[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},  {3, 1},  {2, 2},  {1, 3},
                                {0, 3},  {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};

constexpr int kBriefPairs[256][4] = {
#include "brief_pattern.inc"
};

constexpr int kSmoothKernel = 5;

// Longest cyclic run of set bits in a 16-bit mask.
int longest_arc(uint32_t mask) {
  if (mask == 0xffff) return 16;
  const uint32_t doubled = mask | (mask << 16);
  int best = 0, run = 0;
  for (int i = 0; i < 32; ++i) {
    run = (doubled >> i) & 1u ? run + 1 : 0;
    best = std::max(best, run);
  }
  return std::min(best, 16);
}

// Returns the corner score, or 0 if the pixel is not a FAST-9 corner.
float fast_score(const GrayImage& img, int x, int y, float t) {
  const float p = img.at(x, y);
  uint32_t brighter = 0, darker = 0;
  float sum_b = 0, sum_d = 0;
  for (int k = 0; k < 16; ++k) {
    const float v = img.at(x + kCircle[k][0], y + kCircle[k][1]);
    if (v > p + t) {
      brighter |= 1u << k;
      sum_b += v - p - t;
    } else if (v < p - t) {
      darker |= 1u << k;
      sum_d += p - v - t;
    }
  }
  float score = 0;
  if (longest_arc(brighter) >= 9) score = std::max(score, sum_b);
  if (longest_arc(darker) >= 9) score = std::max(score, sum_d);
  return score;
}

bool before(const Keypoint& a, const Keypoint& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

bool inside_margin(const Keypoint& k, int w, int h) {
  return k.x >= kPatchMargin && k.y >= kPatchMargin && k.x <= w - 1 - kPatchMargin && k.y <= h - 1 - kPatchMargin;
}

// Best and second-best distances from row i of `from` to all of `to`.
struct Nearest {
  int index = -1;
  int best = std::numeric_limits<int>::max();
  int second = std::numeric_limits<int>::max();

  double ratio() const {
    if (second == std::numeric_limits<int>::max()) return 0.0;
    if (second == 0) return 1.0;
    return double(best) / double(second);
  }
};

std::vector<Nearest> nearest_all(const std::vector<Descriptor>& from, const std::vector<Descriptor>& to) {
  std::vector<Nearest> out(from.size());
  for (size_t i = 0; i < from.size(); ++i) {
    Nearest& n = out[i];
    for (size_t j = 0; j < to.size(); ++j) {
      const int d = hamming_distance(from[i], to[j]);
      if (d < n.best) {
        n.second = n.best;
        n.best = d;
        n.index = int(j);
      } else if (d < n.second) {
        n.second = d;
      }
    }
  }
  return out;
}

bool passes(const Nearest& n, const MatchOptions& opts) {
  return n.index >= 0 && n.best <= opts.max_distance && n.ratio() <= opts.ratio_threshold;
}

void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, const float rgb[3]) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x0 >= 0 && y0 >= 0 && x0 < img.width && y0 < img.height)
      for (int c = 0; c < 3; ++c) img.at(x0, y0, c) = rgb[c];
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

}  // namespace

std::vector<Keypoint> detect_keypoints(const GrayImage& image, const DetectOptions& opts) {
  const int w = image.width, h = image.height;
  if (w < 2 * kPatchMargin || h < 2 * kPatchMargin) throw Error(ErrorCode::TooSmall, "image smaller than 32x32");
  if (opts.max_count < 0 || opts.nms_radius < 0 || !(opts.fast_threshold >= 0))
    throw Error(ErrorCode::InvalidArgument, "bad detector options");

  GrayImage score(w, h, 0.f);
  for (int y = kPatchMargin; y < h - kPatchMargin; ++y)
    for (int x = kPatchMargin; x < w - kPatchMargin; ++x) score.at(x, y) = fast_score(image, x, y, opts.fast_threshold);

  // Greedy suppression: strongest first, ties in (y, x) order; a candidate
  // survives if no accepted corner lies within the square window.
  std::vector<Keypoint> cand;
  for (int y = kPatchMargin; y < h - kPatchMargin; ++y)
    for (int x = kPatchMargin; x < w - kPatchMargin; ++x)
      if (score.at(x, y) > 0) cand.push_back({double(x), double(y), double(score.at(x, y))});
  std::sort(cand.begin(), cand.end(), before);

  auto offset = [](double m, double c, double p) {
    const double den = m - 2 * c + p;
    return den < 0 ? std::clamp(0.5 * (m - p) / den, -0.5, 0.5) : 0.0;
  };
  std::vector<char> taken(size_t(w) * h, 0);
  std::vector<Keypoint> kps;
  const int r = opts.nms_radius;
  for (const Keypoint& c : cand) {
    if (int(kps.size()) >= opts.max_count) break;
    const int x = int(c.x), y = int(c.y);
    bool free = true;
    for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r) && free; ++yy)
      for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx)
        if (taken[size_t(yy) * w + xx]) {
          free = false;
          break;
        }
    if (!free) continue;
    taken[size_t(y) * w + x] = 1;
    // Parabola through the scores on either side, per axis.
    const double s = score.at(x, y);
    const double fx = offset(score.at(x - 1, y), s, score.at(x + 1, y));
    const double fy = offset(score.at(x, y - 1), s, score.at(x, y + 1));
    kps.push_back({std::clamp(x + fx, double(kPatchMargin), double(w - 1 - kPatchMargin)),
                   std::clamp(y + fy, double(kPatchMargin), double(h - 1 - kPatchMargin)), c.score});
  }
  return kps;
}

std::vector<Keypoint> detect_keypoints(const RgbImage& image, const DetectOptions& opts) {
  return detect_keypoints(to_gray(image), opts);
}

DescribedKeypoints compute_descriptors(const GrayImage& image, const std::vector<Keypoint>& keypoints) {
  DescribedKeypoints out;
  const GrayImage smooth = box_blur(image, kSmoothKernel);
  for (const Keypoint& k : keypoints) {
    if (!inside_margin(k, image.width, image.height)) {
      ++out.dropped;
      continue;
    }
    const int x = int(std::lround(k.x)), y = int(std::lround(k.y));
    Descriptor d{};
    for (int b = 0; b < 256; ++b) {
      const int* p = kBriefPairs[b];
      if (smooth.at(x + p[0], y + p[1]) < smooth.at(x + p[2], y + p[3])) d[b >> 6] |= uint64_t(1) << (b & 63);
    }
    out.keypoints.push_back(k);
    out.descriptors.push_back(d);
  }
  return out;
}

DescribedKeypoints compute_descriptors(const RgbImage& image, const std::vector<Keypoint>& keypoints) {
  return compute_descriptors(to_gray(image), keypoints);
}

DescribedKeypoints extract_features(const RgbImage& image, const DetectOptions& opts) {
  const GrayImage gray = to_gray(image);
  return compute_descriptors(gray, detect_keypoints(gray, opts));
}

int hamming_distance(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

std::vector<Match> match_descriptors(const std::vector<Descriptor>& query, const std::vector<Descriptor>& reference,
                                     const MatchOptions& opts) {
  std::vector<Match> out;
  if (query.empty() || reference.empty()) return out;
  const auto fwd = nearest_all(query, reference);
  std::vector<Nearest> bwd;
  if (opts.cross_check) bwd = nearest_all(reference, query);
  for (size_t i = 0; i < query.size(); ++i) {
    const Nearest& n = fwd[i];
    if (!passes(n, opts)) continue;
    if (opts.cross_check) {
      const Nearest& m = bwd[size_t(n.index)];
      if (m.index != int(i) || !passes(m, opts)) continue;
    }
    out.push_back({int(i), n.index, n.best, n.ratio()});
  }
  return out;
}

void write_matches_json(const std::string& path, const std::vector<Keypoint>& query_kp,
                        const std::vector<Keypoint>& ref_kp, const std::vector<Match>& matches) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Match& m : matches) {
    const Keypoint& q = query_kp.at(size_t(m.query));
    const Keypoint& r = ref_kp.at(size_t(m.reference));
    arr.push_back({{"qx", q.x}, {"qy", q.y}, {"rx", r.x}, {"ry", r.y}, {"distance", m.distance}});
  }
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  os << arr.dump(1) << "\n";
}

RgbImage draw_matches(const RgbImage& query, const RgbImage& reference, const std::vector<Keypoint>& query_kp,
                      const std::vector<Keypoint>& ref_kp, const std::vector<Match>& matches) {
  RgbImage out(query.width + reference.width, std::max(query.height, reference.height));
  for (int y = 0; y < query.height; ++y)
    for (int x = 0; x < query.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = query.at(x, y, c);
  for (int y = 0; y < reference.height; ++y)
    for (int x = 0; x < reference.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(query.width + x, y, c) = reference.at(x, y, c);
  const float line[3] = {1.f, 0.f, 0.f};
  const float dot[3] = {0.f, 1.f, 0.f};
  for (const Match& m : matches) {
    const Keypoint& q = query_kp.at(size_t(m.query));
    const Keypoint& r = ref_kp.at(size_t(m.reference));
    const int qx = int(std::lround(q.x)), qy = int(std::lround(q.y));
    const int rx = query.width + int(std::lround(r.x)), ry = int(std::lround(r.y));
    draw_line(out, qx, qy, rx, ry, line);
    draw_line(out, qx - 1, qy, qx + 1, qy, dot);
    draw_line(out, rx - 1, ry, rx + 1, ry, dot);
  }
  return out;
}

}  // namespace nerfloc
