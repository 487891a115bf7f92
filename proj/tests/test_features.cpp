#include <bitset>
#include <fstream>

#include <json.hpp>

#include "nerfloc/features.hpp"
#include "nerfloc/render.hpp"
#include "nerfloc/synthdata.hpp"
#include "test_support.hpp"

using namespace nerfloc;

namespace {

GrayImage textured(int w, int h, uint64_t seed) {
  GrayImage img(w, h);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& v : img.data) v = u(rng);
  return box_blur(img, 3);
}

// Segment test written out directly: some run of 9 contiguous circle pixels
// all brighter or all darker.
float naive_fast(const GrayImage& img, int x, int y, float t) {
  static const int c[16][2] = {{0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},  {3, 1},  {2, 2},  {1, 3},
                               {0, 3},  {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};
  const float p = img.at(x, y);
  float v[16];
  for (int k = 0; k < 16; ++k) v[k] = img.at(x + c[k][0], y + c[k][1]);
  float best = 0;
  for (int sign : {1, -1}) {
    bool corner = false;
    for (int s = 0; s < 16 && !corner; ++s) {
      bool all = true;
      for (int k = 0; k < 9; ++k) {
        const float d = sign * (v[(s + k) % 16] - p);
        all = all && d > t;
      }
      corner = all;
    }
    if (!corner) continue;
    float sum = 0;
    for (int k = 0; k < 16; ++k) {
      const float d = sign * (v[k] - p);
      if (d > t) sum += (sign > 0 ? v[k] - p : p - v[k]) - t;
    }
    best = std::max(best, sum);
  }
  return best;
}

Descriptor bits(std::initializer_list<int> set) {
  Descriptor d{};
  for (int b : set) d[size_t(b >> 6)] |= uint64_t(1) << (b & 63);
  return d;
}

Descriptor with_distance(const Descriptor& base, int count, int offset = 0) {
  Descriptor d = base;
  for (int k = 0; k < count; ++k) {
    const int b = (offset + k) % 256;
    d[size_t(b >> 6)] ^= uint64_t(1) << (b & 63);
  }
  return d;
}

}  // namespace

TEST_CASE("detector matches a direct segment test with non-max suppression") {
  const GrayImage img = textured(80, 64, 31);
  DetectOptions o;
  o.max_count = 100000;
  o.fast_threshold = 0.03f;
  const auto kps = detect_keypoints(img, o);
  REQUIRE(!kps.empty());

  std::vector<Keypoint> cand;
  for (int y = kPatchMargin; y < 64 - kPatchMargin; ++y)
    for (int x = kPatchMargin; x < 80 - kPatchMargin; ++x) {
      const float s = naive_fast(img, x, y, o.fast_threshold);
      if (s > 0) cand.push_back({double(x), double(y), double(s)});
    }
  std::sort(cand.begin(), cand.end(), [](const Keypoint& a, const Keypoint& b) {
    return std::make_tuple(-a.score, a.y, a.x) < std::make_tuple(-b.score, b.y, b.x);
  });
  std::vector<Keypoint> expected;
  for (const auto& c : cand) {
    bool clear = true;
    for (const auto& e : expected) clear = clear && std::max(std::abs(e.x - c.x), std::abs(e.y - c.y)) > 3;
    if (clear) expected.push_back(c);
  }
  REQUIRE(kps.size() == expected.size());
  for (size_t i = 0; i < kps.size(); ++i) {
    CHECK(std::abs(kps[i].x - expected[i].x) <= 0.5);
    CHECK(std::abs(kps[i].y - expected[i].y) <= 0.5);
    CHECK(kps[i].score == doctest::Approx(expected[i].score).epsilon(1e-5));
  }

  o.max_count = 5;
  const auto top = detect_keypoints(img, o);
  REQUIRE(top.size() == 5);
  for (size_t i = 0; i < 5; ++i) CHECK(top[i].x == kps[i].x);
}

TEST_CASE("square corners are detected and flat images give nothing") {
  GrayImage img(64, 64, 0.1f);
  for (int y = 24; y < 40; ++y)
    for (int x = 24; x < 40; ++x) img.at(x, y) = 0.9f;
  const auto kps = detect_keypoints(img);
  REQUIRE(kps.size() == 4);
  for (const auto& k : kps) {
    const bool near_x = std::abs(k.x - 24) <= 1 || std::abs(k.x - 39) <= 1;
    const bool near_y = std::abs(k.y - 24) <= 1 || std::abs(k.y - 39) <= 1;
    CHECK(near_x);
    CHECK(near_y);
  }
  CHECK(detect_keypoints(GrayImage(64, 64, 0.5f)).empty());

  GrayImage small(48, 48, 0.1f);
  for (int y = 22; y < 27; ++y)
    for (int x = 22; x < 27; ++x) small.at(x, y) = 0.9f;
  const auto sk = detect_keypoints(small);
  CHECK(sk.size() >= 4);
  for (const auto& k : sk) {
    CHECK(k.x > 19);
    CHECK(k.x < 30);
    CHECK(k.y > 19);
    CHECK(k.y < 30);
  }
  CHECK_THROWS_CODE(detect_keypoints(GrayImage(31, 64)), ErrorCode::TooSmall);
  DetectOptions bad;
  bad.nms_radius = -1;
  CHECK_THROWS_CODE(detect_keypoints(img, bad), ErrorCode::InvalidArgument);
}

TEST_CASE("keypoints and descriptors respect the patch margin") {
  const GrayImage img = textured(96, 72, 32);
  for (const auto& k : detect_keypoints(img)) {
    CHECK(k.x >= kPatchMargin);
    CHECK(k.y >= kPatchMargin);
    CHECK(k.x <= 96 - 1 - kPatchMargin);
    CHECK(k.y <= 72 - 1 - kPatchMargin);
  }
  const auto d = compute_descriptors(img, {{5, 40, 1}, {40, 40, 1}, {90, 40, 1}, {40, 71, 1}});
  CHECK(d.keypoints.size() == 1);
  CHECK(d.dropped == 3);
}

TEST_CASE("descriptors follow integer image translation") {
  const GrayImage img = textured(120, 100, 33);
  GrayImage shifted(120, 100);
  const int sx = 7, sy = -4;
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 120; ++x) shifted.at(x, y) = img.at(std::clamp(x - sx, 0, 119), std::clamp(y - sy, 0, 99));
  const std::vector<Keypoint> k1 = {{50, 50, 1}, {60, 45, 1}}, k2 = {{57, 46, 1}, {67, 41, 1}};
  const auto a = compute_descriptors(img, k1), b = compute_descriptors(shifted, k2);
  REQUIRE(a.descriptors.size() == 2);
  REQUIRE(b.descriptors.size() == 2);
  CHECK(hamming_distance(a.descriptors[0], b.descriptors[0]) == 0);
  CHECK(hamming_distance(a.descriptors[1], b.descriptors[1]) == 0);
  CHECK(hamming_distance(a.descriptors[0], a.descriptors[1]) > 40);
}

TEST_CASE("hamming distance counts differing bits") {
  std::mt19937_64 rng(34);
  for (int k = 0; k < 50; ++k) {
    const Descriptor a{rng(), rng(), rng(), rng()}, b{rng(), rng(), rng(), rng()};
    size_t expected = 0;
    for (int i = 0; i < 4; ++i) expected += std::bitset<64>(a[size_t(i)] ^ b[size_t(i)]).count();
    CHECK(hamming_distance(a, b) == int(expected));
  }
  CHECK(hamming_distance(bits({0, 255}), bits({255})) == 1);
}

TEST_CASE("matching gates on distance, ratio and cross-check") {
  const Descriptor base{};
  MatchOptions o;
  SUBCASE("clear nearest neighbour") {
    const std::vector<Descriptor> q{with_distance(base, 3)};
    const std::vector<Descriptor> r{with_distance(base, 100, 50), base};
    const auto m = match_descriptors(q, r, o);
    REQUIRE(m.size() == 1);
    CHECK(m[0].query == 0);
    CHECK(m[0].reference == 1);
    CHECK(m[0].distance == 3);
    CHECK(m[0].ratio == doctest::Approx(3.0 / 103.0));
  }
  SUBCASE("ratio test rejects ambiguous matches") {
    const std::vector<Descriptor> q{base};
    const std::vector<Descriptor> r{with_distance(base, 10), with_distance(base, 11, 100)};
    CHECK(match_descriptors(q, r, o).empty());
    o.ratio_threshold = 0.95;
    CHECK(match_descriptors(q, r, o).size() == 1);
  }
  SUBCASE("distance gate") {
    const std::vector<Descriptor> q{base};
    const std::vector<Descriptor> r{with_distance(base, 70)};
    CHECK(match_descriptors(q, r, o).empty());
    o.max_distance = 70;
    const auto m = match_descriptors(q, r, o);
    REQUIRE(m.size() == 1);
    CHECK(m[0].ratio == 0.0);
  }
  SUBCASE("cross-check keeps only mutual nearest neighbours") {
    const std::vector<Descriptor> q{with_distance(base, 2), with_distance(base, 5, 100)};
    const std::vector<Descriptor> r{base, with_distance(base, 120, 130)};
    const auto m = match_descriptors(q, r, o);
    REQUIRE(m.size() == 1);
    CHECK(m[0].query == 0);
    o.cross_check = false;
    o.ratio_threshold = 1.0;
    CHECK(match_descriptors(q, r, o).size() == 2);
  }
  SUBCASE("ties resolve to the lower index") {
    o.ratio_threshold = 1.0;
    o.cross_check = false;
    const std::vector<Descriptor> q{base};
    const std::vector<Descriptor> r{with_distance(base, 4), with_distance(base, 4, 10)};
    const auto m = match_descriptors(q, r, o);
    REQUIRE(m.size() == 1);
    CHECK(m[0].reference == 0);
    CHECK(m[0].ratio == 1.0);
  }
  CHECK(match_descriptors({}, {base}, o).empty());
}

TEST_CASE("debug outputs") {
  const auto dir = testing::scratch_dir("features_debug");
  const std::vector<Keypoint> qk{{20, 20, 1}}, rk{{30, 25, 1}};
  const std::vector<Match> m{{0, 0, 7, 0.5}};
  write_matches_json((dir / "m.json").string(), qk, rk, m);
  std::ifstream is(dir / "m.json");
  const auto j = nlohmann::json::parse(is);
  REQUIRE(j.size() == 1);
  CHECK(j[0]["rx"] == 30.0);
  CHECK(j[0]["distance"] == 7);
  const RgbImage canvas = draw_matches(RgbImage(40, 40), RgbImage(50, 30), qk, rk, m);
  CHECK(canvas.width == 90);
  CHECK(canvas.height == 40);
  CHECK(canvas.at(20, 20, 1) == 1.f);
  CHECK(canvas.at(70, 25, 1) == 1.f);
  bool red = false;
  for (int y = 0; y < 40; ++y) red = red || canvas.at(30, y, 0) == 1.f;
  CHECK(red);
}

TEST_CASE("a rendered scene view yields plenty of keypoints") {
  const RadianceField gt = voxelize_scene(default_scene(), {64, 64, 64});
  const CameraModel cam = CameraModel::create(275, 275, 159.5, 119.5, 320, 240);
  const RgbImage img = render_image(gt, cam, look_at({3, 0.5, 0.35}, {0, 0, -1}), RenderOptions()).rgb;
  const auto f = extract_features(img);
  CHECK(f.keypoints.size() >= 100);
  CHECK(f.descriptors.size() == f.keypoints.size());
}
