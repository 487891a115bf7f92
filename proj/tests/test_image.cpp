#include "nerfloc/image.hpp"
#include "test_support.hpp"

using namespace nerfloc;

TEST_CASE("to_gray uses Rec.601 luma") {
  RgbImage img(2, 1);
  img.at(0, 0, 0) = 1.f;
  img.at(1, 0, 0) = 0.2f, img.at(1, 0, 1) = 0.4f, img.at(1, 0, 2) = 0.6f;
  const GrayImage g = to_gray(img);
  CHECK(g.at(0, 0) == doctest::Approx(0.299));
  CHECK(g.at(1, 0) == doctest::Approx(0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.6));
}

TEST_CASE("box blur keeps constants, averages impulses and rejects even widths") {
  GrayImage flat(7, 5, 0.25f);
  const GrayImage b = box_blur(flat, 3);
  for (float v : b.data) CHECK(v == doctest::Approx(0.25f));

  GrayImage impulse(9, 9, 0.f);
  impulse.at(4, 4) = 9.f;
  const GrayImage s = box_blur(impulse, 3);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const bool inside = std::abs(x - 4) <= 1 && std::abs(y - 4) <= 1;
      CHECK(s.at(x, y) == doctest::Approx(inside ? 1.0 : 0.0));
    }
  CHECK(box_blur(impulse, 1).data == impulse.data);
  CHECK_THROWS_CODE(box_blur(impulse, 4), ErrorCode::InvalidArgument);
}

TEST_CASE("PPM round trip matches 8-bit quantization") {
  const auto dir = testing::scratch_dir("image_ppm");
  RgbImage img(5, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-0.1f, 1.1f);
  for (auto& v : img.data) v = u(rng);
  write_ppm((dir / "a.ppm").string(), img);
  const RgbImage back = read_ppm((dir / "a.ppm").string());
  CHECK(back.same_shape(img));
  CHECK(back.data == quantize8(img).data);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const float clamped = std::min(1.f, std::max(0.f, img.data[i]));
    CHECK(std::abs(back.data[i] - clamped) <= 0.5f / 255.f + 1e-6f);
  }
  CHECK_THROWS_CODE(read_ppm((dir / "missing.ppm").string()), ErrorCode::Io);
}

TEST_CASE("16-bit PGM and millimeter depth") {
  const auto dir = testing::scratch_dir("image_pgm");
  GrayImage depth(3, 2, 0.f);
  depth.at(0, 0) = 1.2344f;
  depth.at(1, 0) = 70.f;
  depth.at(2, 1) = 0.0004f;
  const auto mm = encode_depth_mm(depth);
  CHECK(mm[0] == 1234);
  CHECK(mm[1] == 65535);
  CHECK(mm[2] == 0);
  write_pgm16((dir / "d.pgm").string(), 3, 2, mm);
  int w = 0, h = 0;
  CHECK(read_pgm16((dir / "d.pgm").string(), w, h) == mm);
  CHECK(w == 3);
  CHECK(h == 2);
  const GrayImage back = decode_depth_mm(3, 2, mm);
  CHECK(back.at(0, 0) == doctest::Approx(1.234f));
  CHECK_THROWS_CODE(write_pgm16((dir / "e.pgm").string(), 4, 2, mm), ErrorCode::DimensionMismatch);
}
