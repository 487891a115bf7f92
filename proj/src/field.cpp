#include "nerfloc/field.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "march.hpp"
#include "nerfloc/error.hpp"

namespace nerfloc {

namespace {

constexpr char kMagic[4] = {'R', 'F', 'L', 'D'};
constexpr size_t kHeaderBytes = 4 + 4 + 6 * 4 + 3 * 4;

static_assert(std::endian::native == std::endian::little, "field I/O assumes a little-endian host");

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<uint8_t>& in, size_t& off) {
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

uint32_t crc32_of(const uint8_t* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = uInt(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return uint32_t(crc);
}

}  // namespace

RadianceField::RadianceField(const Eigen::Vector3f& bbox_min, const Eigen::Vector3f& bbox_max,
                             std::array<int, 3> dims, float init_density, const Eigen::Vector3f& init_color)
    : bbox_min_(bbox_min), bbox_max_(bbox_max), dims_(dims) {
  if (!(bbox_max.array() > bbox_min.array()).all())
    throw Error(ErrorCode::DegenerateBounds, "field bbox_max must exceed bbox_min");
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) throw Error(ErrorCode::InvalidArgument, "field dims must be positive");
  const size_t n = size_t(dims[0]) * dims[1] * dims[2];
  density_.assign(n, std::max(init_density, 0.f));
  color_.resize(3 * n);
  for (size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) color_[3 * i + c] = std::clamp(init_color[c], 0.f, 1.f);
}

Eigen::Vector3d RadianceField::voxel_size() const {
  return ((bbox_max_ - bbox_min_).cast<double>().array() /
          Eigen::Array3d(dims_[0], dims_[1], dims_[2]))
      .matrix();
}

Eigen::Vector3d RadianceField::voxel_center(int x, int y, int z) const {
  return bbox_min_.cast<double>() + (Eigen::Array3d(x, y, z) + 0.5).matrix().cwiseProduct(voxel_size());
}

bool RadianceField::contains(const Eigen::Vector3d& p) const {
  return (p.array() >= bbox_min_.cast<double>().array()).all() &&
         (p.array() <= bbox_max_.cast<double>().array()).all();
}

void RadianceField::set_voxel(size_t idx, float density, const Eigen::Vector3f& rgb) {
  density_[idx] = std::max(density, 0.f);
  for (int c = 0; c < 3; ++c) color_[3 * idx + c] = std::clamp(rgb[c], 0.f, 1.f);
}

void RadianceField::enforce_bounds() {
  for (auto& d : density_) d = std::max(d, 0.f);
  for (auto& c : color_) c = std::clamp(c, 0.f, 1.f);
}

bool trilinear_stencil(const RadianceField& field, const Eigen::Vector3d& p, TrilinearStencil& out) {
  return detail::GridGeometry(field).stencil(p, out);
}

FieldSample sample_field(const RadianceField& field, const Eigen::Vector3d& p) {
  FieldSample s;
  TrilinearStencil st;
  if (!trilinear_stencil(field, p, st)) return s;
  const float* dens = field.density().data();
  const float* col = field.color().data();
  for (int k = 0; k < 8; ++k) {
    const double w = st.weight[k];
    const size_t i = st.index[k];
    s.density += w * dens[i];
    s.rgb += w * Eigen::Vector3d(col[3 * i], col[3 * i + 1], col[3 * i + 2]);
  }
  return s;
}

double psnr(const RgbImage& a, const RgbImage& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::DimensionMismatch, "psnr: image shapes differ");
  if (a.data.empty()) throw Error(ErrorCode::DimensionMismatch, "psnr: empty images");
  double sse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    sse += d * d;
  }
  const double mse = sse / double(a.data.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

size_t field_file_size(std::array<int, 3> dims) {
  const size_t n = size_t(dims[0]) * dims[1] * dims[2];
  return kHeaderBytes + n * (4 + 12) + 4;
}

std::vector<uint8_t> serialize_field(const RadianceField& field) {
  std::vector<uint8_t> out;
  out.reserve(field_file_size(field.dims()));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<uint32_t>(out, RadianceField::kFormatVersion);
  for (int a = 0; a < 3; ++a) put<float>(out, field.bbox_min()[a]);
  for (int a = 0; a < 3; ++a) put<float>(out, field.bbox_max()[a]);
  for (int a = 0; a < 3; ++a) put<uint32_t>(out, uint32_t(field.dims()[a]));
  const auto append = [&out](const std::vector<float>& v) {
    const auto* p = reinterpret_cast<const uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(float));
  };
  append(field.density());
  append(field.color());
  put<uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

RadianceField deserialize_field(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "not a radiance field file");
  size_t off = 4;
  const auto version = get<uint32_t>(bytes, off);
  if (version != RadianceField::kFormatVersion)
    throw Error(ErrorCode::VersionUnsupported, "field format version " + std::to_string(version));
  Eigen::Vector3f lo, hi;
  for (int a = 0; a < 3; ++a) lo[a] = get<float>(bytes, off);
  for (int a = 0; a < 3; ++a) hi[a] = get<float>(bytes, off);
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    const auto d = get<uint32_t>(bytes, off);
    if (d == 0 || d > (1u << 16)) throw Error(ErrorCode::Io, "field dims out of range");
    dims[a] = int(d);
  }
  if (bytes.size() != field_file_size(dims)) throw Error(ErrorCode::Io, "field file size does not match header");
  size_t crc_off = bytes.size() - 4;
  const auto stored_crc = get<uint32_t>(bytes, crc_off);
  if (stored_crc != crc32_of(bytes.data(), bytes.size() - 4)) throw Error(ErrorCode::ChecksumMismatch, "field CRC32");

  RadianceField field(lo, hi, dims);
  auto& dens = field.density();
  auto& col = field.color();
  std::memcpy(dens.data(), bytes.data() + off, dens.size() * sizeof(float));
  off += dens.size() * sizeof(float);
  std::memcpy(col.data(), bytes.data() + off, col.size() * sizeof(float));
  return field;
}

size_t save_field(const RadianceField& field, const std::string& path) {
  const auto bytes = serialize_field(field);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!os) throw Error(ErrorCode::Io, "write failed: " + path);
  return bytes.size();
}

RadianceField load_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_field(bytes);
}

}  // namespace nerfloc
