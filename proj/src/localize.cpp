#include "nerfloc/localize.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "nerfloc/error.hpp"

namespace nerfloc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Poly = std::vector<double>;  // coefficient i multiplies v^i

Poly poly_mul(const Poly& a, const Poly& b) {
  Poly out(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

Poly poly_axpy(double s, const Poly& a, const Poly& b) {  // s*a + b
  Poly out(std::max(a.size(), b.size()), 0.0);
  for (size_t i = 0; i < a.size(); ++i) out[i] += s * a[i];
  for (size_t i = 0; i < b.size(); ++i) out[i] += b[i];
  return out;
}

double poly_eval(const Poly& p, double v) {
  double r = 0;
  for (size_t i = p.size(); i-- > 0;) r = r * v + p[i];
  return r;
}

std::vector<double> real_roots(Poly p) {
  double scale = 0;
  for (double c : p) scale = std::max(scale, std::abs(c));
  if (scale == 0) return {};
  while (!p.empty() && std::abs(p.back()) <= 1e-14 * scale) p.pop_back();
  const int d = int(p.size()) - 1;
  if (d < 1) return {};
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(d, d);
  for (int i = 1; i < d; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < d; ++i) comp(i, d - 1) = -p[size_t(i)] / p[size_t(d)];
  const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(comp, false).eigenvalues();
  Poly dp(static_cast<size_t>(d));
  for (int i = 1; i <= d; ++i) dp[size_t(i - 1)] = i * p[size_t(i)];
  std::vector<double> roots;
  for (int i = 0; i < d; ++i) {
    if (std::abs(ev[i].imag()) > 1e-4 * (1.0 + std::abs(ev[i].real()))) continue;
    double v = ev[i].real();
    for (int k = 0; k < 5; ++k) {
      const double dv = poly_eval(dp, v);
      if (dv == 0) break;
      v -= poly_eval(p, v) / dv;
    }
    roots.push_back(v);
  }
  return roots;
}

Eigen::Vector3d bearing(const CameraModel& cam, const Eigen::Vector2d& px) {
  return Eigen::Vector3d((px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy, 1.0).normalized();
}

double reprojection_error(const CameraModel& cam, const Pose& world_to_cam, const Correspondence2D3D& c) {
  const Eigen::Vector3d x = world_to_cam.transform(c.world_point);
  if (!(x.z() > 1e-9)) return kInf;
  const Eigen::Vector2d px(cam.fx * x.x() / x.z() + cam.cx, cam.fy * x.y() / x.z() + cam.cy);
  return (px - c.query_pixel).norm();
}

bool collinear(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d u = b - a, v = c - a;
  return u.cross(v).norm() <= 1e-9 * u.norm() * v.norm() || u.norm() == 0 || v.norm() == 0;
}

// Draws k distinct indices in [0, n).
void sample_distinct(std::mt19937_64& rng, int n, int k, int* out) {
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int i = 0; i < k; ++i) {
    int v;
    do {
      v = pick(rng);
    } while (std::find(out, out + i, v) != out + i);
    out[i] = v;
  }
}

struct Score {
  int count = -1;
  double mean = kInf;
  bool better_than(const Score& o) const { return count > o.count || (count == o.count && mean < o.mean); }
};

Score score_pose(const std::vector<Correspondence2D3D>& corr, const CameraModel& cam, const Pose& world_to_cam,
                 double threshold, std::vector<char>* mask) {
  Score s{0, 0.0};
  if (mask) mask->assign(corr.size(), 0);
  double sum = 0;
  for (size_t i = 0; i < corr.size(); ++i) {
    const double e = reprojection_error(cam, world_to_cam, corr[i]);
    if (e <= threshold) {
      ++s.count;
      sum += e;
      if (mask) (*mask)[i] = 1;
    }
  }
  s.mean = s.count ? sum / s.count : kInf;
  return s;
}

// ---- two-view helpers ----

Eigen::Matrix3d hartley(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= double(pts.size());
  double d = 0;
  for (const auto& p : pts) d += (p - c).norm();
  d /= double(pts.size());
  const double s = d > 0 ? std::sqrt(2.0) / d : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

// Essential matrix with x_q^T E x_r = 0 from normalized image coordinates.
bool eight_point(const std::vector<Eigen::Vector2d>& xq, const std::vector<Eigen::Vector2d>& xr,
                 const std::vector<int>& idx, Eigen::Matrix3d& e_out) {
  std::vector<Eigen::Vector2d> q, r;
  for (int i : idx) {
    q.push_back(xq[size_t(i)]);
    r.push_back(xr[size_t(i)]);
  }
  const Eigen::Matrix3d tq = hartley(q), tr = hartley(r);
  Eigen::MatrixXd a(idx.size(), 9);
  for (size_t k = 0; k < idx.size(); ++k) {
    const Eigen::Vector3d u = tq * q[k].homogeneous(), v = tr * r[k].homogeneous();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) a(Eigen::Index(k), 3 * i + j) = u[i] * v[j];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Eigen::Matrix3d en;
  en << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
  Eigen::Matrix3d em = tq.transpose() * en * tr;
  Eigen::JacobiSVD<Eigen::Matrix3d> s2(em, Eigen::ComputeFullU | Eigen::ComputeFullV);
  em = s2.matrixU() * Eigen::Vector3d(1, 1, 0).asDiagonal() * s2.matrixV().transpose();
  if (!em.allFinite()) return false;
  e_out = em;
  return true;
}

double sampson(const Eigen::Matrix3d& e, const Eigen::Vector2d& q, const Eigen::Vector2d& r) {
  const Eigen::Vector3d xq = q.homogeneous(), xr = r.homogeneous();
  const Eigen::Vector3d er = e * xr, eq = e.transpose() * xq;
  const double num = xq.dot(er);
  const double den = er.x() * er.x() + er.y() * er.y() + eq.x() * eq.x() + eq.y() * eq.y();
  return den > 0 ? std::sqrt(num * num / den) : kInf;
}

Score score_essential(const Eigen::Matrix3d& e, const std::vector<Eigen::Vector2d>& xq,
                      const std::vector<Eigen::Vector2d>& xr, double threshold_norm, double focal,
                      std::vector<char>* mask) {
  Score s{0, 0.0};
  if (mask) mask->assign(xq.size(), 0);
  double sum = 0;
  for (size_t i = 0; i < xq.size(); ++i) {
    const double d = sampson(e, xq[i], xr[i]);
    if (d <= threshold_norm) {
      ++s.count;
      sum += d * focal;
      if (mask) (*mask)[i] = 1;
    }
  }
  s.mean = s.count ? sum / s.count : kInf;
  return s;
}

// Number of inliers triangulating in front of both cameras for x_q = R x_r + t.
int cheirality_votes(const Eigen::Matrix3d& r, const Eigen::Vector3d& t, const std::vector<Eigen::Vector2d>& xq,
                     const std::vector<Eigen::Vector2d>& xr, const std::vector<char>& mask) {
  int votes = 0;
  for (size_t i = 0; i < xq.size(); ++i) {
    if (!mask[i]) continue;
    const Eigen::Vector3d bq = xq[i].homogeneous(), br = r * xr[i].homogeneous();
    // lambda_q * bq - lambda_r * br = t
    Eigen::Matrix<double, 3, 2> a;
    a << bq, -br;
    const Eigen::Vector2d lam = (a.transpose() * a).ldlt().solve(a.transpose() * t);
    if (lam[0] > 0 && lam[1] > 0) ++votes;
  }
  return votes;
}

// Largest angular residual of the best pure rotation mapping reference bearings to query bearings.
double rotation_only_residual(const std::vector<Eigen::Vector2d>& xq, const std::vector<Eigen::Vector2d>& xr,
                              const std::vector<char>& mask) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> pairs;
  for (size_t i = 0; i < xq.size(); ++i) {
    if (!mask[i]) continue;
    pairs.emplace_back(xr[i].homogeneous().normalized(), xq[i].homogeneous().normalized());
    h += pairs.back().second * pairs.back().first.transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1 : 1;
  const Eigen::Matrix3d rot = svd.matrixU() * d * svd.matrixV().transpose();
  double worst = 0;
  for (const auto& [br, bq] : pairs) worst = std::max(worst, (rot * br).cross(bq).norm());
  return worst;
}

}  // namespace

std::string to_string(LocalizationStatus s) {
  switch (s) {
    case LocalizationStatus::Ok: return "ok";
    case LocalizationStatus::Degenerate: return "degenerate";
    case LocalizationStatus::InsufficientMatches: return "insufficient_matches";
  }
  return "unknown";
}

void LocalizeOptions::validate() const {
  if (n_references < 1) throw Error(ErrorCode::BadCount, "n_references must be >= 1");
  if (!(lateral_offset > 0)) throw Error(ErrorCode::InvalidArgument, "lateral_offset must be positive");
  if (ransac.iterations < 1 || !(ransac.inlier_threshold_px > 0) || ransac.min_inliers < 1)
    throw Error(ErrorCode::InvalidArgument, "bad RANSAC options");
  if (refine_iterations < 0) throw Error(ErrorCode::InvalidArgument, "refine_iterations must be >= 0");
  render.validate();
}

std::vector<Pose> sample_reference_poses(const Pose& prior, int n, double lateral_offset) {
  if (n < 1) throw Error(ErrorCode::BadCount, "need at least one reference pose");
  if (n > 1 && !(lateral_offset > 0)) throw Error(ErrorCode::InvalidArgument, "lateral_offset must be positive");
  if (n == 1) return {prior};
  const double o = lateral_offset;
  std::vector<Eigen::Vector3d> offsets = {{-o, 0, 0}, {o, 0, 0}, {0, -o, 0}, {0, o, 0}};
  offsets.resize(size_t(std::min(n, 4)));
  const int extra = n - 4;
  for (int k = 0; k < extra; ++k) {
    const double a = 0.3 + 2.0 * M_PI * k / extra;
    offsets.emplace_back(o * std::cos(a), o * std::sin(a), 0.0);
  }
  std::vector<Pose> out;
  for (const auto& off : offsets) out.push_back(compose(prior, Pose(Eigen::Quaterniond::Identity(), off)));
  return out;
}

std::vector<int> nearest_database_entries(const ImageDatabase& db, const Pose& prior, int n) {
  if (n < 1) throw Error(ErrorCode::BadCount, "need at least one reference");
  if (db.poses.empty()) throw Error(ErrorCode::EmptyDatabase, "image database is empty");
  std::vector<double> cost(db.poses.size());
  for (size_t i = 0; i < cost.size(); ++i)
    cost[i] = translation_error(db.poses[i], prior) + 0.5 * rotation_error(db.poses[i], prior);
  std::vector<int> idx(cost.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return cost[size_t(a)] < cost[size_t(b)]; });
  idx.resize(std::min(idx.size(), size_t(n)));
  return idx;
}

std::vector<ReferenceView> build_reference_views(const MapSource& map, const CameraModel& cam, const Pose& prior,
                                                 const LocalizeOptions& opts) {
  std::vector<ReferenceView> refs;
  if (map.field) {
    for (const Pose& p : sample_reference_poses(prior, opts.n_references, opts.lateral_offset)) {
      RenderedView v = render_image(*map.field, cam, p, opts.render);
      refs.push_back({std::move(v.rgb), std::move(v.depth), p, ReferenceSource::Rendered, -1});
    }
    return refs;
  }
  if (!map.database) throw Error(ErrorCode::InvalidArgument, "map source is empty");
  const ImageDatabase& db = *map.database;
  if (db.images.size() != db.poses.size()) throw Error(ErrorCode::DimensionMismatch, "database images and poses differ");
  if (!(db.camera == cam)) throw Error(ErrorCode::DimensionMismatch, "database camera differs from query camera");
  for (int i : nearest_database_entries(db, prior, opts.n_references))
    refs.push_back({db.images[size_t(i)], GrayImage(), db.poses[size_t(i)], ReferenceSource::Database, i});
  return refs;
}

std::vector<Correspondence2D3D> lift_matches(const ReferenceView& ref, const CameraModel& cam,
                                             const std::vector<Match>& matches,
                                             const std::vector<Keypoint>& query_keypoints,
                                             const std::vector<Keypoint>& ref_keypoints) {
  if (ref.source != ReferenceSource::Rendered || ref.depth.empty())
    throw Error(ErrorCode::NoDepth, "reference view has no depth");
  std::vector<Correspondence2D3D> out;
  const GrayImage& depth = ref.depth;
  for (const Match& m : matches) {
    const Keypoint& rk = ref_keypoints.at(size_t(m.reference));
    const Keypoint& qk = query_keypoints.at(size_t(m.query));
    const int x0 = int(std::floor(rk.x)), y0 = int(std::floor(rk.y));
    const double fx = rk.x - x0, fy = rk.y - y0;
    double d = 0;
    bool defined = true;
    for (int k = 0; k < 4 && defined; ++k) {
      const int dx = k & 1, dy = k >> 1;
      const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
      if (w == 0) continue;
      const int x = x0 + dx, y = y0 + dy;
      if (x < 0 || y < 0 || x >= depth.width || y >= depth.height || depth.at(x, y) <= 0) {
        defined = false;
        break;
      }
      d += w * depth.at(x, y);
    }
    if (!defined || !(d > 0)) continue;
    const Eigen::Vector3d pc = unproject(cam, Eigen::Vector2d(rk.x, rk.y), d);
    out.push_back({ref.pose.transform(pc), Eigen::Vector2d(qk.x, qk.y)});
  }
  return out;
}

std::vector<Pose> solve_p3p(const std::array<Eigen::Vector3d, 3>& bearings,
                            const std::array<Eigen::Vector3d, 3>& points) {
  const Eigen::Vector3d j1 = bearings[0].normalized(), j2 = bearings[1].normalized(), j3 = bearings[2].normalized();
  const double a2 = (points[1] - points[2]).squaredNorm();
  const double b2 = (points[0] - points[2]).squaredNorm();
  const double c2 = (points[0] - points[1]).squaredNorm();
  const double ca = j2.dot(j3), cb = j1.dot(j3), cg = j1.dot(j2);
  if (b2 <= 0) return {};

  // With s2 = u*s1 and s3 = v*s1 the three law-of-cosines equations give two
  // quadratics in u with coefficients in v; their resultant is a quartic in v.
  const Poly p0 = {-a2, 2 * a2 * cb, b2 - a2};
  const Poly p1 = {0, -2 * b2 * ca};
  const Poly q0 = {b2 - c2, 2 * c2 * cb, -c2};
  const Poly q1 = {-2 * b2 * cg};
  const Poly d0 = poly_axpy(-1, p0, q0);  // q0 - p0
  const Poly d1 = poly_axpy(-1, p1, q1);  // q1 - p1
  const Poly cross = poly_axpy(-1, poly_mul(p0, q1), poly_mul(p1, q0));
  const Poly res = poly_axpy(-b2, poly_mul(d1, cross), poly_mul(Poly{b2 * b2}, poly_mul(d0, d0)));

  std::vector<Pose> out;
  for (double v : real_roots(res)) {
    if (!(v > 0)) continue;
    std::vector<double> us;
    const double den = -poly_eval(d1, v);
    if (std::abs(den) > 1e-12 * b2) {
      us.push_back(poly_eval(d0, v) / den);
    } else {
      // Both quadratics share their linear term; solve one directly.
      const double qa = b2, qb = q1[0], qc = poly_eval(q0, v);
      const double disc = qb * qb - 4 * qa * qc;
      if (disc < 0) continue;
      us.push_back((-qb + std::sqrt(disc)) / (2 * qa));
      us.push_back((-qb - std::sqrt(disc)) / (2 * qa));
    }
    const double s1sq = b2 / (1 + v * v - 2 * v * cb);
    if (!(s1sq > 0)) continue;
    const double s1 = std::sqrt(s1sq);
    for (double u : us) {
      if (!(u > 0)) continue;
      Eigen::Matrix3d src, dst;
      src << points[0], points[1], points[2];
      dst << s1 * j1, u * s1 * j2, v * s1 * j3;
      const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
      if (!t.allFinite()) continue;
      out.emplace_back(Eigen::Matrix3d(t.topLeftCorner<3, 3>()), Eigen::Vector3d(t.topRightCorner<3, 1>()));
    }
  }
  return out;
}

double mean_reprojection_error(const std::vector<Correspondence2D3D>& corr, const CameraModel& cam,
                               const Pose& world_to_cam, const std::vector<char>& mask) {
  double sum = 0;
  int n = 0;
  for (size_t i = 0; i < corr.size(); ++i) {
    if (!mask[i]) continue;
    sum += reprojection_error(cam, world_to_cam, corr[i]);
    ++n;
  }
  return n ? sum / n : 0.0;
}

Pose refine_pose(const std::vector<Correspondence2D3D>& corr, const CameraModel& cam, const Pose& world_to_cam,
                 const std::vector<char>& mask, int iterations) {
  Pose current = world_to_cam;
  double err = mean_reprojection_error(corr, cam, current, mask);
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (size_t i = 0; i < corr.size(); ++i) {
      if (!mask[i]) continue;
      const Eigen::Vector3d x = current.transform(corr[i].world_point);
      if (!(x.z() > 1e-9)) continue;
      const double iz = 1.0 / x.z();
      const Eigen::Vector2d r(cam.fx * x.x() * iz + cam.cx - corr[i].query_pixel.x(),
                              cam.fy * x.y() * iz + cam.cy - corr[i].query_pixel.y());
      Eigen::Matrix<double, 2, 3> jp;
      jp << cam.fx * iz, 0, -cam.fx * x.x() * iz * iz, 0, cam.fy * iz, -cam.fy * x.y() * iz * iz;
      // Left perturbation: x' = exp(w) x + v, so dx'/d(w, v) = [-[x]_x, I].
      Eigen::Matrix<double, 3, 6> jx;
      jx << -skew(x), Eigen::Matrix3d::Identity();
      const Eigen::Matrix<double, 2, 6> j = jp * jx;
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    const Eigen::Matrix<double, 6, 1> delta = -h.ldlt().solve(g);
    if (!delta.allFinite() || delta.norm() < 1e-15) break;
    bool accepted = false;
    double step = 1.0;
    for (int halving = 0; halving <= 10; ++halving, step *= 0.5) {
      const Eigen::Matrix<double, 6, 1> d = step * delta;
      const Pose cand = compose(Pose(exp_so3(d.head<3>()), d.tail<3>()), current);
      const double e = mean_reprojection_error(corr, cam, cand, mask);
      if (e <= err) {
        accepted = e < err || halving == 0;
        current = cand;
        err = e;
        break;
      }
    }
    if (!accepted) break;
  }
  return current;
}

PnPResult solve_pnp_ransac(const std::vector<Correspondence2D3D>& corr, const CameraModel& cam,
                           const RansacOptions& opts, int refine_iterations) {
  const int n = int(corr.size());
  if (n < 4) throw Error(ErrorCode::InsufficientCorrespondences, "PnP needs at least 4 correspondences");
  std::vector<Eigen::Vector3d> bear(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) bear[size_t(i)] = bearing(cam, corr[size_t(i)].query_pixel);

  std::mt19937_64 rng(opts.seed);
  Score best;
  Pose best_pose;
  int usable = 0;
  for (int it = 0; it < opts.iterations; ++it) {
    int s[4];
    sample_distinct(rng, n, 4, s);
    const auto& p0 = corr[size_t(s[0])].world_point;
    const auto& p1 = corr[size_t(s[1])].world_point;
    const auto& p2 = corr[size_t(s[2])].world_point;
    if (collinear(p0, p1, p2)) continue;
    ++usable;
    const auto sols = solve_p3p({bear[size_t(s[0])], bear[size_t(s[1])], bear[size_t(s[2])]}, {p0, p1, p2});
    double best4 = kInf;
    const Pose* pick = nullptr;
    for (const Pose& p : sols) {
      const double e = reprojection_error(cam, p, corr[size_t(s[3])]);
      if (e < best4) {
        best4 = e;
        pick = &p;
      }
    }
    if (!pick) continue;
    const Score sc = score_pose(corr, cam, *pick, opts.inlier_threshold_px, nullptr);
    if (sc.better_than(best)) {
      best = sc;
      best_pose = *pick;
    }
  }
  if (usable == 0) throw Error(ErrorCode::Degenerate, "all sampled triples were collinear");
  if (best.count < opts.min_inliers) throw Error(ErrorCode::NoConsensus, "too few PnP inliers");

  std::vector<char> mask;
  score_pose(corr, cam, best_pose, opts.inlier_threshold_px, &mask);
  const Pose refined = refine_pose(corr, cam, best_pose, mask, refine_iterations);
  PnPResult out;
  const Score final_score = score_pose(corr, cam, refined, opts.inlier_threshold_px, &out.inliers);
  out.inlier_count = final_score.count;
  out.mean_error = final_score.count ? final_score.mean : 0.0;
  out.pose = inverse(refined);
  if (out.inlier_count < opts.min_inliers) throw Error(ErrorCode::NoConsensus, "too few PnP inliers after refinement");
  return out;
}

TwoViewResult solve_two_view(const std::vector<Keypoint>& query_keypoints, const std::vector<Keypoint>& ref_keypoints,
                             const std::vector<Match>& matches, const CameraModel& cam, const Pose& ref_pose,
                             double baseline, const RansacOptions& opts) {
  const int n = int(matches.size());
  if (n < 8) throw Error(ErrorCode::InsufficientMatches, "two-view needs at least 8 matches");
  std::vector<Eigen::Vector2d> xq(static_cast<size_t>(n)), xr(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Keypoint& q = query_keypoints.at(size_t(matches[size_t(i)].query));
    const Keypoint& r = ref_keypoints.at(size_t(matches[size_t(i)].reference));
    xq[size_t(i)] = Eigen::Vector2d((q.x - cam.cx) / cam.fx, (q.y - cam.cy) / cam.fy);
    xr[size_t(i)] = Eigen::Vector2d((r.x - cam.cx) / cam.fx, (r.y - cam.cy) / cam.fy);
  }
  const double focal = 0.5 * (cam.fx + cam.fy);
  const double thr = opts.inlier_threshold_px / focal;

  std::mt19937_64 rng(opts.seed);
  Score best;
  Eigen::Matrix3d best_e = Eigen::Matrix3d::Zero();
  std::vector<int> sample(8);
  for (int it = 0; it < opts.iterations; ++it) {
    sample_distinct(rng, n, 8, sample.data());
    Eigen::Matrix3d e;
    if (!eight_point(xq, xr, sample, e)) continue;
    const Score sc = score_essential(e, xq, xr, thr, focal, nullptr);
    if (sc.better_than(best)) {
      best = sc;
      best_e = e;
    }
  }
  if (best.count < std::max(opts.min_inliers, 8)) throw Error(ErrorCode::NoConsensus, "too few two-view inliers");

  // Refit on the consensus set.
  std::vector<char> mask;
  score_essential(best_e, xq, xr, thr, focal, &mask);
  std::vector<int> inl;
  for (int i = 0; i < n; ++i)
    if (mask[size_t(i)]) inl.push_back(i);
  Eigen::Matrix3d e = best_e;
  if (eight_point(xq, xr, inl, e)) {
    std::vector<char> refit_mask;
    const Score sc = score_essential(e, xq, xr, thr, focal, &refit_mask);
    if (sc.count >= best.count) {
      best = sc;
      mask = refit_mask;
    } else {
      e = best_e;
    }
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d rs[2] = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Eigen::Vector3d ts[2] = {u.col(2), -u.col(2)};
  int best_votes = -1;
  Eigen::Matrix3d r_qr = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t_qr = Eigen::Vector3d::Zero();
  for (const auto& r : rs)
    for (const auto& t : ts) {
      const int votes = cheirality_votes(r, t, xq, xr, mask);
      if (votes > best_votes) {
        best_votes = votes;
        r_qr = r;
        t_qr = t;
      }
    }

  TwoViewResult out;
  out.inliers = mask;
  out.inlier_count = best.count;
  out.mean_error = best.mean;
  out.degenerate = rotation_only_residual(xq, xr, mask) < 1e-6;
  // x_q = R x_r + t maps reference-camera points into the query camera.
  const Pose ref_to_query(r_qr, baseline * t_qr.normalized());
  out.pose = compose(ref_pose, inverse(ref_to_query));
  return out;
}

LocalizationResult localize_frame(const MapSource& map, const CameraModel& cam, const RgbImage& query,
                                  const Pose& prior, const LocalizeOptions& opts) {
  LocalizationResult res;
  res.pose = prior;
  res.status = LocalizationStatus::InsufficientMatches;
  opts.validate();

  std::vector<ReferenceView> refs;
  try {
    refs = build_reference_views(map, cam, prior, opts);
  } catch (const Error&) {
    return res;
  }
  const DescribedKeypoints qf = extract_features(query, opts.detect);
  std::vector<DescribedKeypoints> rf(refs.size());
  std::vector<std::vector<Match>> matches(refs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < long(refs.size()); ++i) {
    rf[size_t(i)] = extract_features(refs[size_t(i)].rgb, opts.detect);
    matches[size_t(i)] = match_descriptors(qf.descriptors, rf[size_t(i)].descriptors, opts.match);
  }
  for (const auto& m : matches) {
    res.matches_per_reference.push_back(int(m.size()));
    res.total_matches += int(m.size());
  }

  if (map.field) {
    std::vector<Correspondence2D3D> pooled;
    for (size_t i = 0; i < refs.size(); ++i) {
      const auto lifted = lift_matches(refs[i], cam, matches[i], qf.keypoints, rf[i].keypoints);
      pooled.insert(pooled.end(), lifted.begin(), lifted.end());
    }
    try {
      const PnPResult pnp = solve_pnp_ransac(pooled, cam, opts.ransac, opts.refine_iterations);
      res.pose = pnp.pose;
      res.inlier_count = pnp.inlier_count;
      res.mean_reprojection_error = pnp.mean_error;
      res.status = LocalizationStatus::Ok;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Degenerate) res.status = LocalizationStatus::Degenerate;
    }
    return res;
  }

  bool found = false;
  TwoViewResult best;
  for (size_t i = 0; i < refs.size(); ++i) {
    const double baseline = translation_error(prior, refs[i].pose);
    try {
      TwoViewResult tv =
          solve_two_view(qf.keypoints, rf[i].keypoints, matches[i], cam, refs[i].pose, baseline, opts.ransac);
      if (!found || tv.inlier_count > best.inlier_count ||
          (tv.inlier_count == best.inlier_count && tv.mean_error < best.mean_error)) {
        best = std::move(tv);
        found = true;
      }
    } catch (const Error&) {
    }
  }
  if (!found) return res;
  res.inlier_count = best.inlier_count;
  res.mean_reprojection_error = best.mean_error;
  res.scale_ambiguous = true;
  if (best.degenerate) {
    res.status = LocalizationStatus::Degenerate;
    return res;
  }
  res.pose = best.pose;
  res.status = LocalizationStatus::Ok;
  return res;
}

TrajectoryEstimate run_sequence(const MapSource& map, const CameraModel& cam, const std::vector<QueryFrame>& frames,
                                const Pose& initial_prior, const LocalizeOptions& opts) {
  TrajectoryEstimate est;
  Pose prior = initial_prior;
  for (size_t k = 0; k < frames.size(); ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    FrameRecord rec;
    rec.frame = int(k);
    rec.timestamp = frames[k].timestamp;
    rec.result = localize_frame(map, cam, frames[k].image, prior, opts);
    if (rec.result.status == LocalizationStatus::Ok)
      prior = rec.result.pose;
    else
      rec.result.pose = prior;
    rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    est.poses.push_back({rec.timestamp, rec.result.pose});
    est.frames.push_back(std::move(rec));
  }
  return est;
}

std::string frame_log_line(const FrameRecord& rec) {
  const Pose& p = rec.result.pose;
  Eigen::Quaterniond q = p.rotation();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  nlohmann::ordered_json j;
  j["frame"] = rec.frame;
  j["status"] = to_string(rec.result.status);
  j["inliers"] = rec.result.inlier_count;
  j["matches"] = rec.result.total_matches;
  j["reproj_error_px"] = rec.result.mean_reprojection_error;
  j["pose"] = {{"timestamp", rec.timestamp},
               {"tx", p.translation().x()},
               {"ty", p.translation().y()},
               {"tz", p.translation().z()},
               {"qx", q.x()},
               {"qy", q.y()},
               {"qz", q.z()},
               {"qw", q.w()}};
  j["elapsed_ms"] = rec.elapsed_ms;
  return j.dump();
}

void write_frame_log(const std::string& path, const TrajectoryEstimate& est) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  for (const auto& rec : est.frames) os << frame_log_line(rec) << "\n";
  if (!os) throw Error(ErrorCode::Io, "write failed: " + path);
}

}  // namespace nerfloc
