#include "nerfloc/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "nerfloc/error.hpp"

namespace nerfloc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> tokens(const std::string& v) {
  std::istringstream is(v);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

double to_double(const std::string& s) {
  size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("not a finite number: " + s);
  return v;
}

long long to_int(const std::string& s) {
  size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer: " + s);
  return v;
}

std::vector<double> to_doubles(const std::string& v, size_t expected = 0) {
  std::vector<double> out;
  for (const auto& t : tokens(v)) out.push_back(to_double(t));
  if (out.empty() || (expected && out.size() != expected))
    throw std::invalid_argument(expected ? "expected " + std::to_string(expected) + " numbers" : "expected numbers");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string fmt(float v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(v[i]);
  return out;
}

struct Binding {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

using Table = std::map<std::string, Binding>;

template <typename T>
Binding int_binding(T& ref) {
  return {[&ref](const std::string& v) { ref = T(to_int(trim(v))); }, [&ref] { return std::to_string(ref); }};
}

template <typename T>
Binding real_binding(T& ref) {
  return {[&ref](const std::string& v) { ref = T(to_double(trim(v))); }, [&ref] { return fmt(ref); }};
}

Binding bool_binding(bool& ref) {
  return {[&ref](const std::string& v) {
            const std::string t = trim(v);
            if (t == "true" || t == "1" || t == "yes") ref = true;
            else if (t == "false" || t == "0" || t == "no") ref = false;
            else throw std::invalid_argument("expected true or false");
          },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Binding vec3_binding(Eigen::Vector3d& ref) {
  return {[&ref](const std::string& v) {
            const auto d = to_doubles(v, 3);
            ref = Eigen::Vector3d(d[0], d[1], d[2]);
          },
          [&ref] { return fmt_list({ref.x(), ref.y(), ref.z()}); }};
}

Binding dims_binding(std::array<int, 3>& ref) {
  return {[&ref](const std::string& v) {
            const auto d = to_doubles(v, 3);
            for (int a = 0; a < 3; ++a) {
              if (d[size_t(a)] != std::floor(d[size_t(a)])) throw std::invalid_argument("dims must be integers");
              ref[size_t(a)] = int(d[size_t(a)]);
            }
          },
          [&ref] { return std::to_string(ref[0]) + " " + std::to_string(ref[1]) + " " + std::to_string(ref[2]); }};
}

void bind_camera(Table& t, const std::string& sec, CameraModel& c) {
  t[sec + ".fx"] = real_binding(c.fx);
  t[sec + ".fy"] = real_binding(c.fy);
  t[sec + ".cx"] = real_binding(c.cx);
  t[sec + ".cy"] = real_binding(c.cy);
  t[sec + ".width"] = int_binding(c.width);
  t[sec + ".height"] = int_binding(c.height);
}

void bind_rig(Table& t, const std::string& sec, RigConfig& r) {
  t[sec + ".count"] = int_binding(r.count);
  t[sec + ".heights"] = {[&r](const std::string& v) { r.heights = to_doubles(v); },
                         [&r] { return fmt_list(r.heights); }};
  t[sec + ".radius"] = real_binding(r.radius);
  t[sec + ".look_at"] = vec3_binding(r.look_at);
  t[sec + ".start_angle"] = real_binding(r.start_angle);
}

Table make_table(RunConfig& c) {
  Table t;
  t["seed"] = int_binding(c.seed);

  t["scene.dims"] = dims_binding(c.scene_dims);

  bind_camera(t, "mapping", c.mapping_camera);
  bind_rig(t, "mapping", c.mapping_rig);
  t["mapping.noise_sigma"] = real_binding(c.noise_sigma);
  t["mapping.blur_fraction"] = real_binding(c.blur_fraction);
  t["mapping.blur_kernel"] = int_binding(c.blur_kernel);
  t["mapping.keep_fraction"] = real_binding(c.keep_fraction);
  t["mapping.blur_threshold"] = {[&c](const std::string& v) {
                                   const std::string s = trim(v);
                                   if (s == "none") c.blur_threshold.reset();
                                   else c.blur_threshold = to_double(s);
                                 },
                                 [&c] { return c.blur_threshold ? fmt(*c.blur_threshold) : std::string("none"); }};
  t["mapping.holdout_fraction"] = real_binding(c.train.holdout_fraction);

  bind_rig(t, "database", c.database_rig);

  bind_camera(t, "query", c.query_camera);
  t["query.trajectory"] = {[&c](const std::string& v) {
                             const std::string s = trim(v);
                             if (s == "orbit") c.query_kind = TrajectoryKind::Orbit;
                             else if (s == "line") c.query_kind = TrajectoryKind::Line;
                             else if (s == "lawnmower") c.query_kind = TrajectoryKind::Lawnmower;
                             else throw std::invalid_argument("expected orbit, line or lawnmower");
                           },
                           [&c] {
                             switch (c.query_kind) {
                               case TrajectoryKind::Line: return std::string("line");
                               case TrajectoryKind::Lawnmower: return std::string("lawnmower");
                               default: return std::string("orbit");
                             }
                           }};
  TrajectoryParams& q = c.query_trajectory;
  t["query.frames"] = int_binding(c.query_frames);
  t["query.noise_sigma"] = real_binding(c.query_noise_sigma);
  t["query.length"] = real_binding(q.length);
  t["query.pivot"] = vec3_binding(q.pivot);
  t["query.radius"] = real_binding(q.radius);
  t["query.start_angle"] = real_binding(q.start_angle);
  t["query.look_at"] = {[&q](const std::string& v) {
                          if (trim(v) == "none") {
                            q.look_at.reset();
                            return;
                          }
                          const auto d = to_doubles(v, 3);
                          q.look_at = Eigen::Vector3d(d[0], d[1], d[2]);
                        },
                        [&q] { return q.look_at ? fmt_list({q.look_at->x(), q.look_at->y(), q.look_at->z()}) : "none"; }};
  t["query.origin"] = vec3_binding(q.origin);
  t["query.direction"] = vec3_binding(q.direction);
  t["query.row_length"] = real_binding(q.row_length);
  t["query.row_spacing"] = real_binding(q.row_spacing);
  t["query.t0"] = real_binding(q.t0);
  t["query.dt"] = real_binding(q.dt);

  t["field.dims"] = dims_binding(c.field_dims);
  t["field.init_density"] = real_binding(c.init_density);
  t["field.init_color"] = real_binding(c.init_color);

  TrainConfig& tr = c.train;
  t["train.iterations"] = int_binding(tr.iterations);
  t["train.rays_per_batch"] = int_binding(tr.rays_per_batch);
  t["train.learning_rate"] = real_binding(tr.learning_rate);
  t["train.density_learning_rate"] = real_binding(tr.density_learning_rate);
  t["train.beta1"] = real_binding(tr.beta1);
  t["train.beta2"] = real_binding(tr.beta2);
  t["train.epsilon"] = real_binding(tr.epsilon);
  t["train.tv_weight"] = real_binding(tr.tv_weight);
  t["train.psnr_floor"] = real_binding(c.psnr_floor);

  RenderOptions& r = c.render;
  t["render.samples_per_ray"] = int_binding(r.samples_per_ray);
  t["render.t_near"] = real_binding(r.t_near);
  t["render.t_far"] = real_binding(r.t_far);
  t["render.background"] = vec3_binding(r.background);
  t["render.stratified_jitter"] = bool_binding(r.stratified_jitter);

  LocalizeOptions& l = c.localize;
  t["localize.mode"] = {[&c](const std::string& v) {
                          const std::string s = trim(v);
                          if (s != "field" && s != "database") throw std::invalid_argument("expected field or database");
                          c.mode = s;
                        },
                        [&c] { return c.mode; }};
  t["localize.n_references"] = int_binding(l.n_references);
  t["localize.lateral_offset"] = real_binding(l.lateral_offset);
  t["localize.ransac_iterations"] = int_binding(l.ransac.iterations);
  t["localize.inlier_threshold_px"] = real_binding(l.ransac.inlier_threshold_px);
  t["localize.min_inliers"] = int_binding(l.ransac.min_inliers);
  t["localize.refine_iterations"] = int_binding(l.refine_iterations);
  t["localize.max_keypoints"] = int_binding(l.detect.max_count);
  t["localize.fast_threshold"] = real_binding(l.detect.fast_threshold);
  t["localize.nms_radius"] = int_binding(l.detect.nms_radius);
  t["localize.max_distance"] = int_binding(l.match.max_distance);
  t["localize.ratio_threshold"] = real_binding(l.match.ratio_threshold);
  t["localize.cross_check"] = bool_binding(l.match.cross_check);
  t["localize.database_stride"] = int_binding(c.database_stride);
  t["localize.initial_prior_offset"] = real_binding(c.initial_prior_offset);

  t["eval.max_dt"] = real_binding(c.max_dt);
  t["eval.alignment"] = {[&c](const std::string& v) { c.alignment = parse_alignment(trim(v)); },
                         [&c] { return to_string(c.alignment); }};
  return t;
}

[[noreturn]] void fail(const std::string& where, const std::string& msg) {
  throw Error(ErrorCode::Config, where + ": " + msg);
}

void assign(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  Table t = make_table(cfg);
  const auto it = t.find(key);
  if (it == t.end()) fail(where, "unknown key '" + key + "'");
  try {
    it->second.set(value);
  } catch (const std::exception& e) {
    fail(where, "bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

RunConfig::RunConfig() {
  query_trajectory.length = 10.0;
  query_trajectory.radius = 3.0;
  query_trajectory.pivot = Eigen::Vector3d(0, 0, 0.35);
  query_trajectory.look_at = Eigen::Vector3d(0, 0, -1);
  query_trajectory.start_angle = 0.4;
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::Config, msg);
  };
  try {
    mapping_camera.validate();
    query_camera.validate();
    render.validate();
    localize.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
  for (const RigConfig* r : {&mapping_rig, &database_rig}) {
    check(r->count >= 2, "rig count must be >= 2");
    check(!r->heights.empty() && int(r->heights.size()) <= r->count, "rig needs 1..count heights");
    check(r->radius > 0, "rig radius must be positive");
  }
  check(noise_sigma >= 0 && query_noise_sigma >= 0, "noise_sigma must be >= 0");
  check(blur_fraction >= 0 && blur_fraction <= 1, "mapping.blur_fraction must be in [0,1]");
  check(blur_kernel >= 1 && blur_kernel % 2 == 1, "mapping.blur_kernel must be odd");
  check(keep_fraction > 0 && keep_fraction <= 1, "mapping.keep_fraction must be in (0,1]");
  check(query_frames >= 1, "query.frames must be >= 1");
  for (int a = 0; a < 3; ++a) {
    check(scene_dims[size_t(a)] >= 8, "scene.dims must be >= 8");
    check(field_dims[size_t(a)] >= 1, "field.dims must be positive");
  }
  check(init_density >= 0 && init_color >= 0 && init_color <= 1, "field init values out of range");
  check(database_stride >= 1, "localize.database_stride must be >= 1");
  check(max_dt >= 0, "eval.max_dt must be >= 0");
  try {
    train.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto hash = line.find_first_of("#;");
    const std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(where, "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty()) fail(where, "empty section name");
      const Table t = make_table(cfg);
      const auto it = t.lower_bound(section + ".");
      if (it == t.end() || it->first.rfind(section + ".", 0) != 0) fail(where, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(where, "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) fail(where, "missing key");
    assign(cfg, section.empty() ? key : section + "." + key, s.substr(eq + 1), where);
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Config, path + ": cannot open config file");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail("<command line>", "expected section.key=value, got '" + assignment + "'");
  assign(cfg, trim(assignment.substr(0, eq)), assignment.substr(eq + 1), "<command line>");
}

std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  const Table t = make_table(copy);
  std::string out, section = "\x01";
  // Top-level keys first, then sections in table order.
  for (const auto& [key, b] : t)
    if (key.find('.') == std::string::npos) out += key + " = " + b.get() + "\n";
  for (const auto& [key, b] : t) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + b.get() + "\n";
  }
  return out;
}

std::vector<StampedPose> rig_trajectory(const RigConfig& rig, double dt) {
  const int rings = int(rig.heights.size());
  if (rings < 1 || rig.count < 2 * rings) throw Error(ErrorCode::BadParams, "rig needs at least two poses per ring");
  std::vector<StampedPose> out;
  for (int r = 0; r < rings; ++r) {
    const int n = rig.count / rings + (r < rig.count % rings ? 1 : 0);
    TrajectoryParams p;
    p.radius = rig.radius;
    p.pivot = Eigen::Vector3d(0, 0, rig.heights[size_t(r)]);
    p.look_at = rig.look_at;
    p.start_angle = rig.start_angle + r * M_PI / n;
    p.length = 2.0 * M_PI * rig.radius * (n - 1) / n;
    p.t0 = double(out.size()) * dt;
    p.dt = dt;
    const auto ring = generate_trajectory(TrajectoryKind::Orbit, p, n);
    out.insert(out.end(), ring.begin(), ring.end());
  }
  return out;
}

}  // namespace nerfloc
