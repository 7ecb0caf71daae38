#include "deca/data.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Geometry>
#include "json.hpp"

#include "deca/error.hpp"

namespace deca {

static_assert(std::endian::native == std::endian::little, "sample files are written in native little-endian order");

using nlohmann::json;

const char* to_string(View v) noexcept {
  switch (v) {
    case View::Front: return "front";
    case View::Top: return "top";
    case View::Free: return "free";
  }
  return "?";
}

const char* to_string(Domain d) noexcept { return d == Domain::Depth ? "depth" : "rgb"; }
const char* to_string(Split s) noexcept { return s == Split::Train ? "train" : "test"; }

View parse_view(const std::string& s) {
  for (View v : {View::Front, View::Top, View::Free})
    if (s == to_string(v)) return v;
  fail(ErrorKind::Config, "unknown view '" + s + "' (expected front, top or free)");
}

Domain parse_domain(const std::string& s) {
  if (s == "depth") return Domain::Depth;
  if (s == "rgb") return Domain::Rgb;
  fail(ErrorKind::Config, "unknown domain '" + s + "' (expected depth or rgb)");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  fail(ErrorKind::Config, "unknown split '" + s + "' (expected train or test)");
}

namespace {

struct JointSpec {
  const char* name;
  int parent;
  double x, y, z;
  double radius;
  bool limb;
};

// Subject faces +z (toward the front camera); its right side is at -x.
constexpr JointSpec kJoints[kMaxJoints] = {
    {"torso", -1, 0.00, 1.05, 0.0, 0.00, false},
    {"neck", 0, 0.00, 1.50, 0.0, 0.13, false},
    {"head", 1, 0.00, 1.70, 0.0, 0.10, false},
    {"r_shoulder", 1, -0.18, 1.45, 0.0, 0.06, false},
    {"l_shoulder", 1, 0.18, 1.45, 0.0, 0.06, false},
    {"r_elbow", 3, -0.20, 1.17, 0.0, 0.05, true},
    {"l_elbow", 4, 0.20, 1.17, 0.0, 0.05, true},
    {"r_hand", 5, -0.22, 0.90, 0.0, 0.04, true},
    {"l_hand", 6, 0.22, 0.90, 0.0, 0.04, true},
    {"r_hip", 0, -0.10, 0.92, 0.0, 0.09, false},
    {"l_hip", 0, 0.10, 0.92, 0.0, 0.09, false},
    {"r_knee", 9, -0.10, 0.50, 0.0, 0.07, true},
    {"l_knee", 10, 0.10, 0.50, 0.0, 0.07, true},
    {"r_foot", 11, -0.10, 0.08, 0.0, 0.05, true},
    {"l_foot", 12, 0.10, 0.08, 0.0, 0.05, true},
};

constexpr double kDegToRad = std::numbers::pi / 180.0;
const Vec3 kLookAt(0.0, 0.9, 0.0);

Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

// First positive hit of the ray t d (camera at the origin) with a capsule.
double ray_capsule(const Vec3& d, const Capsule& c) {
  double best = std::numeric_limits<double>::infinity();
  const double r2 = c.radius * c.radius;
  for (const Vec3* centre : {&c.a, &c.b}) {
    const double a = d.squaredNorm();
    const double b = -centre->dot(d);
    const double disc = b * b - a * (centre->squaredNorm() - r2);
    if (disc < 0) continue;
    const double t = (-b - std::sqrt(disc)) / a;
    if (t > 0) best = std::min(best, t);
  }
  const Vec3 ba = c.b - c.a;
  const double len = ba.norm();
  if (len > 0) {
    const Vec3 u = ba / len;
    const Vec3 oa = -c.a;
    const Vec3 w = oa - oa.dot(u) * u;
    const Vec3 v = d - d.dot(u) * u;
    const double a = v.squaredNorm();
    if (a > 1e-18) {
      const double b = w.dot(v);
      const double disc = b * b - a * (w.squaredNorm() - r2);
      if (disc >= 0) {
        const double t = (-b - std::sqrt(disc)) / a;
        const double s = (t * d - c.a).dot(u);
        if (t > 0 && s >= 0 && s <= len) best = std::min(best, t);
      }
    }
  }
  return best;
}

template <typename V>
void write_binary(const std::filesystem::path& path, const std::vector<V>& values) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(V)));
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

template <typename V>
std::vector<V> read_binary(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  require(bytes == count * sizeof(V), ErrorKind::Data,
          path.string() + " holds " + std::to_string(bytes) + " bytes, expected " + std::to_string(count * sizeof(V)));
  std::vector<V> values(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  return values;
}

void write_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": " + e.what());
  }
}

json camera_to_json(const CameraView& c) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) r.push_back({c.rotation(i, 0), c.rotation(i, 1), c.rotation(i, 2)});
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"R", r},
          {"t", {c.translation.x(), c.translation.y(), c.translation.z()}}};
}

CameraView camera_from_json(const json& j, View tag, std::size_t width, std::size_t height) {
  CameraView c;
  c.tag = tag;
  c.width = width;
  c.height = height;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) c.rotation(i, k) = j.at("R").at(i).at(k).get<double>();
    c.translation(i) = j.at("t").at(i).get<double>();
  }
  return c;
}

std::string make_stem(std::size_t pose_id, View view) {
  std::ostringstream os;
  os << 'p' << std::setw(6) << std::setfill('0') << pose_id << '_' << to_string(view);
  return os.str();
}

}  // namespace

const std::vector<std::string>& joint_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& j : kJoints) n.emplace_back(j.name);
    return n;
  }();
  return names;
}

Skeleton canonical_skeleton(std::size_t joints) {
  require(joints >= 1 && joints <= kMaxJoints, ErrorKind::Config,
          "joint count must be in [1, " + std::to_string(kMaxJoints) + "], got " + std::to_string(joints));
  Skeleton s;
  for (std::size_t k = 0; k < joints; ++k) {
    s.names.emplace_back(kJoints[k].name);
    s.parents.push_back(kJoints[k].parent);
    s.joints.emplace_back(kJoints[k].x, kJoints[k].y, kJoints[k].z);
    s.radii.push_back(kJoints[k].radius);
  }
  return s;
}

std::vector<Vec3> sample_pose(const Skeleton& skeleton, const PoseSamplerParams& params, Rng& rng) {
  const std::size_t n = skeleton.size();
  std::vector<Vec3> pos(n);
  std::vector<Mat3> frame(n);
  const double yaw = uniform(rng, -params.root_yaw_deg, params.root_yaw_deg) * kDegToRad;
  const double shift_x = uniform(rng, -params.root_shift_m, params.root_shift_m);
  const double shift_z = uniform(rng, -params.root_shift_m, params.root_shift_m);
  for (std::size_t k = 0; k < n; ++k) {
    const int p = skeleton.parents[k];
    if (p < 0) {
      frame[k] = rot_y(yaw);
      pos[k] = skeleton.joints[k] + Vec3(shift_x, 0.0, shift_z);
      continue;
    }
    const double range = (k < kMaxJoints && kJoints[k].limb ? params.limb_range_deg : params.spine_range_deg);
    const double ax = uniform(rng, -range, range) * kDegToRad;
    const double az = uniform(rng, -range, range) * kDegToRad;
    const auto parent = static_cast<std::size_t>(p);
    frame[k] = frame[parent] * rot_x(ax) * rot_z(az);
    pos[k] = pos[parent] + frame[k] * (skeleton.joints[k] - skeleton.joints[parent]);
  }
  return pos;
}

CameraView make_camera(View tag, std::size_t width, std::size_t height, Rng* rng) {
  require(width >= 1 && height >= 1, ErrorKind::Config, "camera resolution must be positive");
  CameraView c;
  c.tag = tag;
  c.width = width;
  c.height = height;
  c.fx = c.fy = 1.25 * static_cast<double>(width);
  c.cx = 0.5 * static_cast<double>(width);
  c.cy = 0.5 * static_cast<double>(height);
  Vec3 centre;
  switch (tag) {
    case View::Front:
      centre = Vec3(0.0, 0.9, 3.0);
      c.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;
      break;
    case View::Top:
      centre = Vec3(0.0, 1.7 + 2.5, 0.0);
      c.rotation << 1, 0, 0, 0, 0, 1, 0, -1, 0;
      break;
    case View::Free: {
      require(rng != nullptr, ErrorKind::Contract, "a free camera needs a random generator");
      const double azimuth = uniform(*rng, -180.0, 180.0) * kDegToRad;
      const double elevation = uniform(*rng, 0.0, 60.0) * kDegToRad;
      centre = kLookAt + 3.0 * Vec3(std::cos(elevation) * std::sin(azimuth), std::sin(elevation),
                                    std::cos(elevation) * std::cos(azimuth));
      const Vec3 z = (kLookAt - centre).normalized();
      const Vec3 x = z.cross(Vec3::UnitY()).normalized();
      const Vec3 y = z.cross(x);
      c.rotation.row(0) = x;
      c.rotation.row(1) = y;
      c.rotation.row(2) = z;
      break;
    }
  }
  c.translation = -c.rotation * centre;
  return c;
}

std::vector<double> project(const std::vector<Vec3>& camera_joints, const CameraView& view) {
  std::vector<double> out;
  out.reserve(2 * camera_joints.size());
  for (const auto& p : camera_joints) {
    require(p.z() > 0.0, ErrorKind::Geometry, "cannot project a point with z <= 0");
    out.push_back((view.fx * p.x() / p.z() + view.cx) / static_cast<double>(view.width));
    out.push_back((view.fy * p.y() / p.z() + view.cy) / static_cast<double>(view.height));
  }
  return out;
}

std::vector<Capsule> skeleton_capsules(const Skeleton& skeleton, const std::vector<Vec3>& world_joints) {
  require(world_joints.size() == skeleton.size(), ErrorKind::Dimension, "pose does not match the skeleton");
  std::vector<Capsule> caps;
  for (std::size_t k = 0; k < skeleton.size(); ++k) {
    if (skeleton.parents[k] < 0) continue;
    caps.push_back({world_joints[static_cast<std::size_t>(skeleton.parents[k])], world_joints[k], skeleton.radii[k]});
  }
  return caps;
}

DepthRender render_depth(const std::vector<Capsule>& capsules, const CameraView& view, double far_plane) {
  std::vector<Capsule> cam;
  cam.reserve(capsules.size());
  for (const auto& c : capsules) {
    Capsule k{view.to_camera(c.a), view.to_camera(c.b), c.radius};
    require(k.a.z() > 0.1 && k.b.z() > 0.1, ErrorKind::Geometry, "skeleton is not fully in front of the camera");
    cam.push_back(k);
  }
  DepthRender out;
  out.depth.assign(view.width * view.height, static_cast<float>(far_plane));
  out.part.assign(view.width * view.height, -1);
  for (std::size_t y = 0; y < view.height; ++y)
    for (std::size_t x = 0; x < view.width; ++x) {
      const Vec3 d((static_cast<double>(x) + 0.5 - view.cx) / view.fx,
                   (static_cast<double>(y) + 0.5 - view.cy) / view.fy, 1.0);
      double best = far_plane;
      int part = -1;
      for (std::size_t b = 0; b < cam.size(); ++b) {
        const double t = ray_capsule(d, cam[b]);
        if (t < best) {
          best = t;
          part = static_cast<int>(b);
        }
      }
      out.depth[y * view.width + x] = static_cast<float>(best);
      out.part[y * view.width + x] = part;
    }
  return out;
}

std::vector<std::uint8_t> colorize(const DepthRender& render) {
  static constexpr std::uint8_t kPalette[14][3] = {
      {200, 200, 200}, {255, 220, 180}, {230, 25, 75},  {60, 180, 75},  {255, 225, 25},
      {0, 130, 200},   {245, 130, 48},  {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
      {210, 245, 60},  {250, 190, 212}, {0, 128, 128},  {170, 110, 40}};
  std::vector<std::uint8_t> rgb(render.part.size() * 3, 0);
  for (std::size_t i = 0; i < render.part.size(); ++i) {
    if (render.part[i] < 0) continue;
    const auto& c = kPalette[static_cast<std::size_t>(render.part[i]) % 14];
    for (int ch = 0; ch < 3; ++ch) rgb[i * 3 + static_cast<std::size_t>(ch)] = c[ch];
  }
  return rgb;
}

Split split_for_pose(std::size_t pose_id, std::size_t num_poses, double test_fraction) {
  const auto first_test = static_cast<std::size_t>(std::llround(static_cast<double>(num_poses) * (1.0 - test_fraction)));
  return pose_id >= first_test ? Split::Test : Split::Train;
}

DatasetManifest generate_synthetic(const GenerateOptions& options, const std::filesystem::path& out_dir) {
  require(options.num_poses >= 1, ErrorKind::Config, "gen-data needs at least one pose");
  require(!options.views.empty(), ErrorKind::Config, "gen-data needs at least one view");
  require(options.test_fraction >= 0.0 && options.test_fraction < 1.0, ErrorKind::Config,
          "test_fraction must be in [0, 1)");
  const Skeleton skeleton = canonical_skeleton(options.joints);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec && std::filesystem::is_directory(out_dir), ErrorKind::Io, "cannot create directory " + out_dir.string());

  DatasetManifest manifest;
  manifest.joint_names = skeleton.names;
  manifest.domain = options.domain;
  manifest.width = options.width;
  manifest.height = options.height;
  manifest.seed = options.seed;
  manifest.num_poses = options.num_poses;
  manifest.test_fraction = options.test_fraction;
  manifest.sampler = options.sampler;
  manifest.views = options.views;

  for (std::size_t pose_id = 0; pose_id < options.num_poses; ++pose_id) {
    Rng pose_rng(mix_seed(options.seed, 2 * pose_id));
    Rng camera_rng(mix_seed(options.seed, 2 * pose_id + 1));
    const auto world = sample_pose(skeleton, options.sampler, pose_rng);
    const auto capsules = skeleton_capsules(skeleton, world);
    const Split split = split_for_pose(pose_id, options.num_poses, options.test_fraction);
    for (View view : options.views) {
      const CameraView camera = make_camera(view, options.width, options.height, &camera_rng);
      std::vector<Vec3> cam_joints;
      for (const auto& p : world) cam_joints.push_back(camera.to_camera(p));
      const auto joints2d = project(cam_joints, camera);
      const DepthRender render = render_depth(capsules, camera, manifest.far_plane);
      const std::string stem = make_stem(pose_id, view);

      write_binary(out_dir / (stem + ".depth.f32"), render.depth);
      if (options.domain == Domain::Rgb) write_binary(out_dir / (stem + ".rgb.u8"), colorize(render));
      json j3 = json::array(), j2 = json::array();
      for (std::size_t k = 0; k < cam_joints.size(); ++k) {
        j3.push_back({cam_joints[k].x(), cam_joints[k].y(), cam_joints[k].z()});
        j2.push_back({joints2d[2 * k], joints2d[2 * k + 1]});
      }
      write_json(out_dir / (stem + ".json"), {{"pose_id", pose_id},
                                             {"view", to_string(view)},
                                             {"joints3d", j3},
                                             {"joints2d", j2},
                                             {"camera", camera_to_json(camera)},
                                             {"split", to_string(split)}});
      manifest.samples.push_back({stem, static_cast<int>(pose_id), view, split});
    }
  }

  json samples = json::array();
  for (const auto& r : manifest.samples)
    samples.push_back({{"stem", r.stem}, {"pose_id", r.pose_id}, {"view", to_string(r.view)},
                       {"split", to_string(r.split)}});
  json views = json::array();
  for (View v : manifest.views) views.push_back(to_string(v));
  write_json(out_dir / "manifest.json",
             {{"version", manifest.version},
              {"joint_names", manifest.joint_names},
              {"domain", to_string(manifest.domain)},
              {"width", manifest.width},
              {"height", manifest.height},
              {"seed", manifest.seed},
              {"num_poses", manifest.num_poses},
              {"test_fraction", manifest.test_fraction},
              {"far_plane", manifest.far_plane},
              {"views", views},
              {"sampler",
               {{"limb_range_deg", manifest.sampler.limb_range_deg},
                {"spine_range_deg", manifest.sampler.spine_range_deg},
                {"root_yaw_deg", manifest.sampler.root_yaw_deg},
                {"root_shift_m", manifest.sampler.root_shift_m}}},
              {"samples", samples}});
  return manifest;
}

std::vector<std::size_t> Dataset::select(View view) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].view == view) idx.push_back(i);
  return idx;
}

std::vector<std::size_t> Dataset::select(View view, Split split) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].view == view && samples[i].split == split) idx.push_back(i);
  return idx;
}

PoseSample load_sample(const std::filesystem::path& dir, const DatasetManifest& manifest,
                       const DatasetManifest::Record& record) {
  const json meta = read_json(dir / (record.stem + ".json"));
  PoseSample s;
  s.stem = record.stem;
  s.domain = manifest.domain;
  s.width = manifest.width;
  s.height = manifest.height;
  try {
    s.pose_id = meta.at("pose_id").get<int>();
    s.view = parse_view(meta.at("view").get<std::string>());
    s.split = parse_split(meta.at("split").get<std::string>());
    s.camera = camera_from_json(meta.at("camera"), s.view, s.width, s.height);
    for (const auto& p : meta.at("joints3d"))
      for (int k = 0; k < 3; ++k) s.joints3d.push_back(p.at(k).get<double>());
    for (const auto& p : meta.at("joints2d"))
      for (int k = 0; k < 2; ++k) s.joints2d.push_back(p.at(k).get<double>());
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, record.stem + ".json: " + e.what());
  }
  require(s.pose_id == record.pose_id && s.view == record.view && s.split == record.split, ErrorKind::Data,
          record.stem + ".json disagrees with the manifest");
  require(s.joints() == manifest.joint_names.size() && s.joints2d.size() == 2 * s.joints(), ErrorKind::Data,
          record.stem + ".json has the wrong joint count");
  s.depth = read_binary<float>(dir / (record.stem + ".depth.f32"), s.width * s.height);
  if (s.domain == Domain::Rgb) s.rgb = read_binary<std::uint8_t>(dir / (record.stem + ".rgb.u8"), s.width * s.height * 3);
  return s;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const json doc = read_json(dir / "manifest.json");
  Dataset data;
  auto& m = data.manifest;
  try {
    m.version = doc.at("version").get<int>();
    require(m.version == 1, ErrorKind::Data, "unsupported dataset version " + std::to_string(m.version));
    m.joint_names = doc.at("joint_names").get<std::vector<std::string>>();
    m.domain = parse_domain(doc.at("domain").get<std::string>());
    m.width = doc.at("width").get<std::size_t>();
    m.height = doc.at("height").get<std::size_t>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.num_poses = doc.at("num_poses").get<std::size_t>();
    m.test_fraction = doc.at("test_fraction").get<double>();
    m.far_plane = doc.at("far_plane").get<double>();
    for (const auto& v : doc.at("views")) m.views.push_back(parse_view(v.get<std::string>()));
    const auto& sp = doc.at("sampler");
    m.sampler = {sp.at("limb_range_deg").get<double>(), sp.at("spine_range_deg").get<double>(),
                 sp.at("root_yaw_deg").get<double>(), sp.at("root_shift_m").get<double>()};
    for (const auto& r : doc.at("samples"))
      m.samples.push_back({r.at("stem").get<std::string>(), r.at("pose_id").get<int>(),
                           parse_view(r.at("view").get<std::string>()), parse_split(r.at("split").get<std::string>())});
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, (dir / "manifest.json").string() + ": " + e.what());
  }
  require(!m.samples.empty(), ErrorKind::Data, "dataset " + dir.string() + " has no samples");
  data.samples.reserve(m.samples.size());
  for (const auto& r : m.samples) data.samples.push_back(load_sample(dir, m, r));
  return data;
}

std::vector<float> normalize_input(const PoseSample& sample, double far_plane) {
  const std::size_t hw = sample.width * sample.height;
  if (sample.domain == Domain::Rgb) {
    require(sample.rgb.size() == 3 * hw, ErrorKind::Data, sample.stem + ": missing RGB image");
    std::vector<float> out(3 * hw);
    for (std::size_t i = 0; i < hw; ++i)
      for (std::size_t c = 0; c < 3; ++c) out[c * hw + i] = static_cast<float>(sample.rgb[i * 3 + c]) / 255.0f;
    return out;
  }
  require(sample.depth.size() == hw, ErrorKind::Data, sample.stem + ": missing depth image");
  std::vector<float> out(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    const double d = sample.depth[i];
    require(d >= 0.0, ErrorKind::Data, sample.stem + ": negative depth");
    out[i] = static_cast<float>(std::clamp(d / far_plane, 0.0, 1.0));
  }
  return out;
}

double denormalize_depth(double value, double far_plane) { return value * far_plane; }

std::vector<double> relief_target(const PoseSample& sample, std::size_t out_h, std::size_t out_w, double far_plane) {
  require(sample.height % out_h == 0 && sample.width % out_w == 0, ErrorKind::Config,
          "recon resolution must divide the input resolution");
  require(sample.depth.size() == sample.width * sample.height, ErrorKind::Data,
          sample.stem + ": the DM task needs a depth image");
  const std::size_t bh = sample.height / out_h, bw = sample.width / out_w;
  std::vector<double> out(out_h * out_w, 0.0);
  for (std::size_t y = 0; y < sample.height; ++y)
    for (std::size_t x = 0; x < sample.width; ++x)
      out[(y / bh) * out_w + x / bw] += far_plane - static_cast<double>(sample.depth[y * sample.width + x]);
  for (auto& v : out) v /= static_cast<double>(bh * bw);
  return out;
}

std::vector<double> joint_heatmaps(const PoseSample& sample, std::size_t out_h, std::size_t out_w) {
  const std::size_t j = sample.joints();
  const double sigma = 2.0 * static_cast<double>(out_w) / 64.0;
  std::vector<double> out(j * out_h * out_w);
  for (std::size_t k = 0; k < j; ++k) {
    const double cx = sample.joints2d[2 * k] * static_cast<double>(out_w);
    const double cy = sample.joints2d[2 * k + 1] * static_cast<double>(out_h);
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        out[(k * out_h + y) * out_w + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
  }
  return out;
}

template <typename T>
Batch<T> make_batch(const Dataset& data, const std::vector<std::size_t>& indices, const ModelConfig& config) {
  require(!indices.empty(), ErrorKind::Contract, "make_batch: empty index list");
  require(data.joints() == config.joints, ErrorKind::Config,
          "model has " + std::to_string(config.joints) + " joints but the dataset has " +
              std::to_string(data.joints()));
  require(data.manifest.height == config.input_height && data.manifest.width == config.input_width,
          ErrorKind::Config, "dataset resolution does not match the model input resolution");
  const std::size_t channels = data.manifest.domain == Domain::Rgb ? 3 : 1;
  require(channels == config.input_channels(), ErrorKind::Data,
          std::string("variant ") + to_string(config.variant) + " needs " +
              (config.input_channels() == 3 ? "rgb" : "depth") + " inputs, the dataset is " +
              to_string(data.manifest.domain));

  const std::size_t b = indices.size(), j = config.joints;
  const std::size_t hw = config.input_height * config.input_width;
  const bool want_dm = config.has_task(Task::DM), want_dmj = config.has_task(Task::DMJ);
  std::vector<T> x, y3, y2, dm;
  x.reserve(b * channels * hw);
  for (std::size_t i : indices) {
    const PoseSample& s = data.samples.at(i);
    for (float v : normalize_input(s, data.manifest.far_plane)) x.push_back(static_cast<T>(v));
    for (double v : s.joints3d) y3.push_back(static_cast<T>(v));
    for (double v : s.joints2d) y2.push_back(static_cast<T>(v));
    if (want_dm)
      for (double v : relief_target(s, config.recon_height, config.recon_width, data.manifest.far_plane))
        dm.push_back(static_cast<T>(v));
    if (want_dmj)
      for (double v : joint_heatmaps(s, config.recon_height, config.recon_width)) dm.push_back(static_cast<T>(v));
  }
  Batch<T> batch;
  batch.input = Tensor<T>({b, channels, config.input_height, config.input_width}, std::move(x));
  batch.y3d = Tensor<T>({b, j, 3}, std::move(y3));
  batch.y2d = Tensor<T>({b, j, 2}, std::move(y2));
  if (want_dm) batch.ydm = Tensor<T>({b, config.recon_height, config.recon_width}, std::move(dm));
  if (want_dmj) batch.ydm = Tensor<T>({b, j, config.recon_height, config.recon_width}, std::move(dm));
  return batch;
}

template Batch<float> make_batch(const Dataset&, const std::vector<std::size_t>&, const ModelConfig&);
template Batch<double> make_batch(const Dataset&, const std::vector<std::size_t>&, const ModelConfig&);

}  // namespace deca
