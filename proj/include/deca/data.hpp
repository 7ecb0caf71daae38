#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "deca/model.hpp"
#include "deca/rng.hpp"

namespace deca {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class View { Front, Top, Free };
enum class Domain { Depth, Rgb };
enum class Split { Train, Test };

const char* to_string(View v) noexcept;
const char* to_string(Domain d) noexcept;
const char* to_string(Split s) noexcept;
View parse_view(const std::string& s);
Domain parse_domain(const std::string& s);
Split parse_split(const std::string& s);

inline constexpr std::size_t kMaxJoints = 15;
inline constexpr double kFarPlane = 10.0;

/// Joint names of the full skeleton in parent-first order.
const std::vector<std::string>& joint_names();

/// Tree of J named joints in the world frame (metres, y up).
struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parents;     // -1 for the root
  std::vector<Vec3> joints;     // canonical standing pose
  std::vector<double> radii;    // radius of the bone ending at each joint; 0 for the root

  std::size_t size() const { return names.size(); }
};

/// The first J joints of the 15-joint skeleton; any prefix is a valid tree.
Skeleton canonical_skeleton(std::size_t joints = kMaxJoints);

struct PoseSamplerParams {
  double limb_range_deg = 45.0;
  double spine_range_deg = 15.0;
  double root_yaw_deg = 15.0;
  double root_shift_m = 0.1;
};

/// Forward kinematics with uniform per-bone rotations about the local x and z
/// axes. Limbs (upper/lower arm and leg) use limb_range, the rest spine_range;
/// the whole body is turned about y and shifted in the ground plane.
std::vector<Vec3> sample_pose(const Skeleton& skeleton, const PoseSamplerParams& params, Rng& rng);

/// Pinhole camera, OpenCV convention (x right, y down, z forward).
struct CameraView {
  View tag = View::Front;
  Mat3 rotation = Mat3::Identity();      // world -> camera
  Vec3 translation = Vec3::Zero();       // camera = R world + t
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::size_t width = 0, height = 0;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& camera) const { return rotation.transpose() * (camera - translation); }
};

/// Front: 3 m in front of the subject at hip height. Top: 2.5 m above the
/// head looking down. Free: random azimuth and elevation (needs `rng`).
CameraView make_camera(View tag, std::size_t width, std::size_t height, Rng* rng = nullptr);

/// Pinhole projection of camera-frame points, normalized by (W, H). Returns
/// 2 J values.
std::vector<double> project(const std::vector<Vec3>& camera_joints, const CameraView& view);

struct Capsule {
  Vec3 a, b;
  double radius = 0;
};

/// One capsule per bone (joint with a parent).
std::vector<Capsule> skeleton_capsules(const Skeleton& skeleton, const std::vector<Vec3>& world_joints);

struct DepthRender {
  std::vector<float> depth;  // H x W metres, background = far plane
  std::vector<int> part;     // bone index per pixel, -1 for background
};

/// Z-buffer ray casting through pixel centres against world-frame capsules.
DepthRender render_depth(const std::vector<Capsule>& capsules, const CameraView& view,
                         double far_plane = kFarPlane);

/// Flat per-bone colours over a black background, H x W x 3.
std::vector<std::uint8_t> colorize(const DepthRender& render);

struct PoseSample {
  std::string stem;
  int pose_id = 0;
  View view = View::Front;
  Split split = Split::Train;
  Domain domain = Domain::Depth;
  std::size_t width = 0, height = 0;
  std::vector<float> depth;          // H x W metres (both domains)
  std::vector<std::uint8_t> rgb;     // H x W x 3 (RGB domain)
  std::vector<double> joints3d;      // J x 3, camera frame
  std::vector<double> joints2d;      // J x 2, normalized
  CameraView camera;

  std::size_t joints() const { return joints3d.size() / 3; }
};

struct DatasetManifest {
  int version = 1;
  std::vector<std::string> joint_names;
  Domain domain = Domain::Depth;
  std::size_t width = 64, height = 64;
  std::uint64_t seed = 0;
  std::size_t num_poses = 0;
  double test_fraction = 0.2;
  double far_plane = kFarPlane;
  PoseSamplerParams sampler;
  std::vector<View> views;
  struct Record {
    std::string stem;
    int pose_id = 0;
    View view = View::Front;
    Split split = Split::Train;
  };
  std::vector<Record> samples;
};

struct GenerateOptions {
  std::size_t num_poses = 10;
  std::vector<View> views{View::Front, View::Top};
  std::size_t joints = kMaxJoints;
  std::size_t width = 64, height = 64;
  Domain domain = Domain::Depth;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  PoseSamplerParams sampler;
};

/// Poses with id >= round(n (1 - test_fraction)) form the test split.
Split split_for_pose(std::size_t pose_id, std::size_t num_poses, double test_fraction);

/// Samples, renders and writes every (pose, view) pair plus the manifest.
DatasetManifest generate_synthetic(const GenerateOptions& options, const std::filesystem::path& out_dir);

struct Dataset {
  DatasetManifest manifest;
  std::vector<PoseSample> samples;

  std::size_t joints() const { return manifest.joint_names.size(); }
  /// Indices of samples with the given view (and split, when requested).
  std::vector<std::size_t> select(View view) const;
  std::vector<std::size_t> select(View view, Split split) const;
};

Dataset load_dataset(const std::filesystem::path& dir);
PoseSample load_sample(const std::filesystem::path& dir, const DatasetManifest& manifest,
                       const DatasetManifest::Record& record);

/// [C, H, W] values in [0, 1]: depth / far clamped, or RGB / 255.
std::vector<float> normalize_input(const PoseSample& sample, double far_plane = kFarPlane);
double denormalize_depth(double value, double far_plane = kFarPlane);

/// Depth-map target at (H', W'): far - depth (0 on background), block-averaged.
std::vector<double> relief_target(const PoseSample& sample, std::size_t out_h, std::size_t out_w,
                                  double far_plane = kFarPlane);

/// J Gaussian heatmaps at (H', W') around the projected joints; the width is
/// 2 px at 64 px input, scaled with the output width.
std::vector<double> joint_heatmaps(const PoseSample& sample, std::size_t out_h, std::size_t out_w);

template <typename T>
struct Batch {
  Tensor<T> input;      // [B, C, H, W]
  Tensor<T> y3d;        // [B, J, 3]
  Tensor<T> y2d;        // [B, J, 2]
  Tensor<T> ydm;        // [B, H', W'] or [B, J, H', W']
};

/// Assembles inputs and the targets the config's tasks need.
template <typename T>
Batch<T> make_batch(const Dataset& data, const std::vector<std::size_t>& indices, const ModelConfig& config);

}  // namespace deca
