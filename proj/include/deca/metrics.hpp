#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace deca {

/// Stacked 3D points, one row per (sample, joint), metres.
using PointSet = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Builds a PointSet from a flat xyz array.
PointSet to_points(const std::vector<double>& xyz);

/// Mean Euclidean distance in millimetres.
double mpjpe_mm(const PointSet& pred, const PointSet& gt);

/// Fraction of points strictly closer than the threshold.
double map_at_threshold(const PointSet& pred, const PointSet& gt, double threshold_m = 0.10);

/// Best similarity transform s R pred + t onto gt (R proper), applied to pred.
/// Requires J >= 3 and rank >= 2 for both point sets.
PointSet procrustes_align(const PointSet& pred, const PointSet& gt);

/// MPJPE after aligning each sample of `joints` points separately.
double pa_mpjpe_mm(const PointSet& pred, const PointSet& gt, std::size_t joints);

/// Nearest-centroid purity of entities [N, J, dim] against their joint labels;
/// ties go to the lowest joint index.
double cluster_purity(const std::vector<double>& entities, std::size_t samples, std::size_t joints,
                      std::size_t dim = 16);

struct ShuffleBaseline {
  double mean = 0;
  double stddev = 0;
};

/// Purity under randomly permuted labels, over `trials` seeded shuffles.
ShuffleBaseline cluster_purity_shuffle_baseline(const std::vector<double>& entities, std::size_t samples,
                                                std::size_t joints, std::size_t trials, std::uint64_t seed,
                                                std::size_t dim = 16);

struct JointMetrics {
  double error_mm = 0;
  double hit_rate = 0;
};

struct MetricsReport {
  std::size_t samples = 0;
  double mpjpe_mm = 0;
  double mpjpe_pa_mm = 0;
  double map_010 = 0;
  std::map<std::string, JointMetrics> per_joint;
  /// "upper", "lower" and "mean": averages of the member joints' entries.
  std::map<std::string, JointMetrics> body_part_groups;
  double cluster_purity = 0;
};

/// Upper body: head, neck, shoulders, elbows, hands, torso. Lower: hips, knees, feet.
bool is_upper_body(const std::string& joint_name);

/// pred/gt: N x J rows; entities: N * J * 16 values (may be empty).
MetricsReport compute_report(const PointSet& pred, const PointSet& gt, const std::vector<std::string>& joint_names,
                             const std::vector<double>& entities);

nlohmann::json to_json(const MetricsReport& report);

}  // namespace deca
