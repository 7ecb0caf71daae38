#include "deca/metrics.hpp"

#include <cmath>
#include <numeric>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "deca/error.hpp"
#include "deca/rng.hpp"

namespace deca {

namespace {

void require_same(const PointSet& pred, const PointSet& gt, const char* what) {
  require(pred.rows() == gt.rows() && pred.rows() > 0, ErrorKind::Dimension,
          std::string(what) + ": " + std::to_string(pred.rows()) + " predicted vs " + std::to_string(gt.rows()) +
              " ground-truth points");
}

std::size_t rank2d(const PointSet& centred) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(centred.transpose() * centred);
  const auto s = svd.singularValues();
  if (s(0) <= 0) return 0;
  std::size_t r = 0;
  for (int i = 0; i < 3; ++i) r += s(i) > 1e-12 * s(0);
  return r;
}

// Per-joint labels are implicit: entity (n, j) has label j.
double purity_with_labels(const std::vector<double>& entities, std::size_t samples, std::size_t joints,
                          std::size_t dim, const std::vector<std::size_t>& labels) {
  const std::size_t total = samples * joints;
  std::vector<double> centroid(joints * dim, 0.0);
  std::vector<std::size_t> count(joints, 0);
  for (std::size_t e = 0; e < total; ++e) {
    ++count[labels[e]];
    for (std::size_t d = 0; d < dim; ++d) centroid[labels[e] * dim + d] += entities[e * dim + d];
  }
  for (std::size_t j = 0; j < joints; ++j)
    if (count[j] > 0)
      for (std::size_t d = 0; d < dim; ++d) centroid[j * dim + d] /= static_cast<double>(count[j]);
  std::size_t correct = 0;
  for (std::size_t e = 0; e < total; ++e) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < joints; ++j) {
      if (count[j] == 0) continue;
      double dist = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = entities[e * dim + d] - centroid[j * dim + d];
        dist += diff * diff;
      }
      if (dist < best_d) {
        best_d = dist;
        best = j;
      }
    }
    correct += best == labels[e];
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

PointSet to_points(const std::vector<double>& xyz) {
  require(xyz.size() % 3 == 0, ErrorKind::Dimension, "point array length is not a multiple of 3");
  PointSet p(static_cast<Eigen::Index>(xyz.size() / 3), 3);
  for (std::size_t i = 0; i < xyz.size(); ++i) p.data()[i] = xyz[i];
  return p;
}

double mpjpe_mm(const PointSet& pred, const PointSet& gt) {
  require_same(pred, gt, "mpjpe");
  return 1000.0 * (pred - gt).rowwise().norm().mean();
}

double map_at_threshold(const PointSet& pred, const PointSet& gt, double threshold_m) {
  require_same(pred, gt, "map_at_threshold");
  const Eigen::VectorXd d = (pred - gt).rowwise().norm();
  return static_cast<double>((d.array() < threshold_m).count()) / static_cast<double>(d.size());
}

PointSet procrustes_align(const PointSet& pred, const PointSet& gt) {
  require_same(pred, gt, "procrustes_align");
  require(pred.rows() >= 3, ErrorKind::Degenerate, "procrustes_align needs at least 3 points");
  const Eigen::RowVector3d mu_p = pred.colwise().mean();
  const Eigen::RowVector3d mu_g = gt.colwise().mean();
  const PointSet x = pred.rowwise() - mu_p;
  const PointSet y = gt.rowwise() - mu_g;
  require(rank2d(x) >= 2 && rank2d(y) >= 2, ErrorKind::Degenerate, "procrustes_align: point set has rank < 2");
  const Eigen::Matrix3d h = x.transpose() * y;
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sign(1.0, 1.0, (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0);
  const Eigen::Matrix3d r = svd.matrixV() * sign.asDiagonal() * svd.matrixU().transpose();
  const double scale = svd.singularValues().dot(sign) / x.squaredNorm();
  PointSet aligned = (scale * (x * r.transpose())).rowwise() + mu_g;
  return aligned;
}

double pa_mpjpe_mm(const PointSet& pred, const PointSet& gt, std::size_t joints) {
  require_same(pred, gt, "pa_mpjpe");
  require(joints > 0 && pred.rows() % static_cast<Eigen::Index>(joints) == 0, ErrorKind::Dimension,
          "pa_mpjpe: row count is not a multiple of the joint count");
  const auto j = static_cast<Eigen::Index>(joints);
  double total = 0.0;
  for (Eigen::Index s = 0; s < pred.rows(); s += j) {
    const PointSet p = pred.middleRows(s, j), g = gt.middleRows(s, j);
    total += (procrustes_align(p, g) - g).rowwise().norm().sum();
  }
  return 1000.0 * total / static_cast<double>(pred.rows());
}

double cluster_purity(const std::vector<double>& entities, std::size_t samples, std::size_t joints, std::size_t dim) {
  require(samples >= 2, ErrorKind::Contract, "cluster_purity needs at least two samples");
  require(entities.size() == samples * joints * dim, ErrorKind::Dimension, "cluster_purity: entity array size");
  std::vector<std::size_t> labels(samples * joints);
  for (std::size_t e = 0; e < labels.size(); ++e) labels[e] = e % joints;
  return purity_with_labels(entities, samples, joints, dim, labels);
}

ShuffleBaseline cluster_purity_shuffle_baseline(const std::vector<double>& entities, std::size_t samples,
                                                std::size_t joints, std::size_t trials, std::uint64_t seed,
                                                std::size_t dim) {
  require(samples >= 2 && trials >= 2, ErrorKind::Contract, "shuffle baseline needs two samples and two trials");
  require(entities.size() == samples * joints * dim, ErrorKind::Dimension, "cluster_purity: entity array size");
  Rng rng(seed);
  std::vector<double> values;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<std::size_t> labels(samples * joints);
    for (std::size_t e = 0; e < labels.size(); ++e) labels[e] = e % joints;
    for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[uniform_index(rng, i)]);
    values.push_back(purity_with_labels(entities, samples, joints, dim, labels));
  }
  ShuffleBaseline b;
  b.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(trials);
  for (double v : values) b.stddev += (v - b.mean) * (v - b.mean);
  b.stddev = std::sqrt(b.stddev / static_cast<double>(trials - 1));
  return b;
}

bool is_upper_body(const std::string& name) {
  return !(name.find("hip") != std::string::npos || name.find("knee") != std::string::npos ||
           name.find("foot") != std::string::npos);
}

MetricsReport compute_report(const PointSet& pred, const PointSet& gt, const std::vector<std::string>& joint_names,
                             const std::vector<double>& entities) {
  require_same(pred, gt, "compute_report");
  const std::size_t joints = joint_names.size();
  require(joints > 0 && static_cast<std::size_t>(pred.rows()) % joints == 0, ErrorKind::Dimension,
          "compute_report: row count is not a multiple of the joint count");
  MetricsReport r;
  r.samples = static_cast<std::size_t>(pred.rows()) / joints;
  r.mpjpe_mm = mpjpe_mm(pred, gt);
  r.map_010 = map_at_threshold(pred, gt);
  r.mpjpe_pa_mm = joints >= 3 ? pa_mpjpe_mm(pred, gt, joints) : std::nan("");
  const Eigen::VectorXd dist = (pred - gt).rowwise().norm();
  for (std::size_t j = 0; j < joints; ++j) {
    double err = 0.0, hits = 0.0;
    for (std::size_t s = 0; s < r.samples; ++s) {
      const double d = dist(static_cast<Eigen::Index>(s * joints + j));
      err += d;
      hits += d < 0.10 ? 1.0 : 0.0;
    }
    r.per_joint[joint_names[j]] = {1000.0 * err / static_cast<double>(r.samples),
                                   hits / static_cast<double>(r.samples)};
  }
  for (const char* group : {"upper", "lower", "mean"}) {
    JointMetrics agg;
    std::size_t n = 0;
    for (const auto& name : joint_names) {
      const std::string g = group;
      if (g != "mean" && is_upper_body(name) != (g == "upper")) continue;
      agg.error_mm += r.per_joint[name].error_mm;
      agg.hit_rate += r.per_joint[name].hit_rate;
      ++n;
    }
    if (n == 0) continue;
    agg.error_mm /= static_cast<double>(n);
    agg.hit_rate /= static_cast<double>(n);
    r.body_part_groups[group] = agg;
  }
  r.cluster_purity = entities.empty() || r.samples < 2 ? std::nan("") : cluster_purity(entities, r.samples, joints);
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  auto number = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json per_joint = nlohmann::json::object(), groups = nlohmann::json::object();
  for (const auto& [name, m] : r.per_joint) per_joint[name] = {{"error_mm", m.error_mm}, {"hit_rate", m.hit_rate}};
  for (const auto& [name, m] : r.body_part_groups) groups[name] = {{"error_mm", m.error_mm}, {"hit_rate", m.hit_rate}};
  return {{"samples", r.samples},         {"mpjpe_mm", number(r.mpjpe_mm)},
          {"mpjpe_pa_mm", number(r.mpjpe_pa_mm)}, {"map_010", number(r.map_010)},
          {"per_joint", per_joint},       {"body_part_groups", groups},
          {"cluster_purity", number(r.cluster_purity)}};
}

}  // namespace deca
