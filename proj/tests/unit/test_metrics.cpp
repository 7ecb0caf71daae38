#include <cmath>

#include <Eigen/Geometry>

#include "deca/error.hpp"
#include "deca/metrics.hpp"
#include "deca/rng.hpp"
#include "doctest.h"

using namespace deca;

namespace {

PointSet random_points(std::size_t n, Rng& rng, double scale = 1.0) {
  PointSet p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = scale * uniform(rng, -1, 1);
  return p;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(normal01(rng), normal01(rng), normal01(rng), normal01(rng));
  return q.normalized().toRotationMatrix();
}

PointSet transform(const PointSet& p, double s, const Eigen::Matrix3d& r, const Eigen::RowVector3d& t) {
  return (s * (p * r.transpose())).rowwise() + t;
}

double loop_mpjpe(const PointSet& a, const PointSet& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) d2 += (a(i, k) - b(i, k)) * (a(i, k) - b(i, k));
    total += std::sqrt(d2);
  }
  return 1000.0 * total / double(a.rows());
}

double sum_sq(const PointSet& a, const PointSet& b) { return (a - b).squaredNorm(); }

// Coarse search over scale, rotation (Euler grid) and translation. For a
// fixed s R the best t matches centroids, so only s and R are gridded.
double grid_procrustes_residual(const PointSet& pred, const PointSet& gt) {
  const Eigen::RowVector3d mg = gt.colwise().mean(), mp = pred.colwise().mean();
  double best = std::numeric_limits<double>::infinity();
  const int steps = 36;
  for (int a = 0; a < steps; ++a)
    for (int b = 0; b <= steps / 2; ++b)
      for (int c = 0; c < steps; ++c) {
        const double pi = std::numbers::pi;
        const Eigen::Matrix3d r = (Eigen::AngleAxisd(2 * pi * a / steps, Eigen::Vector3d::UnitZ()) *
                                   Eigen::AngleAxisd(pi * b / (steps / 2), Eigen::Vector3d::UnitY()) *
                                   Eigen::AngleAxisd(2 * pi * c / steps, Eigen::Vector3d::UnitZ()))
                                      .toRotationMatrix();
        const PointSet rot = (pred.rowwise() - mp) * r.transpose();
        // Optimal scale for this rotation, clamped to a positive grid range.
        const PointSet g = gt.rowwise() - mg;
        const double s = std::max(1e-3, (rot.array() * g.array()).sum() / rot.squaredNorm());
        best = std::min(best, sum_sq(s * rot, g));
      }
  return best;
}

}  // namespace

TEST_CASE("mpjpe") {
  Rng rng(1);
  const auto p = random_points(30, rng);
  CHECK(mpjpe_mm(p, p) == 0.0);
  PointSet a = PointSet::Zero(1, 3), b(1, 3);
  b << 0.003, 0.004, 0.0;
  CHECK(std::abs(mpjpe_mm(a, b) - 5.0) < 1e-12);
  const auto q = random_points(30, rng);
  CHECK(std::abs(mpjpe_mm(p, q) - loop_mpjpe(p, q)) < 1e-9);
  CHECK_THROWS_AS(mpjpe_mm(p, random_points(29, rng)), Error);
}

TEST_CASE("map at threshold is strict") {
  PointSet gt = PointSet::Zero(2, 3), pred = PointSet::Zero(2, 3);
  CHECK(map_at_threshold(pred, gt) == 1.0);
  pred(0, 0) = 0.05;
  pred(1, 1) = 0.15;
  CHECK(map_at_threshold(pred, gt) == 0.5);
  PointSet exact = PointSet::Zero(1, 3), origin = PointSet::Zero(1, 3);
  exact(0, 2) = 0.10;
  CHECK(map_at_threshold(exact, origin) == 0.0);
  CHECK(map_at_threshold(exact, origin, 0.1000001) == 1.0);
}

TEST_CASE("metrics are invariant under shared rigid motions") {
  Rng rng(2);
  const auto p = random_points(45, rng, 0.3), g = random_points(45, rng, 0.3);
  const auto r = random_rotation(rng);
  const Eigen::RowVector3d t(0.5, -2.0, 3.0);
  CHECK(std::abs(mpjpe_mm(transform(p, 1, r, t), transform(g, 1, r, t)) - mpjpe_mm(p, g)) < 1e-9);
  CHECK(map_at_threshold(transform(p, 1, r, t), transform(g, 1, r, t)) == map_at_threshold(p, g));
}

TEST_CASE("procrustes recovers exact similarity transforms") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gt = random_points(15, rng);
    const auto r = random_rotation(rng);
    CHECK(mpjpe_mm(procrustes_align(transform(gt, 1.0, r, Eigen::RowVector3d::Zero()), gt), gt) < 1e-9);
    CHECK(mpjpe_mm(procrustes_align(transform(gt, 2.0, Eigen::Matrix3d::Identity(), Eigen::RowVector3d::Zero()), gt),
                   gt) < 1e-9);
    const Eigen::RowVector3d t(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
    CHECK(mpjpe_mm(procrustes_align(transform(gt, 0.7, r, t), gt), gt) < 1e-9);
  }
}

TEST_CASE("procrustes handles reflections with a proper rotation") {
  Rng rng(4);
  const auto gt = random_points(10, rng);
  PointSet mirrored = gt;
  mirrored.col(0) *= -1.0;
  const auto aligned = procrustes_align(mirrored, gt);
  // Recover the applied map by least squares and check it has det > 0.
  const PointSet x = mirrored.rowwise() - mirrored.colwise().mean();
  const PointSet y = aligned.rowwise() - aligned.colwise().mean();
  const Eigen::Matrix3d m = x.colPivHouseholderQr().solve(y);
  CHECK(m.determinant() > 0.0);
  CHECK(mpjpe_mm(aligned, gt) > 1.0);
}

TEST_CASE("procrustes matches a grid-search oracle and never loses to simple baselines") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto gt = random_points(4, rng), pred = random_points(4, rng);
    const double residual = sum_sq(procrustes_align(pred, gt), gt);
    const double grid = grid_procrustes_residual(pred, gt);
    CHECK(residual <= grid + 1e-12);
    // 10 degree grid: the continuous optimum is close to the grid's.
    CHECK(grid - residual < 0.05 * sum_sq(pred.rowwise() - pred.colwise().mean(), gt.rowwise() - gt.colwise().mean()) + 1e-9);

    const PointSet centred = (pred.rowwise() - pred.colwise().mean()).rowwise() + gt.colwise().mean();
    const double aligned_mm = mpjpe_mm(procrustes_align(pred, gt), gt);
    CHECK(aligned_mm <= std::min(mpjpe_mm(pred, gt), mpjpe_mm(centred, gt)) + 1e-9);
  }
}

TEST_CASE("procrustes degeneracy") {
  PointSet line(4, 3);
  line << 0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0;
  Rng rng(6);
  const auto p = random_points(4, rng);
  try {
    procrustes_align(p, line);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Degenerate);
  }
  CHECK_THROWS_AS(procrustes_align(random_points(2, rng), random_points(2, rng)), Error);
  CHECK_THROWS_AS(procrustes_align(PointSet::Zero(4, 3), p), Error);
}

TEST_CASE("cluster purity") {
  const std::size_t n = 10, j = 5;
  std::vector<double> separated(n * j * 16, 0.0);
  Rng rng(7);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < j; ++k) {
      for (std::size_t d = 0; d < 16; ++d) separated[(s * j + k) * 16 + d] = uniform(rng, -1, 1);
      separated[(s * j + k) * 16 + k] += 1000.0;
    }
  CHECK(cluster_purity(separated, n, j) == 1.0);

  const std::vector<double> same(n * j * 16, 0.5);
  CHECK(cluster_purity(same, n, j) == doctest::Approx(1.0 / j));
  CHECK_THROWS_AS(cluster_purity(same, 1, j * n), Error);

  std::vector<double> noise(200 * 15 * 16);
  for (auto& v : noise) v = normal01(rng);
  const double purity = cluster_purity(noise, 200, 15);
  const auto base = cluster_purity_shuffle_baseline(noise, 200, 15, 50, 99);
  CHECK(base.stddev > 0.0);
  CHECK(std::abs(purity - base.mean) <= 3.0 * base.stddev);
}

TEST_CASE("report aggregates") {
  Rng rng(8);
  const auto& names = std::vector<std::string>{"head", "neck", "r_hip", "l_knee", "torso"};
  const auto gt = random_points(4 * 5, rng, 0.5);
  PointSet pred = gt + random_points(4 * 5, rng, 0.08);
  std::vector<double> entities(4 * 5 * 16);
  for (auto& v : entities) v = normal01(rng);
  const auto r = compute_report(pred, gt, names, entities);
  CHECK(r.samples == 4);
  CHECK(r.mpjpe_mm == mpjpe_mm(pred, gt));
  CHECK(r.map_010 == map_at_threshold(pred, gt));
  CHECK(std::isfinite(r.mpjpe_pa_mm));
  CHECK(r.mpjpe_pa_mm <= r.mpjpe_mm + 1e-9);

  double upper = 0.0, lower = 0.0, hits = 0.0;
  for (const auto& nm : {"head", "neck", "torso"}) upper += r.per_joint.at(nm).error_mm;
  for (const auto& nm : {"r_hip", "l_knee"}) lower += r.per_joint.at(nm).error_mm;
  for (const auto& [nm, m] : r.per_joint) hits += m.hit_rate;
  CHECK(r.body_part_groups.at("upper").error_mm == upper / 3);
  CHECK(r.body_part_groups.at("lower").error_mm == lower / 2);
  CHECK(std::abs(r.body_part_groups.at("mean").hit_rate - r.map_010) < 1e-12);
  CHECK(std::abs(hits / 5 - r.map_010) < 1e-12);
  CHECK(std::abs(r.body_part_groups.at("mean").error_mm - r.mpjpe_mm) < 1e-9);

  const auto doc = to_json(r);
  CHECK(doc.at("per_joint").size() == 5);
  CHECK(doc.at("mpjpe_mm").get<double>() == r.mpjpe_mm);
  CHECK(doc.contains("cluster_purity"));
  CHECK(is_upper_body("l_hand"));
  CHECK(!is_upper_body("r_foot"));
}
