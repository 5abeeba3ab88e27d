#include "ferryplan/corridor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ferryplan/error.hpp"

namespace ferryplan::corridor {

namespace {

constexpr double kTol = 1e-9;

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

Corridor::Corridor(std::vector<HalfPlane> halfplanes) : halfplanes_(std::move(halfplanes)) {
  if (halfplanes_.size() < 3) throw GeometryError("a corridor needs at least 3 half-planes");
  for (std::size_t i = 0; i < halfplanes_.size(); ++i) {
    auto& h = halfplanes_[i];
    const double n = std::hypot(h.s, h.q);
    if (!(n > 0.0) || !std::isfinite(n) || !std::isfinite(h.c))
      throw GeometryError("half-plane " + std::to_string(i) + " has a degenerate normal", static_cast<long>(i));
    h.s /= n;
    h.q /= n;
    h.c /= n;
  }

  // Bounded iff no direction d has n_i . d <= 0 for every half-plane. In 2D the
  // recession cone, when non-trivial, contains a ray orthogonal to some normal.
  for (const auto& h : halfplanes_) {
    for (double sign : {1.0, -1.0}) {
      const Vec2 d = sign * Vec2(-h.q, h.s);
      const bool recedes = std::all_of(halfplanes_.begin(), halfplanes_.end(),
                                       [&](const HalfPlane& o) { return o.normal().dot(d) <= kTol; });
      if (recedes) throw GeometryError("corridor is unbounded");
    }
  }

  // Bounded: the region is the convex hull of the feasible pairwise intersections.
  std::vector<Vec2> pts;
  for (std::size_t i = 0; i < halfplanes_.size(); ++i) {
    for (std::size_t j = i + 1; j < halfplanes_.size(); ++j) {
      const auto& a = halfplanes_[i];
      const auto& b = halfplanes_[j];
      const double det = a.s * b.q - a.q * b.s;
      if (std::abs(det) < 1e-12) continue;
      const Vec2 p((-a.c * b.q + a.q * b.c) / det, (-a.s * b.c + a.c * b.s) / det);
      const double scale = 1.0 + p.cwiseAbs().maxCoeff();
      if (max_violation(p) <= kTol * scale) pts.push_back(p);
    }
  }
  if (pts.size() < 3) throw GeometryError("corridor is empty or has no interior");

  Vec2 mid = Vec2::Zero();
  for (const auto& p : pts) mid += p;
  mid /= static_cast<double>(pts.size());
  std::sort(pts.begin(), pts.end(), [&](const Vec2& a, const Vec2& b) {
    return std::atan2(a.y() - mid.y(), a.x() - mid.x()) < std::atan2(b.y() - mid.y(), b.x() - mid.x());
  });
  for (const auto& p : pts) {
    if (vertices_.empty() || (p - vertices_.back()).norm() > 1e-9 * (1.0 + p.norm())) vertices_.push_back(p);
  }
  if (vertices_.size() > 1 && (vertices_.front() - vertices_.back()).norm() <= 1e-9 * (1.0 + vertices_.front().norm()))
    vertices_.pop_back();
  if (vertices_.size() < 3 || max_violation(centroid()) >= 0.0) throw GeometryError("corridor has no interior");
}

Eigen::VectorXd Corridor::eval(const Vec2& p) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(halfplanes_.size()));
  for (std::size_t i = 0; i < halfplanes_.size(); ++i) out(static_cast<Eigen::Index>(i)) = halfplanes_[i].eval(p);
  return out;
}

double Corridor::max_violation(const Vec2& p) const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& h : halfplanes_) worst = std::max(worst, h.eval(p));
  return worst;
}

bool Corridor::contains(const Vec2& p, double tolerance) const { return max_violation(p) <= tolerance; }

Vec2 Corridor::centroid() const {
  // Area centroid of the vertex polygon.
  double area = 0.0;
  Vec2 acc = Vec2::Zero();
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    const Vec2& a = vertices_[i];
    const Vec2& b = vertices_[(i + 1) % vertices_.size()];
    const double w = cross(a, b);
    area += w;
    acc += w * (a + b);
  }
  return acc / (3.0 * area);
}

Corridor corridor_from_polygon(std::span<const Vec2> vertices) {
  const std::size_t n = vertices.size();
  if (n < 3) throw GeometryError("a corridor polygon needs at least 3 vertices");
  for (const auto& v : vertices)
    if (!v.allFinite()) throw GeometryError("non-finite vertex");
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& prev = vertices[(i + n - 1) % n];
    const Vec2& cur = vertices[i];
    const Vec2& next = vertices[(i + 1) % n];
    const Vec2 e0 = cur - prev;
    const Vec2 e1 = next - cur;
    if (e0.norm() == 0.0 || e1.norm() == 0.0)
      throw GeometryError("repeated vertex " + std::to_string(i), static_cast<long>(i));
    const double turn = cross(e0, e1) / (e0.norm() * e1.norm());
    if (std::abs(turn) <= 1e-12)
      throw GeometryError("vertex " + std::to_string(i) + " is collinear with its neighbours", static_cast<long>(i));
    if (turn < 0.0)
      throw GeometryError("vertex " + std::to_string(i) + " turns clockwise (polygon must be convex and counterclockwise)",
                          static_cast<long>(i));
  }
  // Total turning of a simple convex polygon is exactly one revolution.
  double winding = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 e0 = vertices[i] - vertices[(i + n - 1) % n];
    const Vec2 e1 = vertices[(i + 1) % n] - vertices[i];
    winding += std::atan2(cross(e0, e1), e0.dot(e1));
  }
  if (std::abs(winding - 2.0 * M_PI) > 1e-6) throw GeometryError("polygon is self-intersecting");

  std::vector<HalfPlane> hp;
  hp.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = vertices[i];
    const Vec2& b = vertices[(i + 1) % n];
    const Vec2 e = (b - a).normalized();
    const Vec2 outward(e.y(), -e.x());
    hp.push_back({outward.x(), outward.y(), -outward.dot(a)});
  }
  return Corridor(std::move(hp));
}

double default_force_limit(const model::FerryParams& params) { return 2.0 * params.F_AT_max; }

double single_thruster_force_limit(const model::FerryParams& params) { return params.F_AT_max; }

Eigen::VectorXd evaluate_path_constraints(const PathConstraintSet& set, const model::State& state,
                                          const model::ControlInput& input) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(set.size()));
  out.head(static_cast<Eigen::Index>(set.corridor.size())) = set.corridor.eval(state.position());
  out(out.size() - 1) = input.X_a * input.X_a + input.Y_a * input.Y_a - set.F_limit * set.F_limit;
  return out;
}

}  // namespace ferryplan::corridor
