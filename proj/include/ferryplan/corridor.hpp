#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ferryplan/ferry_model.hpp"

namespace ferryplan::corridor {

using env::Vec2;

/// s x + q y + c <= 0 with (s, q) of unit length (outward normal).
struct HalfPlane {
  double s = 0.0;
  double q = 0.0;
  double c = 0.0;

  double eval(const Vec2& p) const { return s * p.x() + q * p.y() + c; }
  Vec2 normal() const { return {s, q}; }
};

/// Convex, bounded, non-empty operation area given as an intersection of half-planes.
class Corridor {
 public:
  /// Normalizes the normals and checks that the region is non-empty and bounded.
  explicit Corridor(std::vector<HalfPlane> halfplanes);

  const std::vector<HalfPlane>& halfplanes() const { return halfplanes_; }
  std::size_t size() const { return halfplanes_.size(); }

  /// Constraint values, all <= 0 inside.
  Eigen::VectorXd eval(const Vec2& p) const;
  double max_violation(const Vec2& p) const;
  bool contains(const Vec2& p, double tolerance = 0.0) const;

  /// Corner points of the region, counterclockwise.
  const std::vector<Vec2>& vertices() const { return vertices_; }
  Vec2 centroid() const;

 private:
  std::vector<HalfPlane> halfplanes_;
  std::vector<Vec2> vertices_;
};

/// One half-plane per edge of a strictly convex counterclockwise polygon.
/// Throws GeometryError naming the offending vertex otherwise.
Corridor corridor_from_polygon(std::span<const Vec2> vertices);

/// Default bound on |(X_a, Y_a)|: the force both azimuth thrusters deliver together.
double default_force_limit(const model::FerryParams& params);
/// The alternative reading that bounds |(X_a, Y_a)| by a single thruster's maximum.
double single_thruster_force_limit(const model::FerryParams& params);

/// Corridor plus the actuator-force bound.
struct PathConstraintSet {
  Corridor corridor;
  double F_limit = 48000.0;  ///< N

  std::size_t size() const { return corridor.size() + 1; }
};

/// First the corridor values, then X_a^2 + Y_a^2 - F_limit^2.
Eigen::VectorXd evaluate_path_constraints(const PathConstraintSet& set, const model::State& state,
                                          const model::ControlInput& input);

}  // namespace ferryplan::corridor
