#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ferryplan::env {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Sanity bounds applied at ingest.
inline constexpr double kMaxWindSpeed = 60.0;
inline constexpr double kMaxCurrentSpeed = 5.0;

/// One row of the environmental table: position plus wind and current velocity, all SI.
struct EnvSample {
  double x_l = 0.0;
  double y_l = 0.0;
  double vx_wind = 0.0;
  double vy_wind = 0.0;
  double vx_current = 0.0;
  double vy_current = 0.0;

  Vec2 position() const { return {x_l, y_l}; }
  Vec2 wind() const { return {vx_wind, vy_wind}; }
  Vec2 current() const { return {vx_current, vy_current}; }
};

enum class FieldKind { wind, current };

const char* to_string(FieldKind kind);

/// Value and derivatives of a 2D vector field at one position.
struct FieldEval {
  Vec2 value = Vec2::Zero();
  Mat2 jacobian = Mat2::Zero();  ///< row c is d v_c / d p
  std::array<Mat2, 2> hessians{Mat2::Zero(), Mat2::Zero()};
};

/// Spatial second-order model of a 2D velocity field:
///   v_c(p) = 1/2 p^T Q_c p + L_c p + mu_c,  c in {x, y}.
/// Q_c is kept symmetric, so each field has 12 free parameters.
class QuadraticField2D {
 public:
  static constexpr std::size_t kParameterCount = 12;

  QuadraticField2D() = default;
  QuadraticField2D(const Mat2& Qx, const Mat2& Qy, const Vec2& Lx, const Vec2& Ly, double mux, double muy);

  static QuadraticField2D constant(const Vec2& v);

  /// Parameter order: Qx00 Qx01 Qx11 Lx0 Lx1 mux  Qy00 Qy01 Qy11 Ly0 Ly1 muy.
  static QuadraticField2D from_parameters(const std::array<double, kParameterCount>& theta);
  std::array<double, kParameterCount> parameters() const;

  const Mat2& Qx() const { return Q_[0]; }
  const Mat2& Qy() const { return Q_[1]; }
  const Vec2& Lx() const { return L_[0]; }
  const Vec2& Ly() const { return L_[1]; }
  double mux() const { return mu_[0]; }
  double muy() const { return mu_[1]; }

  Vec2 value(const Vec2& p) const;
  FieldEval eval(const Vec2& p) const;

  /// Every parameter multiplied by `factor`.
  QuadraticField2D scaled(double factor) const;

 private:
  std::array<Mat2, 2> Q_{Mat2::Zero(), Mat2::Zero()};
  std::array<Vec2, 2> L_{Vec2::Zero(), Vec2::Zero()};
  std::array<double, 2> mu_{0.0, 0.0};
};

struct BoundingBox {
  Vec2 min = Vec2::Zero();
  Vec2 max = Vec2::Zero();

  bool contains(const Vec2& p) const;
  bool degenerate() const;
};

/// Wind and current models together: the 24-parameter environment vector.
struct EnvModel {
  static constexpr std::size_t kParameterCount = 2 * QuadraticField2D::kParameterCount;

  QuadraticField2D wind;
  QuadraticField2D current;
  std::string fitted_at;  ///< caller-supplied stamp, empty when unknown
  std::optional<BoundingBox> bounding_box;

  const QuadraticField2D& field(FieldKind kind) const { return kind == FieldKind::wind ? wind : current; }

  /// True when `p` lies outside the region the fields were fitted on.
  bool extrapolates(const Vec2& p) const;

  std::array<double, kParameterCount> parameters() const;
  EnvModel scaled(double factor) const;
};

struct FitReport {
  double condition_number = 1.0;  ///< of the centered, normalized regressor
  bool ill_conditioned = false;   ///< condition_number > kConditionWarning
  std::size_t sample_count = 0;
};

inline constexpr double kConditionWarning = 1e10;

/// Reads the `x_l,y_l,vx_wind,vy_wind,vx_current,vy_current` CSV table.
/// Throws ParseError on malformed rows and RejectionError on implausible magnitudes.
std::vector<EnvSample> parse_samples(std::istream& in);

/// Unweighted least-squares fit of one field. Needs at least six samples whose
/// positions do not all lie on a common conic.
QuadraticField2D fit_field(std::span<const EnvSample> samples, FieldKind which, FitReport* report = nullptr);

/// Fits both fields and records the bounding box of the fitting positions.
EnvModel fit_env_model(std::span<const EnvSample> samples, const std::string& fitted_at = {},
                       FitReport* wind_report = nullptr, FitReport* current_report = nullptr);

/// Residual statistics of a field against tabular samples. Residuals are the
/// Euclidean norm of the 2D velocity error.
class FieldErrorStats {
 public:
  explicit FieldErrorStats(std::vector<double> residuals);

  double max_abs_error() const { return max_abs_error_; }
  double rmse() const { return rmse_; }
  std::size_t sample_count() const { return sorted_.size(); }
  /// Share of samples whose residual is strictly below `threshold`.
  double fraction_below(double threshold) const;

 private:
  std::vector<double> sorted_;
  double max_abs_error_ = 0.0;
  double rmse_ = 0.0;
};

FieldErrorStats error_stats(const QuadraticField2D& field, std::span<const EnvSample> samples, FieldKind which);

}  // namespace ferryplan::env
