#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ferryplan/ferry_model.hpp"

namespace ferryplan::ident {

/// Pre-extracted steady-state telemetry. Any field may be absent, which lets
/// the damping and power stages consume different subsets of one table.
struct SteadyStateSample {
  std::optional<double> surge_speed;   ///< m/s
  std::optional<double> thrust_total;  ///< N, equals X_a at steady state
  std::optional<double> power_total;   ///< W
};

/// `surge_speed,thrust_total,power_total`; empty cell means absent.
std::vector<SteadyStateSample> parse_telemetry(std::istream& in);

struct SpeedThrust {
  double speed = 0.0;
  double thrust = 0.0;
};

struct ThrustPower {
  double thrust = 0.0;
  double power = 0.0;
};

struct DampingFit {
  double X_u = 0.0;
  double X_uu = 0.0;
  double residual_sum_squares = 0.0;
  bool clamped = false;  ///< a non-negativity bound is active
};

/// Non-negative least squares of thrust = X_u v + X_uu v^2.
DampingFit fit_damping(std::span<const SpeedThrust> samples);

struct PowerFit {
  double c_p_check = 0.0;
  double residual_sum_squares = 0.0;
  double rms_residual = 0.0;
  double max_abs_residual = 0.0;
  std::size_t sample_count = 0;
};

/// Closed-form least squares of P = 2 c (T^2/4)^(3/4).
PowerFit fit_power_coeff(std::span<const ThrustPower> samples);

/// Steady-state (speed, power) pairs in still water.
std::vector<std::pair<double, double>> predicted_power_curve(const model::FerryParams& params,
                                                             std::span<const double> speeds);

/// Runs both stages on a telemetry table, starting from `base` for everything
/// the telemetry cannot identify.
struct IdentificationResult {
  model::FerryParams params;
  DampingFit damping;
  PowerFit power;
};

IdentificationResult identify(std::span<const SteadyStateSample> samples, const model::FerryParams& base = {});

}  // namespace ferryplan::ident
