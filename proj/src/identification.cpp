#include "ferryplan/identification.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include "ferryplan/error.hpp"

namespace ferryplan::ident {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_cell(const std::string& raw, const char* column, std::size_t line) {
  const std::string text = trim(raw);
  if (text.empty()) return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ParseError(std::string("cannot parse '") + text + "' in column " + column, line);
  }
  if (used != text.size() || !std::isfinite(v)) throw ParseError(std::string("invalid value in column ") + column, line);
  if (v < 0.0) throw RejectionError(column, "must be non-negative", line);
  return v;
}

double sse(std::span<const SpeedThrust> s, double a, double b) {
  double out = 0.0;
  for (const auto& p : s) {
    const double r = a * p.speed + b * p.speed * p.speed - p.thrust;
    out += r * r;
  }
  return out;
}

// Minimizer of sum (c * x_i - y_i)^2 with c >= 0.
double nonneg_scalar_fit(std::span<const SpeedThrust> s, bool quadratic) {
  double num = 0.0, den = 0.0;
  for (const auto& p : s) {
    const double x = quadratic ? p.speed * p.speed : p.speed;
    num += x * p.thrust;
    den += x * x;
  }
  return den > 0.0 ? std::max(0.0, num / den) : 0.0;
}

}  // namespace

std::vector<SteadyStateSample> parse_telemetry(std::istream& in) {
  static constexpr const char* kColumns[3] = {"surge_speed", "thrust_total", "power_total"};
  std::vector<SteadyStateSample> out;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (!line.empty() && trim(line).back() == ',') cells.emplace_back();
    if (first) {
      first = false;
      if (!cells.empty() && trim(cells[0]) == kColumns[0]) {
        if (cells.size() != 3 || trim(cells[1]) != kColumns[1] || trim(cells[2]) != kColumns[2])
          throw ParseError("header must be surge_speed,thrust_total,power_total", line_no);
        continue;
      }
    }
    if (cells.size() != 3) throw ParseError("expected 3 columns, got " + std::to_string(cells.size()), line_no);
    out.push_back({parse_cell(cells[0], kColumns[0], line_no), parse_cell(cells[1], kColumns[1], line_no),
                   parse_cell(cells[2], kColumns[2], line_no)});
  }
  return out;
}

DampingFit fit_damping(std::span<const SpeedThrust> samples) {
  std::set<double> distinct;
  for (const auto& s : samples) {
    if (!std::isfinite(s.speed) || !std::isfinite(s.thrust) || s.speed < 0.0)
      throw RejectionError("surge_speed", "must be finite and non-negative");
    if (s.speed > 0.0) distinct.insert(s.speed);
  }
  if (distinct.size() < 2)
    throw RankError("damping fit needs at least 2 distinct nonzero speeds", static_cast<long>(distinct.size()));

  // Normal equations of the 2-parameter model; the basis (v, v^2) is well scaled
  // for speeds of a few m/s.
  Eigen::Matrix2d N = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (const auto& s : samples) {
    const Eigen::Vector2d phi(s.speed, s.speed * s.speed);
    N += phi * phi.transpose();
    rhs += phi * s.thrust;
  }
  const Eigen::Vector2d theta = N.ldlt().solve(rhs);

  DampingFit fit;
  if (theta(0) >= 0.0 && theta(1) >= 0.0) {
    fit.X_u = theta(0);
    fit.X_uu = theta(1);
  } else {
    // Active-set re-solve: try each single-bound face and the origin.
    fit.clamped = true;
    const double a = nonneg_scalar_fit(samples, false);
    const double b = nonneg_scalar_fit(samples, true);
    const double sse_a = sse(samples, a, 0.0);
    const double sse_b = sse(samples, 0.0, b);
    if (sse_a <= sse_b) {
      fit.X_u = a;
    } else {
      fit.X_uu = b;
    }
  }
  fit.residual_sum_squares = sse(samples, fit.X_u, fit.X_uu);
  return fit;
}

PowerFit fit_power_coeff(std::span<const ThrustPower> samples) {
  double num = 0.0, den = 0.0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.thrust) || !std::isfinite(s.power) || s.thrust < 0.0 || s.power < 0.0)
      throw RejectionError("thrust_total", "thrust and power must be finite and non-negative");
    const double g = std::pow(0.25 * s.thrust * s.thrust, 0.75);
    num += s.power * g;
    den += g * g;
  }
  if (!(den > 0.0)) throw InsufficientDataError("power fit needs at least one sample with positive thrust");
  PowerFit fit;
  fit.c_p_check = num / (2.0 * den);
  fit.sample_count = samples.size();
  for (const auto& s : samples) {
    const double r = 2.0 * fit.c_p_check * std::pow(0.25 * s.thrust * s.thrust, 0.75) - s.power;
    fit.residual_sum_squares += r * r;
    fit.max_abs_residual = std::max(fit.max_abs_residual, std::abs(r));
  }
  fit.rms_residual = std::sqrt(fit.residual_sum_squares / static_cast<double>(samples.size()));
  return fit;
}

std::vector<std::pair<double, double>> predicted_power_curve(const model::FerryParams& params,
                                                             std::span<const double> speeds) {
  std::vector<std::pair<double, double>> out;
  out.reserve(speeds.size());
  for (double v : speeds) {
    if (!(v >= 0.0)) throw RejectionError("speed", "must be non-negative");
    const double thrust = model::steady_surge_thrust(v, params);
    out.emplace_back(v, model::power(model::ControlInput{thrust, 0.0, 0.0}, params));
  }
  return out;
}

IdentificationResult identify(std::span<const SteadyStateSample> samples, const model::FerryParams& base) {
  std::vector<SpeedThrust> st;
  std::vector<ThrustPower> tp;
  for (const auto& s : samples) {
    if (s.surge_speed && s.thrust_total) st.push_back({*s.surge_speed, *s.thrust_total});
    if (s.thrust_total && s.power_total) tp.push_back({*s.thrust_total, *s.power_total});
  }
  IdentificationResult out;
  out.params = base;
  out.damping = fit_damping(st);
  out.power = fit_power_coeff(tp);
  out.params.X_u = out.damping.X_u;
  out.params.X_uu = out.damping.X_uu;
  out.params.c_p_check = out.power.c_p_check;
  return out;
}

}  // namespace ferryplan::ident
