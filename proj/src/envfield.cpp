#include "ferryplan/envfield.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

#include "ferryplan/error.hpp"

namespace ferryplan::env {

const char* to_string(FieldKind kind) { return kind == FieldKind::wind ? "wind" : "current"; }

namespace {

Mat2 symmetric_part(const Mat2& m) { return 0.5 * (m + m.transpose()); }

Vec2 sample_value(const EnvSample& s, FieldKind which) { return which == FieldKind::wind ? s.wind() : s.current(); }

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_number(const std::string& cell, const char* column, std::size_t line) {
  const std::string text = trim(cell);
  if (text.empty()) throw ParseError(std::string("empty value in column ") + column, line);
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ParseError(std::string("cannot parse '") + text + "' in column " + column, line);
  }
  if (used != text.size()) throw ParseError(std::string("trailing characters in column ") + column, line);
  if (!std::isfinite(value)) throw ParseError(std::string("non-finite value in column ") + column, line);
  return value;
}

}  // namespace

QuadraticField2D::QuadraticField2D(const Mat2& Qx, const Mat2& Qy, const Vec2& Lx, const Vec2& Ly, double mux,
                                   double muy)
    : Q_{symmetric_part(Qx), symmetric_part(Qy)}, L_{Lx, Ly}, mu_{mux, muy} {}

QuadraticField2D QuadraticField2D::constant(const Vec2& v) {
  return QuadraticField2D(Mat2::Zero(), Mat2::Zero(), Vec2::Zero(), Vec2::Zero(), v.x(), v.y());
}

QuadraticField2D QuadraticField2D::from_parameters(const std::array<double, kParameterCount>& t) {
  Mat2 Qx;
  Qx << t[0], t[1], t[1], t[2];
  Mat2 Qy;
  Qy << t[6], t[7], t[7], t[8];
  return QuadraticField2D(Qx, Qy, Vec2(t[3], t[4]), Vec2(t[9], t[10]), t[5], t[11]);
}

std::array<double, QuadraticField2D::kParameterCount> QuadraticField2D::parameters() const {
  std::array<double, kParameterCount> t{};
  for (int c = 0; c < 2; ++c) {
    const std::size_t o = 6 * c;
    t[o + 0] = Q_[c](0, 0);
    t[o + 1] = Q_[c](0, 1);
    t[o + 2] = Q_[c](1, 1);
    t[o + 3] = L_[c](0);
    t[o + 4] = L_[c](1);
    t[o + 5] = mu_[c];
  }
  return t;
}

Vec2 QuadraticField2D::value(const Vec2& p) const {
  Vec2 v;
  for (int c = 0; c < 2; ++c) v(c) = 0.5 * p.dot(Q_[c] * p) + L_[c].dot(p) + mu_[c];
  return v;
}

FieldEval QuadraticField2D::eval(const Vec2& p) const {
  FieldEval out;
  for (int c = 0; c < 2; ++c) {
    const Vec2 Qp = Q_[c] * p;
    out.value(c) = 0.5 * p.dot(Qp) + L_[c].dot(p) + mu_[c];
    out.jacobian.row(c) = (Qp + L_[c]).transpose();
    out.hessians[c] = Q_[c];
  }
  return out;
}

QuadraticField2D QuadraticField2D::scaled(double factor) const {
  return QuadraticField2D(factor * Q_[0], factor * Q_[1], factor * L_[0], factor * L_[1], factor * mu_[0],
                          factor * mu_[1]);
}

bool BoundingBox::contains(const Vec2& p) const {
  return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
}

bool BoundingBox::degenerate() const { return !(max.x() > min.x() && max.y() > min.y()); }

bool EnvModel::extrapolates(const Vec2& p) const { return bounding_box && !bounding_box->contains(p); }

std::array<double, EnvModel::kParameterCount> EnvModel::parameters() const {
  std::array<double, kParameterCount> out{};
  const auto w = wind.parameters();
  const auto c = current.parameters();
  std::copy(w.begin(), w.end(), out.begin());
  std::copy(c.begin(), c.end(), out.begin() + QuadraticField2D::kParameterCount);
  return out;
}

EnvModel EnvModel::scaled(double factor) const {
  EnvModel out = *this;
  out.wind = wind.scaled(factor);
  out.current = current.scaled(factor);
  return out;
}

std::vector<EnvSample> parse_samples(std::istream& in) {
  static constexpr const char* kColumns[6] = {"x_l", "y_l", "vx_wind", "vy_wind", "vx_current", "vy_current"};
  std::vector<EnvSample> out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();

    if (!header_seen) {
      header_seen = true;
      // The header is optional; a leading row that starts with a letter must be it.
      const std::string first = trim(cells.empty() ? std::string() : cells.front());
      if (!first.empty() && std::isalpha(static_cast<unsigned char>(first.front())) && first != "NaN" &&
          first != "nan" && first != "inf") {
        if (cells.size() != 6) throw ParseError("header must have 6 columns", line_no);
        for (std::size_t i = 0; i < 6; ++i) {
          if (trim(cells[i]) != kColumns[i])
            throw ParseError("unexpected header column '" + trim(cells[i]) + "', expected " + kColumns[i], line_no);
        }
        continue;
      }
    }
    if (cells.size() != 6) throw ParseError("expected 6 columns, got " + std::to_string(cells.size()), line_no);

    EnvSample s;
    s.x_l = parse_number(cells[0], kColumns[0], line_no);
    s.y_l = parse_number(cells[1], kColumns[1], line_no);
    s.vx_wind = parse_number(cells[2], kColumns[2], line_no);
    s.vy_wind = parse_number(cells[3], kColumns[3], line_no);
    s.vx_current = parse_number(cells[4], kColumns[4], line_no);
    s.vy_current = parse_number(cells[5], kColumns[5], line_no);
    if (s.wind().norm() > kMaxWindSpeed)
      throw RejectionError("wind", "speed " + std::to_string(s.wind().norm()) + " m/s exceeds sanity bound", line_no);
    if (s.current().norm() > kMaxCurrentSpeed)
      throw RejectionError("current", "speed " + std::to_string(s.current().norm()) + " m/s exceeds sanity bound",
                           line_no);
    out.push_back(s);
  }
  return out;
}

QuadraticField2D fit_field(std::span<const EnvSample> samples, FieldKind which, FitReport* report) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (n < 6)
    throw InsufficientDataError("fitting the " + std::string(to_string(which)) + " field needs at least 6 samples, got " +
                                std::to_string(n));

  // Center and normalize positions; the un-centering below is exact.
  Vec2 center = Vec2::Zero();
  for (const auto& s : samples) center += s.position();
  center /= static_cast<double>(n);
  Vec2 scale = Vec2::Zero();
  for (const auto& s : samples) scale = scale.cwiseMax((s.position() - center).cwiseAbs());
  for (int i = 0; i < 2; ++i)
    if (scale(i) <= 0.0) scale(i) = 1.0;

  // Monomials of the normalized position: 1, x, y, x^2, xy, y^2.
  Eigen::MatrixXd A(n, 6);
  Eigen::MatrixXd B(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    const Vec2 q = (s.position() - center).cwiseQuotient(scale);
    A.row(i) << 1.0, q.x(), q.y(), q.x() * q.x(), q.x() * q.y(), q.y() * q.y();
    B.row(i) = sample_value(s, which).transpose();
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < 6) throw RankError("regressor for the " + std::string(to_string(which)) + " field is rank deficient", qr.rank());

  if (report) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    report->condition_number = sv(0) / sv(sv.size() - 1);
    report->ill_conditioned = report->condition_number > kConditionWarning;
    report->sample_count = static_cast<std::size_t>(n);
  }

  const Eigen::MatrixXd coeff = qr.solve(B);

  std::array<Mat2, 2> Q;
  std::array<Vec2, 2> L;
  std::array<double, 2> mu{};
  const Eigen::DiagonalMatrix<double, 2> inv_scale(1.0 / scale.x(), 1.0 / scale.y());
  for (int c = 0; c < 2; ++c) {
    const auto a = coeff.col(c);
    // Model in normalized coordinates q, then in d = p - center via q = S^-1 d.
    Mat2 Qq;
    Qq << 2.0 * a(3), a(4), a(4), 2.0 * a(5);
    const Vec2 Lq(a(1), a(2));
    const Mat2 Qd = inv_scale * Qq * inv_scale;
    const Vec2 Ld = inv_scale * Lq;
    // Shift to absolute positions: d = p - center.
    Q[c] = Qd;
    L[c] = Ld - Qd * center;
    mu[c] = a(0) - Ld.dot(center) + 0.5 * center.dot(Qd * center);
  }
  return QuadraticField2D(Q[0], Q[1], L[0], L[1], mu[0], mu[1]);
}

EnvModel fit_env_model(std::span<const EnvSample> samples, const std::string& fitted_at, FitReport* wind_report,
                       FitReport* current_report) {
  EnvModel model;
  model.wind = fit_field(samples, FieldKind::wind, wind_report);
  model.current = fit_field(samples, FieldKind::current, current_report);
  model.fitted_at = fitted_at;
  BoundingBox box{samples.front().position(), samples.front().position()};
  for (const auto& s : samples) {
    box.min = box.min.cwiseMin(s.position());
    box.max = box.max.cwiseMax(s.position());
  }
  model.bounding_box = box;
  return model;
}

FieldErrorStats::FieldErrorStats(std::vector<double> residuals) : sorted_(std::move(residuals)) {
  std::sort(sorted_.begin(), sorted_.end());
  if (sorted_.empty()) return;
  max_abs_error_ = sorted_.back();
  double sq = 0.0;
  for (double r : sorted_) sq += r * r;
  rmse_ = std::sqrt(sq / static_cast<double>(sorted_.size()));
}

double FieldErrorStats::fraction_below(double threshold) const {
  if (sorted_.empty()) return 0.0;
  const auto below = std::lower_bound(sorted_.begin(), sorted_.end(), threshold) - sorted_.begin();
  return static_cast<double>(below) / static_cast<double>(sorted_.size());
}

FieldErrorStats error_stats(const QuadraticField2D& field, std::span<const EnvSample> samples, FieldKind which) {
  if (samples.empty()) throw InsufficientDataError("error statistics need at least one sample");
  std::vector<double> residuals;
  residuals.reserve(samples.size());
  for (const auto& s : samples) residuals.push_back((field.value(s.position()) - sample_value(s, which)).norm());
  return FieldErrorStats(std::move(residuals));
}

}  // namespace ferryplan::env
