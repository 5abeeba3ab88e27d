#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ferryplan {

/// Base class for every domain error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed tabular or JSON input. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Input value outside its documented physical range.
class RejectionError : public Error {
 public:
  RejectionError(const std::string& field, const std::string& what, std::size_t line = 0)
      : Error((line ? "line " + std::to_string(line) + ": " : std::string()) + field + ": " + what),
        field_(field),
        line_(line) {}
  const std::string& field() const { return field_; }
  std::size_t line() const { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Least-squares regressor without full column rank.
class RankError : public Error {
 public:
  RankError(const std::string& what, long rank) : Error(what + " (rank " + std::to_string(rank) + ")"), rank_(rank) {}
  long rank() const { return rank_; }

 private:
  long rank_;
};

class IntegrationError : public Error {
 public:
  using Error::Error;
};

/// Force demand above the actuator limit. `scale` brings the demand back onto the limit.
class SaturationError : public Error {
 public:
  SaturationError(const std::string& what, double scale) : Error(what), scale_(scale) {}
  double feasible_scale() const { return scale_; }

 private:
  double scale_;
};

class GeometryError : public Error {
 public:
  GeometryError(const std::string& what, long vertex = -1) : Error(what), vertex_(vertex) {}
  long vertex() const { return vertex_; }

 private:
  long vertex_;
};

class BuildError : public Error {
 public:
  using Error::Error;
};

class HorizonExpiredError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace ferryplan
