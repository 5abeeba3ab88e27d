#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "ferryplan/corridor.hpp"
#include "ferryplan/envfield.hpp"
#include "ferryplan/ferry_model.hpp"
#include "ferryplan/ocp.hpp"

namespace ferryplan::io {

using Json = nlohmann::json;

/// Written into every output document.
inline constexpr int kSchemaVersion = 1;

/// Parses text as JSON; throws ParseError with the parser's position.
Json parse_json(const std::string& text, const std::string& what = "JSON");
Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline; throws Error when the file cannot be written.
void write_json_file(const std::filesystem::path& path, const Json& doc);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Field accessors that report the offending key in their ParseError.
double get_number(const Json& obj, const char* key);
double get_number_or(const Json& obj, const char* key, double fallback);
int get_int_or(const Json& obj, const char* key, int fallback);

Json to_json(const env::QuadraticField2D& field);
env::QuadraticField2D field_from_json(const Json& j);

/// `{wind: {...}, current: {...}}` with optional fitted_at and bounding_box.
Json to_json(const env::EnvModel& model);
env::EnvModel env_model_from_json(const Json& j);

/// Table I names; missing keys keep their defaults, unknown keys are rejected.
Json to_json(const model::FerryParams& params);
model::FerryParams params_from_json(const Json& j);

/// `{"vertices": [[x, y], ...]}` or `{"halfplanes": [[s, q, c], ...]}`.
corridor::Corridor corridor_from_json(const Json& j);
Json to_json(const corridor::Corridor& corridor);

/// Six numbers in state-vector order.
Json to_json(const model::State& state);
model::State state_from_json(const Json& j);

Json to_json(const model::ControlInput& input);
model::ControlInput input_from_json(const Json& j);

/// 3x3 nested array, or three numbers read as a diagonal.
Eigen::Matrix3d weight_from_json(const Json& j);
Json to_json(const Eigen::Matrix3d& m);

Json to_json(const ocp::TrajectoryPlan& plan);
ocp::TrajectoryPlan plan_from_json(const Json& j);

}  // namespace ferryplan::io
