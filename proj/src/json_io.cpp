#include "ferryplan/json_io.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ferryplan/error.hpp"

namespace ferryplan::io {

namespace {

const Json& require(const Json& obj, const char* key) {
  if (!obj.is_object()) throw ParseError(std::string("expected an object containing '") + key + "'");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(std::string("missing field '") + key + "'");
  return *it;
}

double as_number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ParseError("field '" + where + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError("field '" + where + "' must be finite");
  return v;
}

std::vector<double> as_numbers(const Json& j, const std::string& where, std::size_t expected) {
  if (!j.is_array()) throw ParseError("field '" + where + "' must be an array");
  if (expected && j.size() != expected)
    throw ParseError("field '" + where + "' must have " + std::to_string(expected) + " entries");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

env::Mat2 mat2(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw ParseError("field '" + where + "' must be a 2x2 array");
  env::Mat2 m;
  for (int r = 0; r < 2; ++r) {
    const auto row = as_numbers(j[static_cast<std::size_t>(r)], where, 2);
    m(r, 0) = row[0];
    m(r, 1) = row[1];
  }
  return m;
}

env::Vec2 vec2(const Json& j, const std::string& where) {
  const auto v = as_numbers(j, where, 2);
  return {v[0], v[1]};
}

Json mat_json(const env::Mat2& m) { return Json::array({{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}); }

}  // namespace

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(what + " is not valid JSON at byte " + std::to_string(e.byte));
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

Json read_json_file(const std::filesystem::path& path) { return parse_json(read_text_file(path), path.string()); }

void write_json_file(const std::filesystem::path& path, const Json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

double get_number(const Json& obj, const char* key) { return as_number(require(obj, key), key); }

double get_number_or(const Json& obj, const char* key, double fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  return as_number(obj.at(key), key);
}

int get_int_or(const Json& obj, const char* key, int fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  const Json& j = obj.at(key);
  if (!j.is_number_integer()) throw ParseError(std::string("field '") + key + "' must be an integer");
  return j.get<int>();
}

// ---------------------------------------------------------------------------

Json to_json(const env::QuadraticField2D& f) {
  return {{"Qx", mat_json(f.Qx())}, {"Qy", mat_json(f.Qy())}, {"Lx", {f.Lx()(0), f.Lx()(1)}},
          {"Ly", {f.Ly()(0), f.Ly()(1)}}, {"mux", f.mux()},       {"muy", f.muy()}};
}

env::QuadraticField2D field_from_json(const Json& j) {
  const env::Mat2 Qx = mat2(require(j, "Qx"), "Qx");
  const env::Mat2 Qy = mat2(require(j, "Qy"), "Qy");
  if (std::abs(Qx(0, 1) - Qx(1, 0)) > 1e-12 * (1.0 + Qx.cwiseAbs().maxCoeff()))
    throw ParseError("field 'Qx' must be symmetric");
  if (std::abs(Qy(0, 1) - Qy(1, 0)) > 1e-12 * (1.0 + Qy.cwiseAbs().maxCoeff()))
    throw ParseError("field 'Qy' must be symmetric");
  return {Qx, Qy, vec2(require(j, "Lx"), "Lx"), vec2(require(j, "Ly"), "Ly"), get_number(j, "mux"),
          get_number(j, "muy")};
}

Json to_json(const env::EnvModel& model) {
  Json j{{"wind", to_json(model.wind)}, {"current", to_json(model.current)}};
  if (!model.fitted_at.empty()) j["fitted_at"] = model.fitted_at;
  if (model.bounding_box)
    j["bounding_box"] = {{"min", {model.bounding_box->min.x(), model.bounding_box->min.y()}},
                         {"max", {model.bounding_box->max.x(), model.bounding_box->max.y()}}};
  return j;
}

env::EnvModel env_model_from_json(const Json& j) {
  env::EnvModel m;
  m.wind = field_from_json(require(j, "wind"));
  m.current = field_from_json(require(j, "current"));
  if (j.contains("fitted_at")) {
    if (!j["fitted_at"].is_string()) throw ParseError("field 'fitted_at' must be a string");
    m.fitted_at = j["fitted_at"].get<std::string>();
  }
  if (j.contains("bounding_box")) {
    const Json& b = j["bounding_box"];
    m.bounding_box = env::BoundingBox{vec2(require(b, "min"), "bounding_box.min"), vec2(require(b, "max"), "bounding_box.max")};
  }
  return m;
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::string, double model::FerryParams::*> param_fields() {
  using P = model::FerryParams;
  return {{"m", &P::m},         {"X_u", &P::X_u},     {"X_uu", &P::X_uu},   {"Y_v", &P::Y_v},
          {"Y_vv", &P::Y_vv},   {"A_Fw", &P::A_Fw},   {"A_Lw", &P::A_Lw},   {"c_x", &P::c_x},
          {"c_y", &P::c_y},     {"rho", &P::rho},     {"F_AT_max", &P::F_AT_max},
          {"c_p_check", &P::c_p_check}, {"modulus_epsilon", &P::modulus_epsilon}};
}

// Table I order for output.
constexpr const char* kParamOrder[] = {"m",   "X_u", "X_uu", "Y_v", "Y_vv",     "A_Fw",     "A_Lw",
                                       "c_x", "c_y", "rho",  "F_AT_max", "c_p_check"};

}  // namespace

Json to_json(const model::FerryParams& params) {
  const auto fields = param_fields();
  Json j = Json::object();
  for (const char* key : kParamOrder) j[key] = params.*(fields.at(key));
  if (params.modulus_epsilon != 0.0) j["modulus_epsilon"] = params.modulus_epsilon;
  return j;
}

model::FerryParams params_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("params must be an object");
  const auto fields = param_fields();
  model::FerryParams p;
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ParseError("unknown parameter '" + key + "'");
    p.*(it->second) = as_number(value, key);
  }
  p.validate();
  return p;
}

corridor::Corridor corridor_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("corridor must be an object");
  if (j.contains("vertices")) {
    const Json& v = j["vertices"];
    if (!v.is_array()) throw ParseError("field 'vertices' must be an array");
    std::vector<env::Vec2> pts;
    for (std::size_t i = 0; i < v.size(); ++i) pts.push_back(vec2(v[i], "vertices[" + std::to_string(i) + "]"));
    return corridor::corridor_from_polygon(pts);
  }
  if (j.contains("halfplanes")) {
    const Json& h = j["halfplanes"];
    if (!h.is_array()) throw ParseError("field 'halfplanes' must be an array");
    std::vector<corridor::HalfPlane> planes;
    for (std::size_t i = 0; i < h.size(); ++i) {
      const auto row = as_numbers(h[i], "halfplanes[" + std::to_string(i) + "]", 3);
      planes.push_back({row[0], row[1], row[2]});
    }
    return corridor::Corridor(std::move(planes));
  }
  throw ParseError("corridor needs 'vertices' or 'halfplanes'");
}

Json to_json(const corridor::Corridor& c) {
  Json planes = Json::array();
  for (const auto& h : c.halfplanes()) planes.push_back({h.s, h.q, h.c});
  Json verts = Json::array();
  for (const auto& v : c.vertices()) verts.push_back({v.x(), v.y()});
  return {{"halfplanes", planes}, {"vertices", verts}};
}

Json to_json(const model::State& s) { return {s.x_l, s.y_l, s.psi, s.u_bf, s.v_bf, s.r_bf}; }

model::State state_from_json(const Json& j) {
  const auto v = as_numbers(j, "state", 6);
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

Json to_json(const model::ControlInput& u) { return {u.X_a, u.Y_a, u.rdot_bf}; }

model::ControlInput input_from_json(const Json& j) {
  const auto v = as_numbers(j, "input", 3);
  return {v[0], v[1], v[2]};
}

Eigen::Matrix3d weight_from_json(const Json& j) {
  if (!j.is_array()) throw ParseError("weight must be an array");
  if (j.size() == 3 && j[0].is_number()) {
    const auto d = as_numbers(j, "weight", 3);
    return Eigen::Vector3d(d[0], d[1], d[2]).asDiagonal();
  }
  if (j.size() != 3) throw ParseError("weight must be 3 numbers or a 3x3 array");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    const auto row = as_numbers(j[static_cast<std::size_t>(r)], "weight", 3);
    for (int c = 0; c < 3; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  if (!m.isApprox(m.transpose(), 1e-12)) throw ParseError("weight matrix must be symmetric");
  return m;
}

Json to_json(const Eigen::Matrix3d& m) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r) out.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return out;
}

// ---------------------------------------------------------------------------

Json to_json(const ocp::TrajectoryPlan& plan) {
  Json states = Json::array();
  for (const auto& s : plan.states) states.push_back(to_json(s));
  Json inputs = Json::array();
  for (const auto& u : plan.inputs) inputs.push_back(to_json(u));
  const auto& d = plan.diagnostics;
  return {{"schema_version", kSchemaVersion},
          {"t_now", plan.t_now},
          {"times", plan.times},
          {"states", states},
          {"inputs", inputs},
          {"step_energy", plan.step_energy},
          {"total_energy", plan.total_energy},
          {"objective_value", plan.objective_value},
          {"diagnostics",
           {{"status", d.status},
            {"iterations", d.iterations},
            {"kkt_residual", d.kkt_residual},
            {"constraint_violation", d.constraint_violation},
            {"message", d.message},
            {"extrapolated", d.extrapolated}}}};
}

ocp::TrajectoryPlan plan_from_json(const Json& j) {
  ocp::TrajectoryPlan p;
  p.t_now = get_number_or(j, "t_now", 0.0);
  p.times = as_numbers(require(j, "times"), "times", 0);
  const Json& states = require(j, "states");
  const Json& inputs = require(j, "inputs");
  if (!states.is_array() || !inputs.is_array()) throw ParseError("states and inputs must be arrays");
  for (const auto& s : states) p.states.push_back(state_from_json(s));
  for (const auto& u : inputs) p.inputs.push_back(input_from_json(u));
  p.step_energy = as_numbers(require(j, "step_energy"), "step_energy", 0);
  p.total_energy = get_number(j, "total_energy");
  p.objective_value = get_number_or(j, "objective_value", p.total_energy);
  if (p.states.size() != p.times.size() || p.inputs.size() + 1 != p.states.size() ||
      p.step_energy.size() != p.inputs.size())
    throw ParseError("plan arrays have inconsistent lengths");
  if (j.contains("diagnostics")) {
    const Json& d = j["diagnostics"];
    if (d.contains("status")) p.diagnostics.status = d["status"].get<std::string>();
    p.diagnostics.iterations = get_int_or(d, "iterations", 0);
    p.diagnostics.kkt_residual = get_number_or(d, "kkt_residual", 0.0);
    p.diagnostics.constraint_violation = get_number_or(d, "constraint_violation", 0.0);
    if (d.contains("message")) p.diagnostics.message = d["message"].get<std::string>();
    if (d.contains("extrapolated")) p.diagnostics.extrapolated = d["extrapolated"].get<bool>();
  }
  return p;
}

}  // namespace ferryplan::io
