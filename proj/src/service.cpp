#include "ferryplan/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace ferryplan::service {

namespace {

std::string now_iso() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Reply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

// Maps domain errors onto HTTP statuses.
template <class F>
Reply guarded(F&& f) {
  try {
    return f();
  } catch (const planner::PlanFailedError& e) {
    Reply r = error_reply(422, e.what());
    const auto& d = e.diagnostics();
    r.body["diagnostics"] = {{"status", d.status},
                             {"iterations", d.iterations},
                             {"kkt_residual", d.kkt_residual},
                             {"constraint_violation", d.constraint_violation},
                             {"message", d.message}};
    return r;
  } catch (const planner::SessionCompleteError& e) {
    return error_reply(410, std::string("session complete: ") + e.what());
  } catch (const HorizonExpiredError& e) {
    return error_reply(410, std::string("session complete: ") + e.what());
  } catch (const ParseError& e) {
    return error_reply(400, e.what());
  } catch (const RejectionError& e) {
    Reply r = error_reply(400, e.what());
    r.body["field"] = e.field();
    return r;
  } catch (const GeometryError& e) {
    return error_reply(400, e.what());
  } catch (const io::Json::exception& e) {
    return error_reply(400, std::string("malformed request: ") + e.what());
  } catch (const Error& e) {
    return error_reply(422, e.what());
  }
}

bool valid_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(id, re);
}

io::Json iteration_json(const nlp::IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"objective", r.objective},
          {"constraint_violation", r.constraint_violation},
          {"kkt_residual", r.kkt_residual},
          {"step_size", r.step_size},
          {"barrier", r.barrier}};
}

}  // namespace

// ---------------------------------------------------------------------------

std::optional<Event> EventHub::Subscription::next(int timeout_ms) {
  std::unique_lock lock(m_);
  cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), [&] { return closed_ || !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  Event e = std::move(queue_.front());
  queue_.pop_front();
  return e;
}

bool EventHub::Subscription::closed() const {
  std::lock_guard lock(m_);
  return closed_;
}

std::shared_ptr<EventHub::Subscription> EventHub::subscribe(const std::string& session) {
  auto sub = std::make_shared<Subscription>();
  std::lock_guard lock(m_);
  if (closed_)
    sub->closed_ = true;
  else
    subs_[session].push_back(sub);
  return sub;
}

void EventHub::unsubscribe(const std::string& session, const std::shared_ptr<Subscription>& sub) {
  std::lock_guard lock(m_);
  auto it = subs_.find(session);
  if (it == subs_.end()) return;
  std::erase(it->second, sub);
  if (it->second.empty()) subs_.erase(it);
}

void EventHub::publish(const std::string& session, const std::string& type, const io::Json& data) {
  std::lock_guard lock(m_);
  const auto it = subs_.find(session);
  const std::uint64_t id = next_id_++;
  if (it == subs_.end()) return;
  const std::string payload = data.dump();
  for (const auto& sub : it->second) {
    {
      std::lock_guard sl(sub->m_);
      sub->queue_.push_back({id, type, payload});
    }
    sub->cv_.notify_all();
  }
}

void EventHub::close() {
  std::lock_guard lock(m_);
  closed_ = true;
  for (auto& [_, list] : subs_)
    for (const auto& sub : list) {
      {
        std::lock_guard sl(sub->m_);
        sub->closed_ = true;
      }
      sub->cv_.notify_all();
    }
  subs_.clear();
}

// ---------------------------------------------------------------------------

PlannerService::PlannerService(ServiceConfig config) : config_(std::move(config)) {
  if (!config_.data_dir.empty()) {
    std::filesystem::create_directories(config_.data_dir / "scenarios");
    std::filesystem::create_directories(config_.data_dir / "sessions");
    load();
  }
}

PlannerService::~PlannerService() { events_.close(); }

void PlannerService::load() {
  const auto sorted_files = [](const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
  };
  for (const auto& f : sorted_files(config_.data_dir / "scenarios")) {
    planner::Scenario s = planner::load_scenario(f);
    if (s.id.empty()) s.id = f.stem().string();
    scenarios_.emplace(s.id, std::move(s));
    ++scenario_counter_;
  }
  for (const auto& f : sorted_files(config_.data_dir / "sessions")) {
    auto slot = std::make_shared<Slot>();
    slot->session = planner::session_from_json(io::read_json_file(f));
    if (slot->session.id.empty()) slot->session.id = f.stem().string();
    sessions_.emplace(slot->session.id, slot);
    ++session_counter_;
  }
}

void PlannerService::save_scenario(const planner::Scenario& s) const {
  if (config_.data_dir.empty()) return;
  io::write_json_file(config_.data_dir / "scenarios" / (s.id + ".json"), planner::to_json(s));
}

void PlannerService::save_session(const planner::LiveSession& s) const {
  if (config_.data_dir.empty()) return;
  io::write_json_file(config_.data_dir / "sessions" / (s.id + ".json"), planner::to_json(s));
}

std::shared_ptr<PlannerService::Slot> PlannerService::slot(const std::string& id) const {
  std::lock_guard lock(m_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::optional<planner::Scenario> PlannerService::find_scenario(const std::string& id) const {
  std::lock_guard lock(m_);
  const auto it = scenarios_.find(id);
  if (it == scenarios_.end()) return std::nullopt;
  return it->second;
}

planner::PlannerConfig PlannerService::planner_config(const std::string& session) {
  planner::PlannerConfig cfg = config_.planner;
  cfg.solver.on_iteration = [this, session](const nlp::IterationRecord& r) {
    events_.publish(session, "solver-iteration", iteration_json(r));
  };
  return cfg;
}

Reply PlannerService::health() const {
  return {200, {{"status", "ok"}, {"version", planner::kVersion}, {"schema_version", io::kSchemaVersion}}};
}

Reply PlannerService::create_scenario(const std::string& body) {
  return guarded([&]() -> Reply {
    const io::Json j = io::parse_json(body, "request body");
    if (j.is_object() && j.contains("env_csv"))
      return error_reply(400, "field 'env_csv' is not accepted here; upload the table to /scenarios/{id}/fit-env");
    if (j.is_object() && j.contains("params") && j["params"].is_string())
      return error_reply(400, "field 'params' must be an inline object here");
    planner::Scenario s = planner::scenario_from_json(j);
    std::lock_guard lock(m_);
    if (s.id.empty()) {
      do s.id = "scn-" + std::to_string(++scenario_counter_);
      while (scenarios_.count(s.id));
    } else if (!valid_id(s.id)) {
      return error_reply(400, "field 'id' may only contain letters, digits, '-' and '_'");
    } else if (scenarios_.count(s.id)) {
      return error_reply(409, "scenario '" + s.id + "' already exists");
    }
    s.created = s.modified = now_iso();
    save_scenario(s);
    const io::Json out = planner::to_json(s);
    scenarios_.emplace(s.id, std::move(s));
    return {201, out};
  });
}

Reply PlannerService::get_scenario(const std::string& id) const {
  const auto s = find_scenario(id);
  if (!s) return error_reply(404, "unknown scenario '" + id + "'");
  return {200, planner::to_json(*s)};
}

Reply PlannerService::fit_env(const std::string& id, const std::string& csv) {
  return guarded([&]() -> Reply {
    if (!find_scenario(id)) return error_reply(404, "unknown scenario '" + id + "'");
    std::istringstream in(csv);
    const auto samples = env::parse_samples(in);
    env::FitReport wind_report, current_report;
    const env::EnvModel model = env::fit_env_model(samples, now_iso(), &wind_report, &current_report);
    const auto stats = [&](env::FieldKind kind, const env::FitReport& rep) {
      const env::FieldErrorStats st = env::error_stats(model.field(kind), samples, kind);
      return io::Json{{"rmse", st.rmse()},
                      {"max_abs_error", st.max_abs_error()},
                      {"condition_number", rep.condition_number},
                      {"ill_conditioned", rep.ill_conditioned},
                      {"sample_count", rep.sample_count}};
    };
    io::Json out{{"schema_version", io::kSchemaVersion},
                 {"env_model", io::to_json(model)},
                 {"stats", {{"wind", stats(env::FieldKind::wind, wind_report)},
                            {"current", stats(env::FieldKind::current, current_report)}}}};
    std::lock_guard lock(m_);
    auto it = scenarios_.find(id);
    if (it == scenarios_.end()) return error_reply(404, "unknown scenario '" + id + "'");
    it->second.env = model;
    it->second.modified = now_iso();
    save_scenario(it->second);
    return {200, out};
  });
}

Reply PlannerService::field_grid(const std::string& id, int nx, int ny) const {
  const auto s = find_scenario(id);
  if (!s) return error_reply(404, "unknown scenario '" + id + "'");
  if (nx < 1 || ny < 1 || nx > 200 || ny > 200) return error_reply(400, "nx and ny must lie in [1, 200]");
  env::Vec2 lo = s->constraints.corridor.vertices().front();
  env::Vec2 hi = lo;
  for (const auto& v : s->constraints.corridor.vertices()) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  io::Json points = io::Json::array();
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      const double fx = nx == 1 ? 0.5 : static_cast<double>(ix) / (nx - 1);
      const double fy = ny == 1 ? 0.5 : static_cast<double>(iy) / (ny - 1);
      const env::Vec2 p(lo.x() + fx * (hi.x() - lo.x()), lo.y() + fy * (hi.y() - lo.y()));
      const env::Vec2 w = s->env.wind.value(p);
      const env::Vec2 c = s->env.current.value(p);
      points.push_back({{"x", p.x()},
                        {"y", p.y()},
                        {"wind", {w.x(), w.y()}},
                        {"current", {c.x(), c.y()}},
                        {"inside", s->constraints.corridor.contains(p)},
                        {"extrapolated", s->env.extrapolates(p)}});
    }
  return {200, {{"schema_version", io::kSchemaVersion}, {"nx", nx}, {"ny", ny}, {"points", points}}};
}

Reply PlannerService::pareto(const std::string& id, const std::string& body) const {
  return guarded([&]() -> Reply {
    const auto s = find_scenario(id);
    if (!s) return error_reply(404, "unknown scenario '" + id + "'");
    const io::Json j = io::parse_json(body, "request body");
    const auto numbers = [&](const char* key) {
      if (!j.is_object() || !j.contains(key) || !j[key].is_array())
        throw ParseError(std::string("field '") + key + "' must be an array of numbers");
      std::vector<double> out;
      for (const auto& v : j[key]) {
        if (!v.is_number()) throw ParseError(std::string("field '") + key + "' must be an array of numbers");
        out.push_back(v.get<double>());
      }
      if (out.empty()) throw ParseError(std::string("field '") + key + "' must not be empty");
      return out;
    };
    const auto result =
        planner::pareto_sweep(*s, numbers("durations"), numbers("scalings"), config_.planner.solver, config_.pareto_threads);
    return {200, planner::to_json(result)};
  });
}

// ---------------------------------------------------------------------------

Reply PlannerService::create_session(const std::string& body) {
  return guarded([&]() -> Reply {
    const io::Json j = io::parse_json(body, "request body");
    if (!j.is_object() || !j.contains("scenario_id") || !j["scenario_id"].is_string())
      throw ParseError("missing field 'scenario_id'");
    const auto scenario = find_scenario(j["scenario_id"].get<std::string>());
    if (!scenario) return error_reply(404, "unknown scenario '" + j["scenario_id"].get<std::string>() + "'");
    const double t = io::get_number_or(j, "t", scenario->departure);
    const model::State x = j.contains("state") ? io::state_from_json(j["state"]) : scenario->x_hat;

    auto slot = std::make_shared<Slot>();
    {
      std::lock_guard lock(m_);
      std::string id;
      do id = "ses-" + std::to_string(++session_counter_);
      while (sessions_.count(id));
      slot->session = planner::start_session(*scenario, id, t, x);
      slot->solving = true;
      sessions_.emplace(id, slot);
    }
    const std::string id = slot->session.id;
    planner::LiveSession work = slot->session;
    io::Json out{{"id", id}, {"plan", nullptr}};
    int status = 201;
    try {
      const auto plan = planner::plan_session(work, *scenario, planner_config(id));
      out["plan"] = io::to_json(plan);
    } catch (const planner::PlanFailedError& e) {
      out["error"] = e.what();
    } catch (const BuildError& e) {
      out["error"] = e.what();
      status = 422;
    }
    {
      std::lock_guard lock(slot->m);
      slot->session = work;
      slot->solving = false;
      save_session(work);
    }
    slot->cv.notify_all();
    if (work.active) {
      events_.publish(id, "plan-updated", io::to_json(*work.active));
      events_.publish(id, "nudge", planner::to_json(planner::make_nudge(work, config_.nudge)));
    }
    return {status, out};
  });
}

Reply PlannerService::run_update(Slot& s, const planner::Scenario& scenario, const Update& u) {
  planner::LiveSession work;
  {
    std::lock_guard lock(s.m);
    work = s.session;
  }
  Reply reply = guarded([&]() -> Reply {
    const auto plan = planner::update_state(work, scenario, u.t, u.x, planner_config(work.id));
    return {200, io::to_json(plan)};
  });
  {
    std::lock_guard lock(s.m);
    s.session = work;
    save_session(work);
  }
  if (reply.status == 200) {
    events_.publish(work.id, "plan-updated", reply.body);
    events_.publish(work.id, "nudge", planner::to_json(planner::make_nudge(work, config_.nudge)));
  }
  return reply;
}

Reply PlannerService::submit_state(const std::string& id, const std::string& body) {
  const auto s = slot(id);
  if (!s) return error_reply(404, "unknown session '" + id + "'");
  Update u;
  try {
    const io::Json j = io::parse_json(body, "request body");
    u.t = io::get_number(j, "t");
    if (!j.contains("state")) throw ParseError("missing field 'state'");
    u.x = io::state_from_json(j["state"]);
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
  std::string scenario_id;
  {
    std::lock_guard lock(s->m);
    scenario_id = s->session.scenario_id;
  }
  const auto scenario = find_scenario(scenario_id);
  if (!scenario) return error_reply(404, "session refers to unknown scenario '" + scenario_id + "'");

  std::unique_lock lock(s->m);
  const std::uint64_t mine = u.seq = ++s->submitted;
  s->pending = u;
  // Wait while another caller solves; it picks up the newest pending update
  // when it finishes. If nobody has taken ours by then, run it ourselves.
  s->cv.wait(lock, [&] { return s->completed >= mine || !s->solving; });
  if (s->completed < mine) {
    s->solving = true;
    while (s->pending) {
      const Update next = *s->pending;
      s->pending.reset();
      lock.unlock();
      Reply r = run_update(*s, *scenario, next);
      lock.lock();
      s->last = r;
      s->completed = next.seq;
      s->cv.notify_all();
    }
    s->solving = false;
    s->cv.notify_all();
  }
  Reply r = s->last;
  if (s->completed > mine) r.body["coalesced"] = true;
  return r;
}

Reply PlannerService::get_plan(const std::string& id) const {
  const auto s = slot(id);
  if (!s) return error_reply(404, "unknown session '" + id + "'");
  std::lock_guard lock(s->m);
  if (!s->session.active) return error_reply(404, "session has no plan yet");
  return {200, io::to_json(*s->session.active)};
}

Reply PlannerService::get_nudge(const std::string& id) const {
  const auto s = slot(id);
  if (!s) return error_reply(404, "unknown session '" + id + "'");
  std::lock_guard lock(s->m);
  if (!s->session.active) return error_reply(409, "session has no plan yet");
  return {200, planner::to_json(planner::make_nudge(s->session, config_.nudge))};
}

std::optional<planner::LiveSession> PlannerService::session(const std::string& id) const {
  const auto s = slot(id);
  if (!s) return std::nullopt;
  std::lock_guard lock(s->m);
  return s->session;
}

// ---------------------------------------------------------------------------

struct ApiServer::Impl {
  PlannerService& service;
  httplib::Server server;
  std::atomic<bool> serving{false};
  std::atomic<bool> stopping{false};
  explicit Impl(PlannerService& s) : service(s) {}
};

namespace {

void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

ApiServer::ApiServer(PlannerService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svr = impl_->server;
  PlannerService& svc = impl_->service;

  // SO_REUSEADDR only: the library default SO_REUSEPORT would let a second server share a busy port.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  svr.set_pre_routing_handler([&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string& token = svc.config().token;
    if (token.empty() || req.path == "/health") return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") == "Bearer " + token) return httplib::Server::HandlerResponse::Unhandled;
    send(res, error_reply(401, "missing or wrong bearer token"));
    return httplib::Server::HandlerResponse::Handled;
  });

  svr.Get("/health", [&svc](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  svr.Post("/scenarios",
           [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.create_scenario(req.body)); });
  svr.Get(R"(/scenarios/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.get_scenario(req.matches[1]));
  });
  svr.Post(R"(/scenarios/([^/]+)/fit-env)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.fit_env(req.matches[1], req.body));
  });
  svr.Post(R"(/scenarios/([^/]+)/pareto)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.pareto(req.matches[1], req.body));
  });
  svr.Get(R"(/scenarios/([^/]+)/field-grid)", [&svc](const httplib::Request& req, httplib::Response& res) {
    const auto param = [&](const char* key, int fallback) {
      if (!req.has_param(key)) return fallback;
      try {
        return std::stoi(req.get_param_value(key));
      } catch (const std::exception&) {
        return -1;
      }
    };
    send(res, svc.field_grid(req.matches[1], param("nx", 10), param("ny", 10)));
  });
  svr.Post("/sessions",
           [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.create_session(req.body)); });
  svr.Post(R"(/sessions/([^/]+)/state)", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.submit_state(req.matches[1], req.body));
  });
  svr.Get(R"(/sessions/([^/]+)/plan)",
          [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.get_plan(req.matches[1])); });
  svr.Get(R"(/sessions/([^/]+)/nudge)",
          [&svc](const httplib::Request& req, httplib::Response& res) { send(res, svc.get_nudge(req.matches[1])); });
  svr.Get(R"(/sessions/([^/]+)/events)", [&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!svc.session(id)) {
      send(res, error_reply(404, "unknown session '" + id + "'"));
      return;
    }
    auto sub = svc.events().subscribe(id);
    auto last_write = std::make_shared<std::chrono::steady_clock::time_point>(std::chrono::steady_clock::now());
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [sub, last_write](std::size_t, httplib::DataSink& sink) {
          const auto ev = sub->next(500);
          if (sub->closed()) {
            sink.done();
            return true;
          }
          std::string chunk;
          if (ev) {
            chunk = "id: " + std::to_string(ev->id) + "\nevent: " + ev->type + "\ndata: " + ev->data + "\n\n";
          } else if (std::chrono::steady_clock::now() - *last_write > std::chrono::seconds(15)) {
            chunk = ": keepalive\n\n";
          } else {
            return true;
          }
          *last_write = std::chrono::steady_clock::now();
          return sink.write(chunk.data(), chunk.size());
        },
        [&svc, id, sub](bool) { svc.events().unsubscribe(id, sub); });
  });
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    const int p = svr.bind_to_any_port(host);
    if (p <= 0) throw Error("cannot bind " + host);
    return p;
  }
  if (!svr.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
  return port;
}

bool ApiServer::serve() {
  impl_->serving = true;
  if (impl_->stopping) {
    impl_->serving = false;
    return false;
  }
  const bool ok = impl_->server.listen_after_bind();
  impl_->serving = false;
  return ok;
}

void ApiServer::stop() {
  impl_->stopping = true;
  impl_->service.events().close();
  // httplib ignores stop() until listen has marked itself running, so keep
  // asking until a concurrent serve() has returned.
  while (impl_->serving) {
    impl_->server.stop();
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

}  // namespace ferryplan::service
