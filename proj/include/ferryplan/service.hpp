#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ferryplan/planner.hpp"

namespace ferryplan::service {

struct ServiceConfig {
  std::filesystem::path data_dir;  ///< empty disables persistence
  std::string token;               ///< static bearer token; empty disables the check
  planner::PlannerConfig planner;
  planner::NudgeConfig nudge;
  int pareto_threads = 1;
};

struct Event {
  std::uint64_t id = 0;
  std::string type;  ///< plan-updated, nudge, solver-iteration
  std::string data;  ///< JSON
};

/// Per-session fan-out of server-push events.
class EventHub {
 public:
  class Subscription {
   public:
    /// Waits up to `timeout_ms` for the next event; nullopt on timeout or after close.
    std::optional<Event> next(int timeout_ms);
    bool closed() const;

   private:
    friend class EventHub;
    mutable std::mutex m_;
    std::condition_variable cv_;
    std::deque<Event> queue_;
    bool closed_ = false;
  };

  std::shared_ptr<Subscription> subscribe(const std::string& session);
  void unsubscribe(const std::string& session, const std::shared_ptr<Subscription>& sub);
  void publish(const std::string& session, const std::string& type, const io::Json& data);
  /// Ends every subscription.
  void close();

 private:
  std::mutex m_;
  std::map<std::string, std::vector<std::shared_ptr<Subscription>>> subs_;
  std::uint64_t next_id_ = 1;
  bool closed_ = false;
};

/// Response of a service call: HTTP status plus JSON body.
struct Reply {
  int status = 200;
  io::Json body;
};

/// Scenario and session store behind the HTTP routes. Thread-safe. Each
/// session runs at most one solve at a time; updates arriving meanwhile
/// collapse into the newest one, and every waiting caller gets its result.
class PlannerService {
 public:
  explicit PlannerService(ServiceConfig config);
  ~PlannerService();

  Reply health() const;
  Reply create_scenario(const std::string& body);
  Reply get_scenario(const std::string& id) const;
  Reply fit_env(const std::string& id, const std::string& csv);
  Reply field_grid(const std::string& id, int nx, int ny) const;
  Reply pareto(const std::string& id, const std::string& body) const;

  Reply create_session(const std::string& body);
  Reply submit_state(const std::string& id, const std::string& body);
  Reply get_plan(const std::string& id) const;
  Reply get_nudge(const std::string& id) const;
  /// Copy of the session, or nullopt for an unknown id.
  std::optional<planner::LiveSession> session(const std::string& id) const;

  EventHub& events() { return events_; }
  const ServiceConfig& config() const { return config_; }

 private:
  struct Update {
    std::uint64_t seq = 0;
    double t = 0.0;
    model::State x;
  };

  struct Slot {
    mutable std::mutex m;
    std::condition_variable cv;
    planner::LiveSession session;
    bool solving = false;
    std::optional<Update> pending;
    std::uint64_t submitted = 0;
    std::uint64_t completed = 0;
    Reply last;
  };

  std::shared_ptr<Slot> slot(const std::string& id) const;
  std::optional<planner::Scenario> find_scenario(const std::string& id) const;
  Reply run_update(Slot& slot, const planner::Scenario& scenario, const Update& u);
  planner::PlannerConfig planner_config(const std::string& session);
  void save_scenario(const planner::Scenario& s) const;
  void save_session(const planner::LiveSession& s) const;
  void load();

  ServiceConfig config_;
  EventHub events_;
  mutable std::mutex m_;
  std::map<std::string, planner::Scenario> scenarios_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t scenario_counter_ = 0;
  std::uint64_t session_counter_ = 0;
};

/// HTTP front end for a PlannerService.
class ApiServer {
 public:
  explicit ApiServer(PlannerService& service);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds the socket; port 0 picks a free one. Throws Error when the port is busy.
  int bind(const std::string& host, int port);
  /// Serves until stop(); returns false on a socket error.
  bool serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ferryplan::service
