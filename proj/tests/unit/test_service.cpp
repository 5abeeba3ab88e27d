#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "ferryplan/error.hpp"
#include "ferryplan/service.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

using namespace ferryplan;
using io::Json;

namespace {

const std::filesystem::path kScenarios = std::filesystem::path(FERRYPLAN_SOURCE_DIR) / "scenarios";

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Without its id, so the service assigns a fresh one each time.
std::string hover_body() {
  Json j = Json::parse(read_file(kScenarios / "hover.json"));
  j.erase("id");
  return j.dump();
}

std::string state_body(double t, const model::State& x) {
  return Json{{"t", t}, {"state", io::to_json(x)}}.dump();
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ferryplan_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  return dir;
}

// Server on a free local port, serving on a background thread.
struct LiveServer {
  service::PlannerService svc;
  service::ApiServer api{svc};
  int port = 0;
  std::thread thread;

  explicit LiveServer(service::ServiceConfig cfg = {}) : svc(std::move(cfg)) {
    port = api.bind("127.0.0.1", 0);
    thread = std::thread([this] { api.serve(); });
  }
  ~LiveServer() {
    api.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(30, 0);
    return c;
  }
};

}  // namespace

TEST(PlannerService, ScenarioSessionAndStateFlow) {
  service::PlannerService svc({});
  const auto created = svc.create_scenario(hover_body());
  ASSERT_EQ(created.status, 201) << created.body.dump();
  const std::string sid = created.body["id"];
  EXPECT_EQ(svc.get_scenario(sid).status, 200);

  const auto ses = svc.create_session(Json{{"scenario_id", sid}}.dump());
  ASSERT_EQ(ses.status, 201) << ses.body.dump();
  const std::string id = ses.body["id"];
  EXPECT_EQ(id.rfind("ses-", 0), 0u);
  EXPECT_TRUE(ses.body["plan"].is_object());

  const auto plan = svc.get_plan(id);
  ASSERT_EQ(plan.status, 200);
  const auto x = io::plan_from_json(plan.body).state_at(30.0);
  const auto upd = svc.submit_state(id, state_body(30.0, x));
  ASSERT_EQ(upd.status, 200) << upd.body.dump();
  EXPECT_EQ(upd.body["times"].front().get<double>(), 30.0);
  EXPECT_EQ(svc.session(id)->history.size(), 2u);
  EXPECT_EQ(svc.get_nudge(id).status, 200);
}

TEST(PlannerService, ErrorStatusesNameTheProblem) {
  service::PlannerService svc({});
  EXPECT_EQ(svc.create_scenario("{").status, 400);
  const auto missing = svc.create_scenario(R"({"x_hat": [0,0,0,0,0,0]})");
  EXPECT_EQ(missing.status, 400);
  EXPECT_NE(missing.body["error"].get<std::string>().find("corridor"), std::string::npos);

  Json with_path = Json::parse(hover_body());
  with_path["params"] = "params.json";
  EXPECT_EQ(svc.create_scenario(with_path.dump()).status, 400);

  const std::string sid = svc.create_scenario(hover_body()).body["id"];
  EXPECT_EQ(svc.get_scenario("nope").status, 404);
  EXPECT_EQ(svc.submit_state("nope", "{}").status, 404);
  EXPECT_EQ(svc.create_session(Json{{"scenario_id", "nope"}}.dump()).status, 404);

  const std::string id = svc.create_session(Json{{"scenario_id", sid}}.dump()).body["id"];
  const auto bad_t = svc.submit_state(id, R"({"t": "soon", "state": [0,0,0,0,0,0]})");
  EXPECT_EQ(bad_t.status, 400);
  EXPECT_EQ(bad_t.body["error"], "field 't' must be a number");
  EXPECT_EQ(svc.submit_state(id, R"({"t": 10})").status, 400);
  EXPECT_EQ(svc.submit_state(id, R"({"t": 10, "state": [0,0,0]})").status, 400);
  EXPECT_EQ(svc.submit_state(id, state_body(300.0, {})).status, 410);

  // A start outside the corridor cannot be built.
  const auto outside = svc.create_session(Json{{"scenario_id", sid}, {"state", {500, 0, 0, 0, 0, 0}}}.dump());
  EXPECT_EQ(outside.status, 422);
  const std::string bad = outside.body["id"];
  EXPECT_EQ(svc.get_plan(bad).status, 404);
  EXPECT_EQ(svc.get_nudge(bad).status, 409);
}

TEST(PlannerService, SimultaneousUpdatesCoalesce) {
  service::PlannerService svc({});
  const auto s = planner::load_scenario(kScenarios / "scenario1.json");
  Json body = planner::to_json(s);
  body.erase("id");
  const std::string sid = svc.create_scenario(body.dump()).body["id"];
  const std::string id = svc.create_session(Json{{"scenario_id", sid}}.dump()).body["id"];
  const auto plan = *svc.session(id)->active;

  constexpr int kCallers = 6;
  std::vector<service::Reply> replies(kCallers);
  std::vector<std::thread> threads;
  for (int i = 0; i < kCallers; ++i) {
    threads.emplace_back([&, i] {
      model::State x = plan.state_at(30.0);
      x.x_l += i;
      replies[i] = svc.submit_state(id, state_body(30.0, x));
    });
  }
  for (auto& t : threads) t.join();

  // Each update ran at most once, and every caller got a plan that was solved.
  const auto ses = *svc.session(id);
  const int solves = static_cast<int>(ses.history.size()) - 1;
  EXPECT_GE(solves, 1);
  EXPECT_LE(solves, kCallers);
  EXPECT_EQ(ses.t, 30.0);
  for (const auto& r : replies) {
    ASSERT_EQ(r.status, 200) << r.body.dump();
    Json plan = r.body;
    plan.erase("coalesced");
    const bool solved = std::any_of(ses.history.begin() + 1, ses.history.end(),
                                    [&](const planner::PlanRecord& h) { return io::to_json(h.plan) == plan; });
    EXPECT_TRUE(solved);
  }
  EXPECT_EQ(io::to_json(*ses.active), io::to_json(ses.history.back().plan));
}

TEST(PlannerService, FieldGridAndFitEnv) {
  service::PlannerService svc({});
  const std::string sid = svc.create_scenario(hover_body()).body["id"];
  const auto grid = svc.field_grid(sid, 3, 2);
  ASSERT_EQ(grid.status, 200);
  ASSERT_EQ(grid.body["points"].size(), 6u);
  EXPECT_EQ(grid.body["points"][0]["x"], -100.0);
  EXPECT_EQ(grid.body["points"][5]["y"], 100.0);
  EXPECT_EQ(svc.field_grid(sid, 0, 5).status, 400);
  EXPECT_EQ(svc.field_grid(sid, 5, 201).status, 400);

  std::ostringstream csv;
  csv << "x_l,y_l,vx_wind,vy_wind,vx_current,vy_current\n";
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      const double x = -100 + 50 * i, y = -100 + 50 * j;
      csv << x << ',' << y << ",3,-1," << 0.001 * y << ",0.2\n";
    }
  const auto fit = svc.fit_env(sid, csv.str());
  ASSERT_EQ(fit.status, 200) << fit.body.dump();
  EXPECT_LT(fit.body["stats"]["current"]["max_abs_error"].get<double>(), 1e-9);
  const auto after = svc.field_grid(sid, 1, 1);
  EXPECT_NEAR(after.body["points"][0]["wind"][0].get<double>(), 3.0, 1e-9);
  EXPECT_EQ(svc.fit_env(sid, "x,y\n1,2\n").status, 400);
  EXPECT_EQ(svc.fit_env("nope", csv.str()).status, 404);
}

TEST(PlannerService, ParetoRequest) {
  service::PlannerService svc({});
  const std::string sid = svc.create_scenario(hover_body()).body["id"];
  const auto r = svc.pareto(sid, R"({"durations": [200, 240], "scalings": [0, 1]})");
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["rows"].size(), 4u);
  EXPECT_EQ(svc.pareto(sid, R"({"durations": [], "scalings": [0]})").status, 400);
  EXPECT_EQ(svc.pareto(sid, R"({"durations": ["a"], "scalings": [0]})").status, 400);
}

TEST(PlannerService, PersistsAcrossRestarts) {
  const auto dir = fresh_dir("persist");
  std::string sid, id;
  {
    service::PlannerService svc({.data_dir = dir});
    sid = svc.create_scenario(hover_body()).body["id"];
    id = svc.create_session(Json{{"scenario_id", sid}}.dump()).body["id"];
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "scenarios" / (sid + ".json")));
  EXPECT_TRUE(std::filesystem::exists(dir / "sessions" / (id + ".json")));
  service::PlannerService again({.data_dir = dir});
  EXPECT_EQ(again.get_scenario(sid).status, 200);
  EXPECT_EQ(again.get_plan(id).status, 200);
  // New ids do not collide with restored ones.
  const std::string next = again.create_scenario(hover_body()).body["id"];
  EXPECT_NE(next, sid);
  std::filesystem::remove_all(dir);
}

TEST(EventHub, FanOutAndClose) {
  service::EventHub hub;
  auto a = hub.subscribe("s");
  auto b = hub.subscribe("s");
  auto other = hub.subscribe("t");
  hub.publish("s", "nudge", Json{{"k", 1}});
  const auto ea = a->next(100), eb = b->next(100);
  ASSERT_TRUE(ea && eb);
  EXPECT_EQ(ea->id, eb->id);
  EXPECT_EQ(ea->type, "nudge");
  EXPECT_EQ(Json::parse(ea->data)["k"], 1);
  EXPECT_FALSE(other->next(10));
  hub.unsubscribe("s", b);
  hub.publish("s", "nudge", Json::object());
  EXPECT_TRUE(a->next(100));
  EXPECT_FALSE(b->next(10));
  hub.close();
  EXPECT_TRUE(a->closed());
  EXPECT_FALSE(a->next(10));
}

TEST(ApiServer, RoutesOverHttp) {
  LiveServer server;
  auto c = server.client();
  auto health = c.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(Json::parse(health->body)["status"], "ok");

  auto scn = c.Post("/scenarios", hover_body(), "application/json");
  ASSERT_TRUE(scn);
  ASSERT_EQ(scn->status, 201);
  const std::string sid = Json::parse(scn->body)["id"];
  auto ses = c.Post("/sessions", Json{{"scenario_id", sid}}.dump(), "application/json");
  ASSERT_EQ(ses->status, 201);
  const std::string id = Json::parse(ses->body)["id"];
  EXPECT_EQ(c.Get("/sessions/" + id + "/plan")->status, 200);
  EXPECT_EQ(c.Get("/sessions/" + id + "/nudge")->status, 200);
  EXPECT_EQ(c.Get("/sessions/nope/plan")->status, 404);
  auto bad = c.Post("/sessions/" + id + "/state", R"({"t": null, "state": [0,0,0,0,0,0]})", "application/json");
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(Json::parse(bad->body)["error"], "field 't' must be a number");
  auto grid = c.Get("/scenarios/" + sid + "/field-grid?nx=4&ny=3");
  ASSERT_EQ(grid->status, 200);
  EXPECT_EQ(Json::parse(grid->body)["points"].size(), 12u);
  EXPECT_EQ(c.Get("/scenarios/" + sid + "/field-grid?nx=abc")->status, 400);
}

TEST(ApiServer, BearerTokenGuardsEverythingButHealth) {
  LiveServer server({.token = "sesame"});
  auto c = server.client();
  EXPECT_EQ(c.Get("/health")->status, 200);
  EXPECT_EQ(c.Post("/scenarios", hover_body(), "application/json")->status, 401);
  c.set_bearer_token_auth("wrong");
  EXPECT_EQ(c.Get("/scenarios/x")->status, 401);
  c.set_bearer_token_auth("sesame");
  EXPECT_EQ(c.Post("/scenarios", hover_body(), "application/json")->status, 201);
}

TEST(ApiServer, StreamsPlanAndNudgeEvents) {
  LiveServer server;
  auto c = server.client();
  const std::string sid = Json::parse(c.Post("/scenarios", hover_body(), "application/json")->body)["id"];
  const std::string id = Json::parse(c.Post("/sessions", Json{{"scenario_id", sid}}.dump(), "application/json")->body)["id"];
  const auto plan = io::plan_from_json(Json::parse(c.Get("/sessions/" + id + "/plan")->body));

  std::string received;
  std::atomic<bool> subscribed = false;
  std::thread listener([&] {
    auto lc = server.client();
    lc.Get("/sessions/" + id + "/events", [&](const char* data, std::size_t len) {
      subscribed = true;
      received.append(data, len);
      return received.find("event: nudge") == std::string::npos;
    });
  });
  // The stream opens lazily; keep posting until the listener sees output.
  auto poster = server.client();
  for (int i = 0; i < 50 && !subscribed; ++i) {
    poster.Post("/sessions/" + id + "/state", state_body(10.0 + 0.1 * i, plan.state_at(10.0 + 0.1 * i)),
                "application/json");
  }
  listener.join();
  EXPECT_NE(received.find("event: plan-updated"), std::string::npos);
  EXPECT_NE(received.find("event: nudge"), std::string::npos);
  EXPECT_NE(received.find("id: "), std::string::npos);
  EXPECT_NE(received.find("data: {"), std::string::npos);
}

TEST(ApiServer, BusyPortIsAnError) {
  LiveServer first;
  service::PlannerService svc({});
  service::ApiServer second(svc);
  EXPECT_THROW(second.bind("127.0.0.1", first.port), Error);
}
