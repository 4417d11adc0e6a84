#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <thread>

#include "progclean/harness.hpp"
#include "progclean/service.hpp"

using namespace progclean;

namespace {

std::string dataset_csv(std::size_t n = 300, std::uint64_t seed = 0) {
  ExperimentConfig cfg;
  cfg.benchmark.n = n;
  cfg.test_fraction = 0;
  const Trial t = prepare_trial(cfg, seed);
  std::ostringstream os;
  write_csv(os, t.train);
  return os.str();
}

Json session_body(const std::string& csv, const std::string& config = "[update]\nbatch_size = 10\nbudget = 40\n") {
  return {{"csv", csv}, {"config", config}, {"seed", 3}};
}

Json oracle_body(SessionStore& store, const std::string& id, const Json& batch) {
  const SessionState s = store.state(id);
  Json repairs = Json::array();
  for (const Json& r : batch.at("records")) {
    const Record& rec = s.data.record(r.at("id").get<std::int64_t>());
    repairs.push_back({{"id", rec.id},
                       {"x", wire::exact(*rec.clean_x)},
                       {"y", wire::exact(*rec.clean_y)},
                       {"error_class", rec.error_class.value_or(0)}});
  }
  return {{"repairs", repairs}};
}

Json pending_records(SessionStore& store, const std::string& id) {
  Json records = Json::array();
  const Json progress = store.progress(id);
  for (const Json& pid : progress.at("pending")) records.push_back({{"id", pid}});
  return {{"records", records}};
}

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ApiError& e) {
    return e.status();
  }
  return 200;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("progclean_svc_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST(Service, CreateProposeSubmitCycle) {
  SessionStore store;
  const Json doc = store.create(session_body(dataset_csv()));
  const std::string id = doc.at("id");
  EXPECT_EQ(doc.at("status"), "active");
  EXPECT_EQ(doc.at("budget_remaining"), 40);
  const Json batch = store.next_batch(id);
  EXPECT_FALSE(batch.at("records").empty());
  for (const Json& r : batch.at("records")) {
    EXPECT_GT(r.at("probability").get<double>(), 0.0);
    EXPECT_GE(r.at("draws").get<int>(), 1);
    EXPECT_TRUE(r.at("hint").contains("dirty"));
  }
  EXPECT_EQ(store.progress(id).at("status"), "awaiting_batch");
  const Json out = store.submit(id, oracle_body(store, id, batch));
  EXPECT_EQ(out.at("records_cleaned"), batch.at("records").size());
  EXPECT_EQ(out.at("budget_remaining").get<std::size_t>() + batch.at("records").size(), 40u);
  EXPECT_EQ(store.progress(id).at("history").size(), 1u);
}

TEST(Service, InitialModelLossAndReproducibleBatches) {
  const std::string csv = dataset_csv();
  SessionStore store;
  const std::string id = store.create(session_body(csv)).at("id");
  const SessionState s = store.state(id);
  std::istringstream in(csv);
  const DatasetView data = parse_csv(in);
  const ModelSpec spec = ModelSpec::make(LossKind::linear_regression, data.d(), data.size(), 1e-4);
  const Theta trained = train_full(spec, example_refs(data));
  EXPECT_LE(distance(s.theta.values, trained.values), 1e-9);

  const Json batch = store.next_batch(id);
  store.submit(id, oracle_body(store, id, batch));
  const SessionState after = store.state(id);
  EXPECT_DOUBLE_EQ(store.progress(id).at("training_loss").get<double>(),
                   mean_loss(after.spec, example_refs(after.data), after.theta));

  SessionStore other;
  const std::string id2 = other.create(session_body(csv)).at("id");
  EXPECT_EQ(other.next_batch(id2).at("records"), batch.at("records"));
}

TEST(Service, BatchTruncatesToRemainingDirtyRecords) {
  std::istringstream in(dataset_csv());
  std::vector<Record> recs = parse_csv(in).records();
  std::size_t kept = 0;
  for (Record& r : recs) {
    if (!r.is_corrupted()) continue;
    if (kept++ < 4) continue;
    r.x = *r.clean_x;
    r.y = *r.clean_y;
    r.error_class = 0;
  }
  std::ostringstream os;
  write_csv(os, DatasetView(std::move(recs), 10, 1));
  SessionStore store;
  const std::string id =
      store.create(session_body(os.str(), "[update]\nbatch_size = 10\nbudget = 40\n[session]\nstrategy = \"AC\"\n"))
          .at("id");
  EXPECT_EQ(store.progress(id).at("dirty_count"), 4);
  std::size_t cleaned = 0;
  while (store.progress(id).at("status") != "done") {
    const Json batch = store.next_batch(id);
    EXPECT_LE(batch.at("records").size(), 4u);
    cleaned += batch.at("records").size();
    const Json out = store.submit(id, oracle_body(store, id, batch));
    EXPECT_EQ(out.at("budget_remaining").get<std::size_t>(), 40 - cleaned);
  }
  EXPECT_EQ(cleaned, 4u);
  EXPECT_EQ(store.progress(id).at("dirty_count"), 0);
}

TEST(Service, StatusCodes) {
  SessionStore store;
  EXPECT_EQ(status_of([&] { store.create(Json::object()); }), 400);
  EXPECT_EQ(status_of([&] { store.create({{"csv", "id,f0\n1,2\n"}}); }), 400);
  EXPECT_EQ(status_of([&] { store.create(session_body(dataset_csv(), "[update]\nbatch = 3\n")); }), 400);
  EXPECT_EQ(status_of([&] { store.create({{"csv", "id,f0,label\n1,2,1\n"}, {"config", "[session]\nstrategy = \"AC\"\n"}}); }),
            400);  // known detector without ground truth
  EXPECT_EQ(status_of([&] { store.progress("nope"); }), 404);
  const std::string id = store.create(session_body(dataset_csv())).at("id");
  EXPECT_EQ(status_of([&] { store.submit(id, {{"repairs", Json::array()}}); }), 409);
  const Json batch = store.next_batch(id);
  EXPECT_EQ(status_of([&] { store.next_batch(id); }), 409);
  EXPECT_EQ(status_of([&] { store.update_settings(id, {{"batch_size", 5}}); }), 409);
  EXPECT_EQ(status_of([&] { store.submit(id, {{"repairs", Json::array()}}); }), 400);
  EXPECT_EQ(status_of([&] { store.submit(id, {{"nope", 1}}); }), 400);
  store.stop(id);
  EXPECT_EQ(store.progress(id).at("status"), "done");
  EXPECT_EQ(status_of([&] { store.next_batch(id); }), 409);
  EXPECT_EQ(status_of([&] { store.update_settings(id, {{"batch_size", 5}}); }), 409);
}

TEST(Service, RejectedSubmitChangesNothing) {
  TempDir dir;
  SessionStore store(dir.path, false);
  const std::string id = store.create(session_body(dataset_csv())).at("id");
  const Json batch = store.next_batch(id);
  const Json before = store.snapshot(id);
  Json body = oracle_body(store, id, batch);
  body["repairs"][0]["x"] = Json::array({1.0});  // wrong dimension
  EXPECT_EQ(status_of([&] { store.submit(id, body); }), 400);
  body = oracle_body(store, id, batch);
  body["repairs"].erase(0);
  EXPECT_EQ(status_of([&] { store.submit(id, body); }), 400);
  EXPECT_EQ(store.snapshot(id), before);
  std::ifstream in(dir.path / (id + ".json"));
  EXPECT_EQ(Json::parse(in), before);
  store.submit(id, oracle_body(store, id, batch));
}

TEST(Service, MarkCleanAndTagNames) {
  SessionStore store;
  const std::string id =
      store.create(session_body(dataset_csv(), "[update]\nbatch_size = 10\nbudget = 40\n[session]\nplan = \"uniform\"\n"))
          .at("id");
  const Json batch = store.next_batch(id);
  Json repairs = Json::array();
  bool first = true;
  for (const Json& r : batch.at("records")) {
    if (first) repairs.push_back({{"id", r.at("id")}, {"x", r.at("x")}, {"y", r.at("y")}, {"error_class", "imputed"}});
    else repairs.push_back({{"id", r.at("id")}, {"mark_clean", true}});
    first = false;
  }
  store.submit(id, {{"repairs", repairs}});
  const Json doc = store.progress(id);
  EXPECT_EQ(doc.at("class_names").at("imputed"), 1);
  const SessionState s = store.state(id);
  EXPECT_EQ(s.tags.at(batch.at("records")[0].at("id").get<std::int64_t>()), 1);
}

TEST(Service, SettingsApplyFromNextBatch) {
  SessionStore store;
  const std::string id = store.create(session_body(dataset_csv())).at("id");
  const Json doc = store.update_settings(id, {{"batch_size", 4}, {"margin_threshold", 0.5}});
  EXPECT_EQ(doc.at("batch_size"), 4);
  EXPECT_EQ(status_of([&] { store.update_settings(id, {{"batch_size", 0}}); }), 400);
  EXPECT_EQ(status_of([&] { store.update_settings(id, {{"colour", 1}}); }), 400);
  const Json batch = store.next_batch(id);
  EXPECT_LE(batch.at("records").size(), 4u);
}

TEST(Service, SnapshotRestoreContinuesIdentically) {
  TempDir dir;
  const std::string csv = dataset_csv();
  std::string id;
  Json batch;
  {
    SessionStore store(dir.path, false);
    id = store.create(session_body(csv, "[update]\nbatch_size = 10\nbudget = 60\n[detector]\nmode = \"adaptive\"\n"))
             .at("id");
    for (int i = 0; i < 2; ++i) store.submit(id, oracle_body(store, id, store.next_batch(id)));
    batch = store.next_batch(id);
  }
  SessionStore reloaded(dir.path, false);
  ASSERT_EQ(reloaded.ids(), std::vector<std::string>{id});
  EXPECT_EQ(reloaded.progress(id).at("status"), "awaiting_batch");
  SessionStore fresh;
  const std::string id2 =
      fresh.create(session_body(csv, "[update]\nbatch_size = 10\nbudget = 60\n[detector]\nmode = \"adaptive\"\n"))
          .at("id");
  for (int i = 0; i < 2; ++i) fresh.submit(id2, oracle_body(fresh, id2, fresh.next_batch(id2)));
  fresh.next_batch(id2);
  while (true) {
    const Json a = reloaded.submit(id, oracle_body(reloaded, id, pending_records(reloaded, id)));
    const Json b = fresh.submit(id2, oracle_body(fresh, id2, pending_records(fresh, id2)));
    EXPECT_EQ(a.at("theta"), b.at("theta"));
    if (a.at("status") == "done") break;
    reloaded.next_batch(id);
    fresh.next_batch(id2);
  }
  // A new session in the reloaded store does not reuse the id.
  EXPECT_NE(reloaded.create(session_body(csv)).at("id"), id);
}

TEST(Service, RestoreRejectsForeignSnapshots) {
  Json config;
  std::map<std::string, int> names;
  EXPECT_THROW(SessionStore::restore({{"format", "other"}, {"version", 1}}, config, names), Error);
  EXPECT_THROW(SessionStore::restore({{"format", kSnapshotFormat}, {"version", 99}}, config, names), Error);
}

TEST(Service, HttpRoutes) {
  SessionStore store(std::nullopt, false);
  httplib::Server server;
  mount_routes(server, store);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Post("/sessions", session_body(dataset_csv()).dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  const std::string id = Json::parse(res->body).at("id");
  EXPECT_EQ(cli.Get("/sessions")->status, 200);
  EXPECT_EQ(cli.Get("/sessions/" + id)->status, 200);
  EXPECT_EQ(cli.Get("/sessions/zzz")->status, 404);
  EXPECT_EQ(Json::parse(cli.Get("/sessions/zzz")->body).contains("error"), true);
  EXPECT_EQ(cli.Post("/sessions", "{not json", "application/json")->status, 400);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/clean", "{}", "application/json")->status, 409);
  auto batch = cli.Get("/sessions/" + id + "/batch");
  ASSERT_EQ(batch->status, 200);
  EXPECT_EQ(cli.Get("/sessions/" + id + "/batch")->status, 409);
  const Json body = oracle_body(store, id, Json::parse(batch->body));
  auto clean = cli.Post("/sessions/" + id + "/clean", body.dump(), "application/json");
  ASSERT_EQ(clean->status, 200);
  EXPECT_TRUE(Json::parse(clean->body).contains("theta"));
  EXPECT_EQ(cli.Post("/sessions/" + id + "/settings", "{\"batch_size\": 5}", "application/json")->status, 200);
  EXPECT_EQ(cli.Options("/sessions")->status, 204);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/stop", "", "application/json")->status, 200);
  EXPECT_EQ(Json::parse(cli.Get("/sessions/" + id)->body).at("status"), "done");
  server.stop();
  th.join();
}
