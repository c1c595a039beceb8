#include <doctest.h>

#include <atomic>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "nnprobe/api.hpp"
#include "nnprobe/fixture.hpp"
#include "support.hpp"

using namespace nnprobe;
using namespace nnprobe::api;
using nlohmann::json;

namespace {

struct Fixture {
  testing::TempDir dir;
  std::unique_ptr<ApiService> service;
  explicit Fixture(const char* spec = "uc1", ServiceOptions options = {}) {
    auto cat = store::generate_fixture(store::parse_fixture_spec(spec), 5, dir.path());
    service = std::make_unique<ApiService>(dir.path(), cat, options);
  }
  Response get(std::string path, std::map<std::string, std::string> query = {}) {
    return service->handle({"GET", std::move(path), std::move(query), ""});
  }
  Response post(std::string path, const json& body, std::string method = "POST") {
    return service->handle({std::move(method), std::move(path), {}, body.dump()});
  }
};

}  // namespace

TEST_CASE("model listing and lookup") {
  Fixture f;
  const auto models = f.get("/models");
  CHECK(models.status == 200);
  CHECK(models.json() == json{"clf1", "clf2", "clf3"});
  CHECK(models.headers.at("Content-Type") == "application/json");

  const auto info = f.get("/models/clf1/info");
  CHECK(info.status == 200);
  CHECK(info.json()["header"]["id"] == "clf1");

  const auto missing = f.get("/models/nope/info");
  CHECK(missing.status == 404);
  CHECK(missing.json()["id"] == "nope");
  CHECK(missing.json().contains("error"));

  CHECK(f.get("/models/clf1/graph").json().contains("layers"));
  CHECK(f.get("/models/clf1/checkpoints").json()["checkpoints"].size() == 4);
  CHECK(f.get("/models/clf1/metrics").status == 200);
  CHECK(f.get("/no/such/route").status == 404);
}

TEST_CASE("experiment tree, search and structures") {
  Fixture f;
  const auto tree = f.get("/experiments/tree").json();
  CHECK(tree.contains("experiments"));
  CHECK(tree.contains("nodes"));
  CHECK(f.get("/search", {{"kind", "conv"}}).status == 200);
  CHECK(f.get("/search").status == 400);
  CHECK(f.get("/structures/clf1").json()["model"] == "clf1");
}

TEST_CASE("tensor queries over checkpoints") {
  Fixture f;
  const json mean{{"path", "layers/dense_1/weights/kernel"},
                  {"transform", json::parse(R"([{"op":"agg","fn":"mean","axis":"all"}])")}};
  const auto at2 = f.post("/models/clf1/checkpoints/2/query", mean);
  REQUIRE(at2.status == 200);
  CHECK(at2.json()["kind"] == "scalar");

  const auto series = f.post("/models/clf1/checkpoints/*/query", mean);
  REQUIRE(series.status == 200);
  CHECK(series.json()["kind"] == "series");
  CHECK(series.json()["epochs"] == json{0, 1, 2, 3});
  CHECK(series.json()["values"][2] == at2.json());

  CHECK(f.post("/models/clf1/checkpoints/latest/query", mean).status == 200);
  CHECK(f.post("/models/clf1/checkpoints/9/query", mean).status == 404);
  CHECK(f.post("/models/clf1/checkpoints/abc/query", mean).status == 404);
  CHECK(f.post("/models/clf1/checkpoints/latest/neurons", json{{"layer", "dense_1"}}).status == 200);
  CHECK(f.post("/models/clf1/checkpoints/07x/neurons", json{{"layer", "dense_1"}}).status == 404);
}

TEST_CASE("transform errors are 400 with the op index") {
  Fixture f;
  const json body{{"path", "layers/dense_1/weights/kernel"},
                  {"transform", json::parse(R"([{"op":"flatten"},{"op":"histogram","bins":0}])")}};
  const auto r = f.post("/models/clf1/checkpoints/latest/query", body);
  CHECK(r.status == 400);
  CHECK(r.json()["op_index"] == 1);

  CHECK(f.post("/models/clf1/checkpoints/latest/query", json{{"path", "layers/dense_1/weights/kernel"}, {"bogus", 1}})
            .status == 400);
  CHECK(f.service->handle({"POST", "/models/clf1/checkpoints/latest/query", {}, "{not json"}).status == 400);
}

TEST_CASE("wrong method is 405") {
  Fixture f;
  CHECK(f.post("/models", json::object()).status == 405);
  CHECK(f.get("/interestingness").status == 405);
}

TEST_CASE("cacheable responses are replayed byte for byte") {
  Fixture f;
  const json body{{"measure", {{"kind", "skew"}}}};
  const auto first = f.post("/interestingness", body);
  REQUIRE(first.status == 200);
  CHECK(first.headers.at("Cached") == "false");
  const auto second = f.post("/interestingness", json::parse(R"({"measure":{"kind":"skew"}})"));
  CHECK(second.headers.at("Cached") == "true");
  CHECK(second.body == first.body);
  CHECK(second.headers.at("Cache-Key") == first.headers.at("Cache-Key"));
  CHECK(f.service->cache().stats().hits == 1);

  const auto reordered =
      f.post("/models/clf1/checkpoints/latest/query", json::parse(R"({"transform":[],"path":"data_samples/y_label"})"));
  const auto canonical =
      f.post("/models/clf1/checkpoints/latest/query", json::parse(R"({"path":"data_samples/y_label","transform":[]})"));
  CHECK(canonical.headers.at("Cached") == "true");
  CHECK(canonical.body == reordered.body);

  CHECK(f.get("/version").headers.at("Cached") == "false");
  CHECK(f.get("/version").headers.at("Cached") == "false");
}

TEST_CASE("cache keys change with the catalog version") {
  const auto a = make_cache_key(1, "GET /models", json::object());
  const auto b = make_cache_key(2, "GET /models", json::object());
  CHECK(a.material != b.material);
  CHECK(make_cache_key(1, "r", json::parse(R"({"a":1,"b":2})")).material ==
        make_cache_key(1, "r", json::parse(R"({"b":2,"a":1})")).material);
  CHECK(a.hex().size() == 16);
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("lru cache honours its byte budget") {
  const auto ka = make_cache_key(1, "a", {}), kb = make_cache_key(1, "b", {}), kc = make_cache_key(1, "c", {});
  const std::size_t cost = ka.material.size() + 5;  // key material counts against the budget
  ResponseCache cache(2 * cost);
  cache.put(ka, "12345");
  cache.put(kb, "12345");
  CHECK(cache.get(ka).has_value());
  cache.put(kc, "12345");
  CHECK_FALSE(cache.get(kb).has_value());
  CHECK(cache.get(ka).has_value());
  CHECK(cache.get(kc).has_value());
  const auto huge = make_cache_key(1, "huge", {});
  cache.put(huge, std::string(2 * cost, 'x'));
  CHECK_FALSE(cache.get(huge).has_value());
  const auto s = cache.stats();
  CHECK(s.bytes == 2 * cost);
  CHECK(s.evictions == 1);
  CHECK(s.entries == 2);
  CHECK(s.hits == 3);
}

TEST_CASE("watcher publishes new models and survives corrupt logs") {
  Fixture f;
  CatalogWatcher watcher(f.dir.path(), f.service->catalog());
  CHECK_FALSE(watcher.poll_once());
  const auto cached = f.get("/models");
  CHECK(f.get("/models").headers.at("Cached") == "true");

  const auto before = f.service->catalog().get()->version;
  auto db = json::parse(std::ifstream(f.dir / store::kDatabaseFile));
  auto extra = db["models"][0];
  extra["header"]["id"] = "clf4";
  extra["header"]["name"] = "clf4";
  extra["header"]["parents"] = json{"clf1"};
  db["models"].push_back(extra);
  {
    std::ofstream out(f.dir / store::kDatabaseFile, std::ios::trunc);
    out << db.dump(2) << "\n";
  }
  std::filesystem::copy(f.dir / "clf1", f.dir / "clf4", std::filesystem::copy_options::recursive);
  REQUIRE(watcher.poll_once());
  CHECK(f.service->catalog().get()->version > before);
  const auto after = f.get("/models");
  CHECK(after.headers.at("Cached") == "false");
  CHECK(after.json().size() == 4);

  const auto good = f.service->catalog().get();
  {
    std::ofstream out(f.dir / store::kDatabaseFile, std::ios::trunc);
    out << "{ not json";
  }
  CHECK_FALSE(watcher.poll_once());
  CHECK(watcher.last_error().has_value());
  CHECK(f.service->catalog().get() == good);
  CHECK(f.get("/models").json().size() == 4);
  CHECK_FALSE(watcher.poll_once());
  CHECK(f.service->catalog().get()->version == good->version);
}

TEST_CASE("notes and sessions do not trigger reloads") {
  Fixture f;
  CatalogWatcher watcher(f.dir.path(), f.service->catalog());
  const auto note = f.post("/notes", json{{"uoa", "model:clf1"}, {"text", "looks *odd*"}});
  CHECK(note.status == 201);
  CHECK(note.json()["uoa"] == "model:clf1");
  CHECK(f.post("/notes", json{{"uoa", "model:ghost"}, {"text", "x"}}).status == 404);
  CHECK(f.get("/notes", {{"uoa", "model:clf1"}}).json().size() == 1);
  CHECK(f.get("/notes").json().size() == 1);

  const auto w = f.post("/widgets", json{{"tool", "histogram"},
                                         {"uoa", "model:clf1/layer:dense_1/variable:kernel"},
                                         {"id", "w1"},
                                         {"execute", true}});
  REQUIRE(w.status == 200);
  CHECK(w.json()["data"][0]["kind"] == "table");
  json session{{"widgets", {{"layer_unit", {w.json()}}}}, {"groups", json::array()}};
  session["widgets"]["layer_unit"][0].erase("data");
  CHECK(f.post("/sessions/s1", session, "PUT").status == 200);
  const auto loaded = f.get("/sessions/s1");
  REQUIRE(loaded.status == 200);
  CHECK(loaded.json()["widgets"]["layer_unit"][0]["id"] == "w1");
  CHECK(loaded.json()["order"] == json{"w1"});
  CHECK(f.get("/sessions/other").status == 404);
  CHECK(f.post("/sessions/s2", json{{"id", "s3"}}, "PUT").status == 400);

  CHECK_FALSE(watcher.poll_once());
}

TEST_CASE("component routes") {
  Fixture f;
  CHECK(f.get("/tools").json().size() == 11);
  const auto app = f.get("/tools/applicable", {{"uoa", "model:clf1/layer:dense_1/variable:kernel"}});
  REQUIRE(app.status == 200);
  bool histogram = false;
  const auto tools = app.json()["tools"];
  for (const auto& t : tools) histogram |= t["id"] == "histogram";
  CHECK(histogram);
  CHECK(f.get("/tools/applicable", {{"uoa", "model:ghost"}}).status == 404);
  CHECK(f.post("/widgets", json{{"tool", "nope"}, {"uoa", "model:clf1"}}).status == 404);
  CHECK(f.post("/widgets", json{{"tool", "histogram"}, {"uoa", "model:clf1"}}).status == 400);

  const auto dims = f.post("/dimensions/resolve",
                           json{{"data", "structural"}, {"task", "comparison"}, {"representation", "visualization"}});
  REQUIRE(dims.status == 200);
  CHECK(dims.json()["level"]["value"] == "multi_model");
  CHECK(dims.json()["processing"]["value"] == "transformation");
  CHECK(dims.json()["dependencies"]["value"] == "none");
  const auto conflict = f.post("/dimensions/resolve", json{{"task", "comparison"}, {"level", "single_model"}});
  CHECK(conflict.status == 400);
  CHECK(conflict.json()["conflict"] == json{"task=comparison", "level=single_model"});

  const auto regroup = f.post(
      "/widgets/regroup",
      json{{"group", {{"id", "g"}, {"members", {"a", "b"}}}},
           {"mode", "common_scale"},
           {"members",
            {{{"widget_id", "a"}, {"representation", "histogram"}, {"y_domain", {0, 2}}},
             {{"widget_id", "b"}, {"representation", "histogram"}, {"y_domain", {1, 5}}}}}});
  REQUIRE(regroup.status == 200);
  CHECK(regroup.json()["y_domain"] == json{0, 5});

  const auto w = f.post("/widgets", json{{"tool", "class-probability"}, {"uoa", "model:clf1"}}).json();
  const auto sel = f.post("/class-selection", json{{"selection", {1}}, {"widgets", {w}}});
  REQUIRE(sel.status == 200);
  CHECK(sel.json()["requery"].size() == 1);
  CHECK(sel.json()["possible_selections"] == 7);
  CHECK(f.post("/class-selection", json{{"selection", json::array()}, {"widgets", {w}}}).status == 400);

  const auto branch = f.post("/models/clf1/branch", json{{"name", "variant"}});
  REQUIRE(branch.status == 200);
  const auto valid = f.post("/headers/validate", json{{"header", branch.json()}});
  CHECK(valid.json()["valid"] == true);
  auto dup = branch.json();
  dup["id"] = "clf2";
  CHECK(f.post("/headers/validate", json{{"header", dup}}).json()["violations"] == json{"duplicate id"});

  CHECK(f.post("/models/clf1/checkpoints/latest/neurons", json{{"layer", "dense_1"}, {"k", 2}}).status == 200);
  CHECK(f.post("/models/clf1/checkpoints/latest/neurons_by_class", json{{"layer", "dense_1"}}).status == 200);
  CHECK(f.get("/openapi").json()["routes"].size() > 20);
}

TEST_CASE("concurrent clients see the single-client responses") {
  Fixture f;
  std::vector<Request> requests;
  requests.push_back({"GET", "/models", {}, ""});
  requests.push_back({"GET", "/experiments/tree", {}, ""});
  requests.push_back({"POST", "/interestingness", {}, R"({"measure":{"kind":"skew"}})"});
  for (int e = 0; e < 4; ++e)
    requests.push_back({"POST", "/models/clf2/checkpoints/" + std::to_string(e) + "/query", {},
                        R"({"path":"layers/dense_1/weights/kernel","transform":[{"op":"histogram","bins":8}]})"});
  requests.push_back({"POST", "/models/clf3/checkpoints/*/query", {}, R"({"path":"data_samples/y_label"})"});

  Fixture baseline_fixture;
  std::vector<std::string> baseline;
  for (const auto& r : requests) baseline.push_back(baseline_fixture.service->handle(r).body);

  std::atomic<int> mismatches{0};
  std::vector<std::thread> clients;
  for (int c = 0; c < 16; ++c)
    clients.emplace_back([&, c] {
      for (int round = 0; round < 3; ++round)
        for (std::size_t i = 0; i < requests.size(); ++i) {
          const auto k = (i + static_cast<std::size_t>(c)) % requests.size();
          const auto r = f.service->handle(requests[k]);
          if (r.status != 200 || r.body != baseline[k]) ++mismatches;
        }
    });
  for (auto& t : clients) t.join();
  CHECK(mismatches == 0);
}

TEST_CASE("http round trip") {
  Fixture f;
  std::atomic<bool> stop{false};
  std::atomic<int> port{0};
  std::thread server([&] { serve(*f.service, "127.0.0.1", 0, &stop, [&](int p) { port = p; }); });
  for (int i = 0; i < 200 && port == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  REQUIRE(port != 0);
  httplib::Client client("127.0.0.1", port);
  const auto models = client.Get("/models");
  REQUIRE(models);
  CHECK(models->status == 200);
  CHECK(json::parse(models->body) == json{"clf1", "clf2", "clf3"});
  const auto q = client.Post("/models/clf1/checkpoints/latest/query", R"({"path":"data_samples/y_label"})", "application/json");
  REQUIRE(q);
  CHECK(q->status == 200);
  const auto again = client.Post("/models/clf1/checkpoints/latest/query", R"({"path":"data_samples/y_label"})", "application/json");
  REQUIRE(again);
  CHECK(again->get_header_value("Cached") == "true");
  const auto search = client.Get("/search?kind=conv");
  REQUIRE(search);
  CHECK(search->status == 200);
  CHECK(client.Get("/models/ghost/info")->status == 404);
  stop = true;
  server.join();
}
