#include <future>
#include <thread>

#include <json.hpp>

#include "helpers.hpp"
#include "zipmo/errors.hpp"
#include "zipmo/evalkit.hpp"
#include "zipmo/image.hpp"
#include "zipmo/service.hpp"

// After Eigen: resolv.h defines _res, which Eigen uses as an identifier.
#include <httplib.h>

using namespace zipmo;
using nlohmann::json;

namespace {

const service::Service& svc() {
  static const service::Service s = [] {
    const auto vc = zt::tiny_vae_config(8, 4);
    auto vae = vae::MotionVae::create(vc, 11);
    auto g = gen::MotionGenerator::create(zt::tiny_gen_config(vc), 12);
    g.bind_vae(vae.hash(), "mem");
    auto models = pipeline::ModelPair::from(std::move(vae), std::move(g));
    std::vector<service::Scene> scenes;
    synth::SynthOptions opt;
    opt.resolution = 32;
    for (int i = 0; i < 2; ++i) {
      service::Scene s;
      s.id = "scene_" + std::to_string(i);
      s.scenario = synth::generate(i ? synth::Family::LinearGoalChoice : synth::Family::RotationCwCcw, 40 + i, 6, 8, opt);
      s.frame = pipeline::scene_frame(s.scenario, models.vae);
      s.png = encode_png(s.scenario.raster);
      scenes.push_back(std::move(s));
    }
    service::ServiceOptions so;
    so.max_queries = 300;
    so.max_sample_queries = 600;
    return service::Service(std::move(models), std::move(scenes), so);
  }();
  return s;
}

const std::string kPoke = R"({"scene_id":"scene_0","pokes":[{"anchor":[0.1,0.2],"target":[0.3,-0.1],"t_star":7}],
                              "num_samples":2,"nfe":2,"seed":5})";

}  // namespace

TEST(Service, Scenes) {
  const auto r = svc().handle("GET", "/v1/scenes", "");
  ASSERT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  ASSERT_EQ(j["scenes"].size(), 2u);
  EXPECT_EQ(j["scenes"][0]["id"], "scene_0");
  EXPECT_EQ(j["scenes"][0]["family"], "rotation-cw-ccw");
  EXPECT_EQ(j["scenes"][0]["T"], 8);
  EXPECT_EQ(j["model_hash"], svc().models().gen_hash);
}

TEST(Service, FrameIsPng) {
  const auto r = svc().handle("GET", "/v1/scenes/scene_1/frame", "");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  ASSERT_GT(r.body.size(), 8u);
  EXPECT_EQ(r.body.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));
  EXPECT_EQ(svc().handle("GET", "/v1/scenes/nope/frame", "").status, 404);
}

TEST(Service, SampleShapeAndEpe) {
  const auto r = svc().handle("POST", "/v1/sample", kPoke);
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = json::parse(r.body);
  EXPECT_EQ(j["T"], 8);
  EXPECT_EQ(j["num_queries"], 16 * 16 + 1);
  ASSERT_EQ(j["samples"].size(), 2u);
  ASSERT_EQ(j["epe"].size(), 2u);
  // Recompute the EPE from the returned tracks.
  const std::vector<gen::Poke> pokes{{{0.1, 0.2}, {0.3, -0.1}, 7}};
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& tr = j["samples"][k];
    ASSERT_EQ(tr.size(), 257u);
    std::vector<track::Track> tracks;
    for (const auto& t : tr) {
      ASSERT_EQ(t.size(), 8u);
      std::vector<track::Point2> p;
      for (const auto& q : t) p.push_back({q[0].get<double>(), q[1].get<double>()});
      tracks.push_back(track::Track::ground_truth(p));
    }
    // Query points are the starts, so restore them as such.
    const auto grid = pipeline::default_queries(pokes);
    for (std::size_t i = 0; i < tracks.size(); ++i) tracks[i].start = grid[i];
    eval::SampleSet one{{track::TrackSet(tracks, "x")}};
    EXPECT_NEAR(j["epe"][k].get<double>(), eval::epe(pokes, one), 1e-9);
  }
  EXPECT_FALSE(j.contains("timing_ms"));
}

TEST(Service, SampleIsDeterministic) {
  const auto a = svc().handle("POST", "/v1/sample", kPoke);
  const auto b = svc().handle("POST", "/v1/sample", kPoke);
  EXPECT_EQ(a.body, b.body);
  const auto nopoke = svc().handle("POST", "/v1/sample", R"({"scene_id":"scene_1","query_points":[[0,0],[0.5,0.5]],"nfe":1})");
  ASSERT_EQ(nopoke.status, 200);
  const auto j = json::parse(nopoke.body);
  EXPECT_EQ(j["num_queries"], 2);
  EXPECT_TRUE(j["epe"][0].is_null());
}

TEST(Service, Errors) {
  auto field = [](const service::Response& r) { return json::parse(r.body).value("field", std::string()); };
  auto r = svc().handle("POST", "/v1/sample", "{not json");
  EXPECT_EQ(r.status, 400);
  r = svc().handle("POST", "/v1/sample", R"({"scene_id":"scene_0","pokes":[{"anchor":[0,0],"target":[0,0],"t_star":8}]})");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(field(r), "pokes[0].t_star");
  r = svc().handle("POST", "/v1/sample", R"({"scene_id":"scene_0","nfe":0})");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(field(r), "nfe");
  r = svc().handle("POST", "/v1/sample", R"({"scene_id":"scene_0","label":3})");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(field(r), "label");
  r = svc().handle("POST", "/v1/sample", R"({"scene_id":"missing"})");
  EXPECT_EQ(r.status, 404);
  r = svc().handle("POST", "/v1/sample", R"({"scene_id":"scene_0","num_samples":3})");
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(field(r), "num_samples");
  json many{{"scene_id", "scene_0"}, {"query_points", json::array()}};
  for (int i = 0; i < 301; ++i) many["query_points"].push_back({0.0, 0.0});
  r = svc().handle("POST", "/v1/sample", many.dump());
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(field(r), "query_points");
  EXPECT_EQ(svc().handle("GET", "/v1/sample", "").status, 405);
  EXPECT_EQ(svc().handle("POST", "/v1/scenes", "").status, 405);
  EXPECT_EQ(svc().handle("GET", "/v2/x", "").status, 404);
}

TEST(Service, ParseAddr) {
  EXPECT_EQ(service::parse_addr("0.0.0.0:9000"), std::make_pair(std::string("0.0.0.0"), 9000));
  EXPECT_EQ(service::parse_addr("8080"), std::make_pair(std::string("127.0.0.1"), 8080));
  EXPECT_THROW(service::parse_addr("host:"), ArgumentError);
  EXPECT_THROW(service::parse_addr("h:70000"), ArgumentError);
}

TEST(Service, HttpConcurrentRequests) {
  service::HttpServer server(svc());
  const int port = server.bind("127.0.0.1", 0);
  std::thread th([&] { server.listen(); });
  const auto expected = svc().handle("POST", "/v1/sample", kPoke).body;

  std::vector<std::future<bool>> futures;
  for (int i = 0; i < 32; ++i)
    futures.push_back(std::async(std::launch::async, [&, i] {
      httplib::Client cli("127.0.0.1", port);
      cli.set_read_timeout(120, 0);
      if (i % 2) {
        auto res = cli.Get("/v1/scenes");
        return res && res->status == 200;
      }
      auto res = cli.Post("/v1/sample", kPoke, "application/json");
      return res && res->status == 200 && res->body == expected;
    }));
  int ok = 0;
  for (auto& f : futures) ok += f.get();
  EXPECT_EQ(ok, 32);

  httplib::Client cli("127.0.0.1", port);
  auto pre = cli.Options("/v1/sample");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "*");
  auto bad = cli.Post("/v1/sample", "{}", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  server.stop();
  th.join();
}
