#include "zipmo/service.hpp"

#include <chrono>
#include <cmath>
#include <regex>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "zipmo/errors.hpp"
#include "zipmo/schema.hpp"

namespace zipmo::service {

using nlohmann::json;
using track::Point2;

namespace {

Response json_error(int status, const std::string& message, const std::string& field = "") {
  json j{{"error", message}};
  if (!field.empty()) j["field"] = field;
  return {status, "application/json", j.dump()};
}

Point2 read_point(const json& a) { return {a.at(0).get<double>(), a.at(1).get<double>()}; }

}  // namespace

Service::Service(pipeline::ModelPair models, std::vector<Scene> scenes, ServiceOptions opt)
    : models_(std::move(models)), scenes_(std::move(scenes)), opt_(std::move(opt)) {
  if (opt_.max_queries < 1 || opt_.max_sample_queries < 1) throw ConfigError("service caps must be positive");
}

std::vector<Scene> Service::load_scenes(const std::filesystem::path& dir, const vae::MotionVae& vae) {
  std::vector<Scene> out;
  for (const auto& stem : pipeline::list_scenes(dir)) {
    Scene s;
    s.id = stem;
    s.scenario = synth::load_scenario(dir, stem);
    s.frame = pipeline::scene_frame(s.scenario, vae);
    s.png = encode_png(s.scenario.raster);
    out.push_back(std::move(s));
  }
  return out;
}

const Scene* Service::find(const std::string& id) const {
  for (const auto& s : scenes_)
    if (s.id == id) return &s;
  return nullptr;
}

Response Service::scenes() const {
  json list = json::array();
  for (const auto& s : scenes_)
    list.push_back({{"id", s.id},
                    {"family", std::string(synth::family_name(s.scenario.family))},
                    {"label", s.scenario.label},
                    {"width", s.scenario.raster.width},
                    {"height", s.scenario.raster.height},
                    {"T", s.scenario.tracks.horizon()},
                    {"n_tracks", s.scenario.tracks.size()}});
  return {200, "application/json", json{{"scenes", list}, {"model_hash", models_.gen_hash}}.dump()};
}

Response Service::frame(const std::string& id) const {
  const auto* s = find(id);
  if (!s) return json_error(404, "unknown scene '" + id + "'");
  return {200, "image/png", s->png};
}

Response Service::sample(const std::string& body) const {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    schema::validate(body, schema::builtin("sample_request"));
  } catch (const SchemaError& e) {
    return json_error(400, e.what(), e.path());
  } catch (const ParseError& e) {
    return json_error(400, e.what(), "<root>");
  }
  const json j = json::parse(body);
  const auto id = j.at("scene_id").get<std::string>();
  const auto* scene = find(id);
  if (!scene) return json_error(404, "unknown scene '" + id + "'", "scene_id");

  const auto& cfg = models_.gen.config();
  pipeline::SampleRequest req;
  if (j.contains("pokes")) {
    const auto& arr = j["pokes"];
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const int t_star = arr[i].at("t_star").get<int>();
      if (t_star >= cfg.T)
        return json_error(400, "t_star must be < T = " + std::to_string(cfg.T),
                          "pokes[" + std::to_string(i) + "].t_star");
      req.pokes.push_back({read_point(arr[i].at("anchor")), read_point(arr[i].at("target")), t_star});
    }
  }
  if (j.contains("label")) {
    const int label = j["label"].get<int>();
    if (label >= cfg.n_labels)
      return json_error(400, "label must be < " + std::to_string(cfg.n_labels), "label");
    req.label = label;
  }
  if (j.contains("query_points")) {
    for (const auto& q : j["query_points"]) req.queries.push_back(read_point(q));
  } else {
    req.queries = pipeline::default_queries(req.pokes, opt_.default_grid);
  }
  req.num_samples = j.value("num_samples", 1);
  req.nfe = j.value("nfe", 10);
  req.seed = j.value("seed", std::uint64_t{0});

  const auto q = static_cast<long long>(req.queries.size());
  if (q > opt_.max_queries)
    return json_error(422, "query count " + std::to_string(q) + " exceeds the cap of " +
                               std::to_string(opt_.max_queries), "query_points");
  if (q * req.num_samples > opt_.max_sample_queries)
    return json_error(422, "num_samples x queries = " + std::to_string(q * req.num_samples) +
                               " exceeds the cap of " + std::to_string(opt_.max_sample_queries), "num_samples");

  pipeline::SampleResult res;
  try {
    res = pipeline::sample_and_decode(models_, scene->frame, req, id);
  } catch (const Error& e) {
    spdlog::error("sample failed: {}", e.what());
    return json_error(500, e.what());
  }

  json samples = json::array();
  for (const auto& ts : res.samples) {
    json tracks = json::array();
    for (const auto& tr : ts.tracks()) {
      json pts = json::array();
      for (const auto& p : tr.positions) pts.push_back({p.x, p.y});
      tracks.push_back(std::move(pts));
    }
    samples.push_back(std::move(tracks));
  }
  json epe = json::array();
  for (int k = 0; k < req.num_samples; ++k)
    epe.push_back(res.epe.empty() ? json(nullptr) : json(res.epe[static_cast<std::size_t>(k)]));
  json out{{"scene_id", id},
           {"T", cfg.T},
           {"num_queries", q},
           {"samples", std::move(samples)},
           {"epe", std::move(epe)},
           {"model_hash", models_.gen_hash}};
  // Timing makes the body depend on the clock, so it is opt-in.
  if (j.value("timing", false))
    out["timing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {200, "application/json", out.dump()};
}

Response Service::handle(const std::string& method, const std::string& path, const std::string& body) const {
  static const std::regex frame_re("^/v1/scenes/([^/]+)/frame$");
  std::smatch m;
  if (path == "/v1/scenes") {
    if (method != "GET") return json_error(405, "method not allowed");
    return scenes();
  }
  if (std::regex_match(path, m, frame_re)) {
    if (method != "GET") return json_error(405, "method not allowed");
    return frame(m[1].str());
  }
  if (path == "/v1/sample") {
    if (method != "POST") return json_error(405, "method not allowed");
    return sample(body);
  }
  return json_error(404, "no route for " + path);
}

// ---------------------------------------------------------------------------
// Socket server

struct HttpServer::Impl {
  const Service& svc;
  httplib::Server server;
  explicit Impl(const Service& s) : svc(s) {}
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  const Service* svc = &service;
  const std::string origin = service.options().cors_origin;
  auto reply = [svc](const httplib::Request& req, httplib::Response& res) {
    const auto r = svc->handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  srv.Get(R"(/v1/.*)", reply);
  srv.Post(R"(/v1/.*)", reply);
  srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.set_default_headers({{"Access-Control-Allow-Origin", origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  srv.set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::info("{} {} -> {}", req.method, req.path, res.status);
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

std::pair<std::string, int> parse_addr(const std::string& addr) {
  static const std::regex re(R"(^(?:(.+):)?(\d{1,5})$)");
  std::smatch m;
  if (!std::regex_match(addr, m, re)) throw ArgumentError("address must be host:port or port, got '" + addr + "'");
  const int port = std::stoi(m[2].str());
  if (port > 65535) throw ArgumentError("port out of range: " + m[2].str());
  return {m[1].matched ? m[1].str() : "127.0.0.1", port};
}

}  // namespace zipmo::service
