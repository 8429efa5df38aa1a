#pragma once

// Stateless HTTP sampling endpoint.
//
//   GET  /v1/scenes              scene summaries
//   GET  /v1/scenes/{id}/frame   start frame as PNG
//   POST /v1/sample              poke-conditioned samples, decoded
//
// Request handling is exposed separately from the socket server so it can be
// exercised without a network.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "zipmo/pipeline.hpp"

namespace zipmo::service {

struct Scene {
  std::string id;
  synth::Scenario scenario;
  vae::FrameEmbedding frame;
  std::string png;
};

struct ServiceOptions {
  /// Upper bound on num_samples * query count per request (422 beyond).
  int max_sample_queries = 64 * 512;
  /// Upper bound on the query count of one request (64 x 64 dense grid plus
  /// room for poke anchors).
  int max_queries = 64 * 64 + 64;
  int default_grid = 16;
  std::string cors_origin = "*";
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

class Service {
 public:
  Service(pipeline::ModelPair models, std::vector<Scene> scenes, ServiceOptions opt = {});

  /// Loads every scenario in `dir` and embeds its start frame with the VAE.
  static std::vector<Scene> load_scenes(const std::filesystem::path& dir, const vae::MotionVae& vae);

  Response handle(const std::string& method, const std::string& path, const std::string& body) const;

  Response scenes() const;
  Response frame(const std::string& id) const;
  Response sample(const std::string& body) const;

  const pipeline::ModelPair& models() const { return models_; }
  const ServiceOptions& options() const { return opt_; }

 private:
  const Scene* find(const std::string& id) const;

  pipeline::ModelPair models_;
  std::vector<Scene> scenes_;
  ServiceOptions opt_;
};

/// Socket server around a Service. The Service must outlive the server.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds host:port (port 0 picks a free port) and returns the bound port.
  /// Throws Error when the address cannot be bound.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Splits "host:port"; a bare port binds 127.0.0.1. ArgumentError otherwise.
std::pair<std::string, int> parse_addr(const std::string& addr);

}  // namespace zipmo::service
