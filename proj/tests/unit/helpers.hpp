#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "zipmo/motiongen.hpp"
#include "zipmo/motionvae.hpp"
#include "zipmo/random.hpp"
#include "zipmo/synthkin.hpp"

namespace zt {

namespace fs = std::filesystem;

// Fresh directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("zipmo_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

// A VAE small enough for per-test construction.
inline zipmo::vae::VaeConfig tiny_vae_config(int T = 8, int t_c = 8, int width = 16) {
  zipmo::vae::VaeConfig c;
  c.T = T;
  c.t_c = t_c;
  c.H = 2;
  c.W = 2;
  c.D = 2;
  c.nn = {width, 2, 2, 2, 1e-6};
  c.fourier_freqs = 2;
  c.frame = {32, 16, 4};
  c.decoder_context_blocks = 1;
  c.decoder_blocks = 1;
  return c;
}

inline zipmo::gen::GenConfig tiny_gen_config(const zipmo::vae::VaeConfig& v, int width = 16) {
  auto g = zipmo::gen::GenConfig::for_vae(v);
  g.nn = {width, 2, 2, 2, 1e-6};
  g.fourier_freqs = 2;
  g.n_labels = 3;
  return g;
}

inline zipmo::track::TrackSet random_tracks(zipmo::Rng& rng, int N, int T, const std::string& id = "f") {
  std::vector<zipmo::track::Track> tracks;
  for (int i = 0; i < N; ++i) {
    std::vector<zipmo::track::Point2> p;
    for (int t = 0; t < T; ++t) p.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
    tracks.push_back(zipmo::track::Track::ground_truth(std::move(p)));
  }
  return {std::move(tracks), id};
}

}  // namespace zt
