#pragma once

// Sample latents from the generator and decode them into trajectories.
// Shared by the CLI and the HTTP service so both produce identical numbers.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zipmo/evalkit.hpp"
#include "zipmo/motiongen.hpp"
#include "zipmo/motionvae.hpp"
#include "zipmo/synthkin.hpp"

namespace zipmo::pipeline {

/// A generator with the VAE it was trained against. Immutable once built.
struct ModelPair {
  vae::MotionVae vae;
  gen::MotionGenerator gen;
  std::string vae_hash;
  std::string gen_hash;

  /// Loads the generator; the VAE comes from `vae_path` or, when empty, from
  /// the path recorded in the generator checkpoint. ConfigError when the VAE
  /// hash differs from the one the generator was trained against.
  static ModelPair load(const std::filesystem::path& gen_path, const std::filesystem::path& vae_path = {});
  static ModelPair from(vae::MotionVae vae, gen::MotionGenerator gen);
};

/// Cell centers of a g x g grid over [-1, 1]^2, row-major.
std::vector<track::Point2> grid_queries(int g);

/// Default service queries: a 16 x 16 grid followed by the poke anchors.
std::vector<track::Point2> default_queries(const std::vector<gen::Poke>& pokes, int grid = 16);

/// Seed of sample `index` for a request seed.
std::uint64_t sample_seed(std::uint64_t seed, int index);

struct SampleRequest {
  std::vector<gen::Poke> pokes;
  std::optional<int> label;
  std::vector<track::Point2> queries;
  int num_samples = 1;
  int nfe = 10;
  std::uint64_t seed = 0;
};

struct SampleResult {
  std::vector<track::TrackSet> samples;
  /// One per sample; empty when the request has no pokes.
  std::vector<double> epe;
  std::vector<std::uint64_t> seeds;
};

/// Samples num_samples latents with seeds sample_seed(seed, k), decodes each
/// at the queries and scores EPE against the pokes.
SampleResult sample_and_decode(const ModelPair& models, const vae::FrameEmbedding& frame, const SampleRequest& req,
                               const std::string& frame_id = "sample");

/// Start-frame embedding of a scenario for the given VAE; re-renders the
/// scene when the stored raster has a different resolution.
vae::FrameEmbedding scene_frame(const synth::Scenario& s, const vae::MotionVae& vae);

/// Scenario stems in a dataset directory (files named <stem>.tracks.json
/// with a <stem>.meta.json sidecar), sorted.
std::vector<std::string> list_scenes(const std::filesystem::path& dir);

}  // namespace zipmo::pipeline
