#pragma once

// Trajectory VAE: compresses a set of point tracks plus a start-frame
// embedding into a T_z x H x W x D latent grid, and decodes trajectories at
// arbitrary query start points.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "zipmo/image.hpp"
#include "zipmo/nn/checkpoint.hpp"
#include "zipmo/nn/fourier.hpp"
#include "zipmo/nn/layers.hpp"
#include "zipmo/nn/optim.hpp"
#include "zipmo/trackdata.hpp"

namespace zipmo::vae {

struct FrameConfig {
  int resolution = 64;  // raster side in pixels
  int patch = 8;        // patch side; resolution / patch tokens per axis
  int channels = 32;    // D_f
};

struct VaeConfig {
  int T = 64;
  int t_c = 64;
  int H = 8;
  int W = 8;
  int D = 8;
  double beta = 1e-7;
  double mae_fraction = 0.25;
  nn::AttentionConfig nn{};
  int fourier_freqs = 16;
  double fourier_sigma = 1.0;
  std::uint64_t fourier_seed = 17;
  FrameConfig frame{};
  /// Self-attention blocks refining the decoder context [z ; frame].
  int decoder_context_blocks = 1;
  /// Cross-attention + FFN blocks applied to the query tokens.
  int decoder_blocks = 2;
  double rope_base = 1e4;
  /// Normalized coordinates are multiplied by this before rotation, so one
  /// latent cell spans a useful angle on the fastest pair.
  double rope_spatial_scale = 16.0;
  /// Upper bound on N * T trajectory tokens per encoder call.
  int max_track_tokens = 4096;

  int T_z() const { return T / t_c; }
  int latent_tokens() const { return T_z() * H * W; }
  int frame_grid() const { return frame.resolution / frame.patch; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Desk preset: latent 1x8x8x8, width 128.
VaeConfig desk_config();
/// Full-scale latent 1x16x16x16 (not exercised in CI).
VaeConfig full_config();

std::string to_json(const VaeConfig& cfg);
/// Parses a JSON object; unknown keys and bad values raise SchemaError with
/// `path_prefix` prepended to the field path.
VaeConfig vae_config_from_json(const std::string& text, const std::string& path_prefix = "");

/// Latent tokens are ordered (t_z, h, w); each row holds D channels.
struct Posterior {
  int T_z = 0, H = 0, W = 0, D = 0;
  nn::Matrix<double> mean;
  nn::Matrix<double> logvar;
};

struct LatentGrid {
  int T_z = 0, H = 0, W = 0, D = 0;
  nn::Matrix<double> z;

  std::vector<double> flat() const;
};

enum class FrameSource { LearnedPatch, File };

struct FrameEmbedding {
  int H_f = 0, W_f = 0, D_f = 0;
  nn::Matrix<double> features;  // (H_f * W_f) x D_f, row-major over (h, w)
  FrameSource source = FrameSource::LearnedPatch;
};

/// Feature file: JSON {"H":int,"W":int,"D":int,"data":[H*W*D numbers]}.
void save_frame_features(const FrameEmbedding& f, const std::filesystem::path& path);
/// ParseError when the declared shape disagrees with the data.
FrameEmbedding load_frame_features(const std::filesystem::path& path);

/// Parameter layout of the VAE. Layers hold indices into a ParamStore.
struct VaeLayers {
  nn::Linear patch_proj;   // patch pixels -> D_f
  nn::Linear frame_in;     // D_f -> d
  nn::Mlp track_embed;     // F(x_t) | F(y_t) | F(t) -> d
  int latent_query = -1;   // 1 x d learnable latent token
  std::vector<nn::AttentionBlock> enc_self;
  std::vector<nn::AttentionBlock> enc_cross;  // one per even encoder block
  std::vector<nn::FeedForward> enc_ffn;
  nn::RmsNorm enc_out_norm;
  nn::Linear posterior_head;  // d -> 2D (mean | logvar)
  nn::Linear z_in;            // D -> d
  std::vector<nn::AttentionBlock> ctx_self;
  std::vector<nn::FeedForward> ctx_ffn;
  nn::Mlp query_embed;        // F(x0) | F(y0) | F(t) -> d
  std::vector<nn::AttentionBlock> dec_cross;
  std::vector<nn::FeedForward> dec_ffn;
  nn::RmsNorm head_norm;
  nn::Mlp head;               // d -> 2
};

class MotionVae {
 public:
  static MotionVae create(const VaeConfig& cfg, std::uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  const VaeLayers& layers() const { return layers_; }
  const nn::FourierSpec& fourier() const { return fourier_; }
  nn::ParamStore<float>& params() { return params_; }
  const nn::ParamStore<float>& params() const { return params_; }

  nn::Checkpoint to_checkpoint() const;
  static MotionVae from_checkpoint(const nn::Checkpoint& ck);
  void save(const std::filesystem::path& path) const;
  static MotionVae load(const std::filesystem::path& path);
  /// FNV-1a of the serialized checkpoint, as 16 hex digits.
  std::string hash() const;

 private:
  VaeConfig cfg_;
  VaeLayers layers_;
  nn::FourierSpec fourier_;
  nn::ParamStore<float> params_;
};

/// Splits a square raster into non-overlapping patches: (g*g) x (p*p).
nn::Matrix<double> raster_patches(const GrayImage& raster, int patch);

/// Learned-patch frame embedding. ShapeError for non-square or small rasters.
FrameEmbedding encode_frame(const GrayImage& raster, const MotionVae& model);

/// Either a raster (patches go through the learned projection) or
/// precomputed features.
struct FrameInput {
  const nn::Matrix<double>* patches = nullptr;
  const FrameEmbedding* features = nullptr;

  static FrameInput from(const FrameEmbedding& f) { return {nullptr, &f}; }
};

template <typename T>
Posterior encode(const MotionVae& model, const nn::ParamStore<T>& ps, const track::TrackSet& ts,
                 const FrameInput& frame);
inline Posterior encode(const track::TrackSet& ts, const FrameEmbedding& f0, const MotionVae& model) {
  return encode(model, model.params(), ts, FrameInput::from(f0));
}

/// z = mean + exp(logvar / 2) * eps with eps ~ N(0, I) keyed by seed.
LatentGrid reparameterize(const Posterior& p, std::uint64_t seed);
/// The posterior mean as a grid.
LatentGrid mean_latent(const Posterior& p);

/// Decoded trajectories for `queries`, one per query, clamped to [-1, 1].
/// The start anchor of each output track is its query point.
template <typename T>
track::TrackSet decode(const MotionVae& model, const nn::ParamStore<T>& ps,
                       std::span<const track::Point2> queries, const LatentGrid& z,
                       const FrameInput& frame, const std::string& frame_id = "decoded");
inline track::TrackSet decode(std::span<const track::Point2> queries, const LatentGrid& z,
                              const FrameEmbedding& f0, const MotionVae& model) {
  return decode(model, model.params(), queries, z, FrameInput::from(f0));
}

/// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
double kl_divergence(const Posterior& p);

/// One training example: tracks plus the start frame.
struct VaeExample {
  track::TrackSet tracks;
  GrayImage raster;
  /// Optional precomputed features; used instead of the raster when set.
  std::shared_ptr<const FrameEmbedding> features;
};

struct VaeLoss {
  double total = 0.0;
  double recon = 0.0;   // mean L1 over encoded tracks
  double masked = 0.0;  // mean L1 over held-out tracks
  double kl = 0.0;      // unweighted KL
};

/// Encoder/held-out split of n tracks: a seeded shuffle, with
/// round(mae_fraction * n) tracks held out. ConfigError if either side is
/// empty.
struct MaeSplit {
  std::vector<int> encoded;
  std::vector<int> held_out;
};
MaeSplit mae_split(int n_tracks, double mae_fraction, std::uint64_t seed);

/// Loss terms from given predictions; pred and gt are n x (T*2) rows of
/// (x0, y0, x1, y1, ...).
VaeLoss vae_loss_terms(const nn::Matrix<double>& pred_enc, const nn::Matrix<double>& gt_enc,
                       const nn::Matrix<double>& pred_held, const nn::Matrix<double>& gt_held,
                       double kl, double beta);

/// Builds the differentiable loss of one example on graph g and reports its
/// terms. The same seed selects the split and the posterior noise.
template <typename T>
nn::Var<T> vae_loss_graph(nn::Graph<T>& g, const MotionVae& model, const nn::ParamStore<T>& ps,
                          const VaeExample& ex, std::uint64_t seed, VaeLoss* terms = nullptr);

/// Mean of the per-example losses over a batch.
VaeLoss vae_loss(const std::vector<VaeExample>& batch, const MotionVae& model, std::uint64_t seed);

struct VaeTrainConfig {
  int steps = 1000;
  int batch_size = 4;
  /// Tracks drawn (without replacement) from each example per step; 0 uses
  /// every track.
  int tracks_per_example = 0;
  nn::AdamWConfig optim{};
  int log_every = 10;
  std::uint64_t seed = 0;
};

struct VaeTrainResult {
  std::vector<VaeLoss> log;  // one entry per logged step
  std::vector<int> log_steps;
};

/// Trains in place. Writes `<out_dir>/vae.ckpt` and `<out_dir>/vae_loss.csv`
/// when out_dir is non-empty. NumericError if the loss becomes NaN.
VaeTrainResult train_vae(MotionVae& model, const std::vector<VaeExample>& dataset,
                         const VaeTrainConfig& tc, const std::filesystem::path& out_dir = {});

}  // namespace zipmo::vae
