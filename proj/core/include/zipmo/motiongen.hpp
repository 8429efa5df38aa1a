#pragma once

// Conditional flow matching over (whitened) latent motion grids.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zipmo/motionvae.hpp"

namespace zipmo::gen {

using nn::Matrix;

struct Poke {
  track::Point2 anchor;
  track::Point2 target;
  int t_star = 0;
};

struct Condition {
  std::vector<Poke> pokes;
  std::optional<int> label;
  std::shared_ptr<const vae::FrameEmbedding> frame;
  /// Training augmentation: ignore the frame even when present.
  bool drop_frame = false;
};

struct FlowState {
  Matrix<double> z_t;
  double t = 0.0;
};

/// Per-channel statistics of a latent corpus, used to whiten latents
/// before flow matching.
struct LatentStats {
  std::vector<double> mean;
  std::vector<double> std;

  /// Throws ArgumentError for an empty corpus; channels with zero spread get
  /// std = 1.
  static LatentStats from(const std::vector<vae::LatentGrid>& corpus);
  Matrix<double> whiten(const Matrix<double>& z) const;
  Matrix<double> unwhiten(const Matrix<double>& z) const;
};

/// z_t = (1 - t) z0 + t z1.
FlowState interpolate(const Matrix<double>& z0, const Matrix<double>& z1, double t);
/// v* = z1 - z0.
Matrix<double> target_flow(const Matrix<double>& z0, const Matrix<double>& z1);

struct GenConfig {
  // Latent geometry; copied from the VAE the generator is paired with.
  int T = 64;
  int t_c = 64;
  int H = 8;
  int W = 8;
  int D = 8;
  int frame_channels = 32;

  nn::AttentionConfig nn{128, 4, 4, 3, 1e-6};
  int fourier_freqs = 16;
  double fourier_sigma = 1.0;
  std::uint64_t fourier_seed = 29;
  int n_labels = 8;
  /// Frame-dropout probability and frame-feature noise during training.
  double p_drop = 0.1;
  double sigma_aug = 0.05;
  /// Rotary positions on latent tokens; false gives the no-PE ablation.
  bool grid_rope = true;
  double rope_base = 1e4;
  double rope_spatial_scale = 16.0;

  int T_z() const { return T / t_c; }
  int latent_tokens() const { return T_z() * H * W; }
  void validate() const;
  /// Copies geometry from a VAE config and keeps the remaining defaults.
  static GenConfig for_vae(const vae::VaeConfig& v);
};

std::string to_json(const GenConfig& cfg);
GenConfig gen_config_from_json(const std::string& text, const std::string& path_prefix = "");

struct GenLayers {
  nn::Linear z_in;      // D -> d
  nn::Mlp t_embed;      // F(t) -> d
  nn::Linear frame_in;  // D_f -> d
  nn::Mlp poke_embed;   // F(target x) | F(target y) | F(t* / T) -> d
  int label_table = -1; // n_labels x d
  std::vector<nn::AttentionBlock> self_blocks;
  std::vector<nn::AttentionBlock> cross_blocks;
  std::vector<nn::FeedForward> ffn;
  nn::RmsNorm out_norm;
  nn::Linear out;       // d -> D
};

class MotionGenerator {
 public:
  static MotionGenerator create(const GenConfig& cfg, std::uint64_t seed);

  const GenConfig& config() const { return cfg_; }
  const GenLayers& layers() const { return layers_; }
  const nn::FourierSpec& fourier() const { return fourier_; }
  nn::ParamStore<float>& params() { return params_; }
  const nn::ParamStore<float>& params() const { return params_; }
  const LatentStats& stats() const { return stats_; }
  void set_stats(LatentStats s);

  /// Hash of the VAE checkpoint this generator was trained against, and
  /// where that checkpoint was loaded from (informational).
  const std::string& vae_hash() const { return vae_hash_; }
  const std::string& vae_path() const { return vae_path_; }
  void bind_vae(std::string hash, std::string path);
  /// ConfigError unless `vae` is the model this generator was trained on.
  void check_vae(const vae::MotionVae& vae) const;

  nn::Checkpoint to_checkpoint() const;
  static MotionGenerator from_checkpoint(const nn::Checkpoint& ck);
  void save(const std::filesystem::path& path) const;
  static MotionGenerator load(const std::filesystem::path& path);
  std::string hash() const;

 private:
  GenConfig cfg_;
  GenLayers layers_;
  nn::FourierSpec fourier_;
  nn::ParamStore<float> params_;
  LatentStats stats_;
  std::string vae_hash_;
  std::string vae_path_;
};

/// Condition tokens: one per poke, then one for the label. Frame tokens
/// are not included (they are built by the vector field). RangeError when a
/// poke leaves the horizon or the unit box.
Matrix<double> embed_condition(const Condition& c, const MotionGenerator& model);

/// Latent token positions fed to the rotary embedding, rows (t_z, h, w).
Matrix<double> latent_token_positions(const GenConfig& cfg);

/// Velocity in whitened latent space; output has the shape of state.z_t.
template <typename T>
Matrix<double> vfield(const MotionGenerator& model, const nn::ParamStore<T>& ps, const FlowState& state,
                      const Condition& c);
inline Matrix<double> vfield(const FlowState& state, const Condition& c, const MotionGenerator& model) {
  return vfield(model, model.params(), state, c);
}

/// Counts vector-field token work: latent tokens per call.
int vfield_token_count(const GenConfig& cfg);

struct FmExample {
  Matrix<double> z1;  // whitened target latent
  Condition cond;
};

/// The interpolation time and noise used for batch item `index`.
struct FmDraw {
  double t = 0.0;
  Matrix<double> z0;
  bool drop_frame = false;
  Matrix<double> frame_noise;  // empty when the frame is absent
};
FmDraw fm_draw(const GenConfig& cfg, const FmExample& ex, std::uint64_t seed, std::size_t index);

using VectorField = std::function<Matrix<double>(const FlowState&, const Condition&)>;

/// Flow-matching loss for any field: mean over items of the mean squared
/// difference to z1 - z0, with the draws of fm_draw.
double fm_loss_with(const VectorField& field, const GenConfig& cfg, const std::vector<FmExample>& batch,
                    std::uint64_t seed);

template <typename T>
nn::Var<T> fm_loss_graph(nn::Graph<T>& g, const MotionGenerator& model, const nn::ParamStore<T>& ps,
                         const FmExample& ex, std::uint64_t seed, std::size_t index);

double fm_loss(const std::vector<FmExample>& batch, const MotionGenerator& model, std::uint64_t seed);

/// Euler integration from t = 0 to 1 in nfe equal steps. NumericError with
/// the step index on a non-finite state.
Matrix<double> euler_integrate(Matrix<double> z, int nfe,
                               const std::function<Matrix<double>(const Matrix<double>&, double)>& field);

/// Draws z0 ~ N(0, I) from the seed, integrates the model field and
/// un-whitens the result.
vae::LatentGrid sample(const MotionGenerator& model, const Condition& c, int nfe, std::uint64_t seed);
/// The initial noise used by sample() for a given seed.
Matrix<double> sample_noise(const GenConfig& cfg, std::uint64_t seed);

/// Emits Poke(start, positions[t*], t*) for each track and t*.
std::vector<Poke> tracks_to_pokes(const track::TrackSet& ts, const std::vector<int>& t_stars);

/// One generator training item: the posterior-mean latent of a scene, its
/// tracks (pokes are drawn from them) and the conditioning context.
struct GenExample {
  vae::LatentGrid z1;
  track::TrackSet tracks;
  std::shared_ptr<const vae::FrameEmbedding> frame;
  std::optional<int> label;
};

struct GenTrainConfig {
  int steps = 2000;
  int batch_size = 16;
  nn::AdamWConfig optim{};
  int log_every = 50;
  std::uint64_t seed = 0;
  /// Share of items trained without pokes.
  double p_no_pokes = 0.3;
  int max_pokes = 4;
  /// Share of pokes placed at the final frame (others use a uniform t*).
  double p_end_frame = 0.5;
  /// Share of items keeping their label.
  double p_label = 0.5;
};

struct GenTrainResult {
  std::vector<double> log;
  std::vector<int> log_steps;
};

/// Draws the training condition of one item.
Condition training_condition(const GenExample& ex, const GenTrainConfig& tc, std::uint64_t seed);

/// Computes LatentStats from the corpus, then trains in place. Writes
/// `<out_dir>/gen.ckpt` and `<out_dir>/gen_loss.csv` when out_dir is set.
GenTrainResult train_generator(MotionGenerator& model, const std::vector<GenExample>& corpus,
                               const GenTrainConfig& tc, const std::filesystem::path& out_dir = {});

}  // namespace zipmo::gen
