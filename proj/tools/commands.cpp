#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <regex>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "zipmo/errors.hpp"
#include "zipmo/evalkit.hpp"
#include "zipmo/hash.hpp"
#include "zipmo/motiongen.hpp"
#include "zipmo/motionvae.hpp"
#include "zipmo/pipeline.hpp"
#include "zipmo/random.hpp"
#include "zipmo/schema.hpp"
#include "zipmo/service.hpp"
#include "zipmo/synthkin.hpp"

namespace zipmo::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingFileError("file not found: " + p.string());
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw MissingFileError("directory not found: " + p.string());
}

fs::path out_dir(const Invocation& inv) { return inv.out.empty() ? fs::path(".") : inv.out; }

std::uint64_t seed_of(const Invocation& inv, const json& cfg) {
  if (inv.seed) return *inv.seed;
  return cfg.value("seed", std::uint64_t{0});
}

nn::AdamWConfig read_optim(const json& t, int steps) {
  nn::AdamWConfig o;
  o.lr = t.value("lr", o.lr);
  o.weight_decay = t.value("weight_decay", o.weight_decay);
  o.warmup_steps = t.value("warmup_steps", o.warmup_steps);
  o.clip_norm = t.value("clip_norm", o.clip_norm);
  o.beta1 = t.value("beta1", o.beta1);
  o.beta2 = t.value("beta2", o.beta2);
  o.decay_steps = steps;
  return o;
}

vae::VaeTrainConfig read_vae_train(const json& t, std::uint64_t seed) {
  vae::VaeTrainConfig tc;
  tc.steps = t.value("steps", tc.steps);
  tc.batch_size = t.value("batch_size", tc.batch_size);
  tc.tracks_per_example = t.value("tracks_per_example", 8);
  tc.log_every = t.value("log_every", 50);
  tc.optim = read_optim(t, tc.steps);
  tc.seed = seed;
  return tc;
}

gen::GenTrainConfig read_gen_train(const json& t, std::uint64_t seed) {
  gen::GenTrainConfig tc;
  tc.steps = t.value("steps", tc.steps);
  tc.batch_size = t.value("batch_size", tc.batch_size);
  tc.log_every = t.value("log_every", tc.log_every);
  tc.p_no_pokes = t.value("p_no_pokes", tc.p_no_pokes);
  tc.max_pokes = t.value("max_pokes", tc.max_pokes);
  tc.p_end_frame = t.value("p_end_frame", tc.p_end_frame);
  tc.p_label = t.value("p_label", tc.p_label);
  tc.optim = read_optim(t, tc.steps);
  tc.seed = seed;
  return tc;
}

struct Item {
  std::string stem;
  synth::Scenario scenario;
};

std::vector<Item> load_dataset(const fs::path& dir, int max_scenes) {
  require_dir(dir);
  std::vector<Item> items;
  for (const auto& stem : pipeline::list_scenes(dir)) {
    if (max_scenes > 0 && static_cast<int>(items.size()) >= max_scenes) break;
    items.push_back({stem, synth::load_scenario(dir, stem)});
  }
  if (items.empty()) throw MissingFileError("no scenarios found in " + dir.string());
  return items;
}

GrayImage raster_at(const synth::Scenario& s, int res) {
  if (s.raster.width == res && s.raster.height == res) return s.raster;
  return synth::rasterize(s.family, s.params, res);
}

/// VaeConfig from an optional override block on top of a preset; the
/// horizon follows the data unless set explicitly.
vae::VaeConfig build_vae_config(const json& cfg, int data_T) {
  const auto preset = cfg.value("preset", std::string("desk"));
  auto base = json::parse(vae::to_json(preset == "full" ? vae::full_config() : vae::desk_config()));
  const json over = cfg.value("vae", json::object());
  if (!over.contains("T")) base["T"] = data_T;
  if (!over.contains("t_c") && base["t_c"].get<int>() > data_T) base["t_c"] = data_T;
  base.merge_patch(over);
  return vae::vae_config_from_json(base.dump(), "vae");
}

/// Keeps the first tracks that fit the encoder's token budget.
track::TrackSet fit_budget(const track::TrackSet& ts, const vae::VaeConfig& c) {
  const int n = std::max(1, c.max_track_tokens / std::max(1, ts.horizon()));
  if (ts.size() <= n) return ts;
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  return ts.subset(idx);
}

std::vector<vae::VaeExample> vae_examples(const std::vector<Item>& items, const vae::VaeConfig& c) {
  std::vector<vae::VaeExample> out;
  for (const auto& it : items) {
    if (it.scenario.tracks.horizon() != c.T)
      throw ConfigError("scenario " + it.stem + " has T = " + std::to_string(it.scenario.tracks.horizon()) +
                        ", the VAE expects " + std::to_string(c.T));
    out.push_back({it.scenario.tracks, raster_at(it.scenario, c.frame.resolution), nullptr});
  }
  return out;
}

std::vector<gen::GenExample> latent_corpus(const std::vector<Item>& items, const vae::MotionVae& vae) {
  std::vector<gen::GenExample> out;
  for (const auto& it : items) {
    auto frame = std::make_shared<const vae::FrameEmbedding>(pipeline::scene_frame(it.scenario, vae));
    const auto post = vae::encode(fit_budget(it.scenario.tracks, vae.config()), *frame, vae);
    out.push_back({vae::mean_latent(post), it.scenario.tracks, frame, it.scenario.label});
  }
  return out;
}

gen::GenConfig build_gen_config(const json& over, const vae::VaeConfig& vc) {
  auto base = json::parse(gen::to_json(gen::GenConfig::for_vae(vc)));
  base.merge_patch(over);
  auto g = gen::gen_config_from_json(base.dump(), "gen");
  if (g.T != vc.T || g.t_c != vc.t_c || g.H != vc.H || g.W != vc.W || g.D != vc.D ||
      g.frame_channels != vc.frame.channels)
    throw SchemaError("gen", "latent geometry must match the VAE checkpoint");
  return g;
}

/// End-frame pokes on up to `count` moving tracks chosen by seed.
std::vector<gen::Poke> choose_pokes(const track::TrackSet& ts, int count, std::uint64_t seed) {
  std::vector<int> moving;
  for (int i = 0; i < ts.size(); ++i)
    if (track::motion_variance(ts[static_cast<std::size_t>(i)]) > 1e-8) moving.push_back(i);
  if (moving.empty())
    for (int i = 0; i < ts.size(); ++i) moving.push_back(i);
  Rng rng(seed, 0x706b);
  for (std::size_t k = 0; k + 1 < moving.size(); ++k)
    std::swap(moving[k], moving[k + static_cast<std::size_t>(rng.index(static_cast<int>(moving.size() - k)))]);
  moving.resize(std::min(moving.size(), static_cast<std::size_t>(count)));
  return gen::tracks_to_pokes(ts.subset(moving), {ts.horizon() - 1});
}

json pokes_json(const std::vector<gen::Poke>& pokes) {
  json a = json::array();
  for (const auto& p : pokes)
    a.push_back({{"anchor", {p.anchor.x, p.anchor.y}}, {"target", {p.target.x, p.target.y}}, {"t_star", p.t_star}});
  return a;
}

std::vector<gen::Poke> pokes_from_json(const json& a) {
  std::vector<gen::Poke> out;
  for (const auto& p : a)
    out.push_back({{p.at("anchor").at(0).get<double>(), p.at("anchor").at(1).get<double>()},
                   {p.at("target").at(0).get<double>(), p.at("target").at(1).get<double>()},
                   p.at("t_star").get<int>()});
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string load_config(const fs::path& path, const std::string& schema_name) {
  const auto text = read_file(path);
  try {
    schema::validate(text, schema::builtin(schema_name));
  } catch (const ParseError& e) {
    throw SchemaError("<root>", e.what());
  }
  return text;
}

// ---------------------------------------------------------------------------

void cmd_synth(const Invocation& inv) {
  const json cfg = json::parse(load_config(inv.config, "synth"));
  const auto seed = seed_of(inv, cfg);
  const auto dir = out_dir(inv);
  synth::SynthOptions opt;
  opt.resolution = cfg.value("resolution", opt.resolution);
  opt.background_fraction = cfg.value("background_fraction", opt.background_fraction);
  opt.goal_weights = cfg.value("goal_weights", opt.goal_weights);
  opt.omega = cfg.value("omega", opt.omega);
  std::vector<synth::Family> families;
  for (const auto& f : cfg.at("families")) families.push_back(synth::parse_family(f.get<std::string>()));
  const int n = cfg.at("n_scenes").get<int>();
  const int n_tracks = cfg.at("n_tracks").get<int>();
  const int T = cfg.at("T").get<int>();
  const auto threshold = cfg.contains("var_threshold") ? std::optional<double>(cfg["var_threshold"].get<double>())
                                                        : std::nullopt;
  int written = 0, skipped = 0;
  for (int i = 0; i < n; ++i) {
    const auto fam = families[static_cast<std::size_t>(i) % families.size()];
    auto s = synth::generate(fam, mix_seed(seed, static_cast<std::uint64_t>(i)), n_tracks, T, opt);
    if (threshold) {
      auto kept = track::filter_static(s.tracks, *threshold);
      if (kept.is_empty()) {
        ++skipped;
        continue;
      }
      s.tracks = std::move(kept);
    }
    std::ostringstream stem;
    stem << "scene_" << std::setw(5) << std::setfill('0') << i;
    synth::save_scenario(s, dir, stem.str());
    ++written;
  }
  json index{{"n_scenes", written}, {"skipped", skipped}, {"seed", seed}, {"config", cfg}};
  write_file(dir / "index.json", index.dump(2));
  spdlog::info("synth: wrote {} scenarios to {} ({} skipped by the variance filter)", written, dir.string(), skipped);
}

void cmd_train_vae(const Invocation& inv) {
  const json cfg = json::parse(load_config(inv.config, "train_vae"));
  const auto seed = seed_of(inv, cfg);
  const auto items = load_dataset(cfg.at("data").get<std::string>(), cfg.value("max_scenes", 0));
  const auto vc = build_vae_config(cfg, items.front().scenario.tracks.horizon());
  const auto tc = read_vae_train(cfg.value("train", json::object()), seed);
  const auto data = vae_examples(items, vc);
  auto model = vae::MotionVae::create(vc, seed);
  spdlog::info("train-vae: {} scenarios, {} parameters, {} steps", data.size(), model.params().count(), tc.steps);
  const auto dir = out_dir(inv);
  vae::train_vae(model, data, tc, dir);
  write_file(dir / "train_vae.config.json", cfg.dump(2));
  spdlog::info("train-vae: checkpoint {} (hash {})", (dir / "vae.ckpt").string(), model.hash());
}

void cmd_train_gen(const Invocation& inv) {
  const json cfg = json::parse(load_config(inv.config, "train_gen"));
  const auto seed = seed_of(inv, cfg);
  const fs::path vae_path = cfg.at("vae_checkpoint").get<std::string>();
  const auto vae = vae::MotionVae::load(vae_path);
  const auto items = load_dataset(cfg.at("data").get<std::string>(), cfg.value("max_scenes", 0));
  const auto gc = build_gen_config(cfg.value("gen", json::object()), vae.config());
  const auto tc = read_gen_train(cfg.value("train", json::object()), seed);
  const auto corpus = latent_corpus(items, vae);
  auto model = gen::MotionGenerator::create(gc, seed);
  model.bind_vae(vae.hash(), fs::absolute(vae_path).string());
  spdlog::info("train-gen: {} latents, {} parameters, {} steps", corpus.size(), model.params().count(), tc.steps);
  const auto dir = out_dir(inv);
  gen::train_generator(model, corpus, tc, dir);
  write_file(dir / "train_gen.config.json", cfg.dump(2));
}

void cmd_sample(const Invocation& inv) {
  const json cfg = json::parse(load_config(inv.config, "sample"));
  const auto seed = seed_of(inv, cfg);
  const auto models = pipeline::ModelPair::load(cfg.at("generator").get<std::string>(), cfg.value("vae", std::string()));
  const auto items = load_dataset(cfg.at("scenes").get<std::string>(), cfg.value("max_scenes", 0));
  const auto dir = out_dir(inv);
  fs::create_directories(dir);
  const auto query_mode = cfg.value("queries", std::string("ground_truth"));
  const json pk = cfg.value("pokes", json::object());
  const auto poke_mode = pk.value("mode", std::string("none"));
  const int poke_count = pk.value("count", 1);
  json summary = json::object();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    const auto scene_seed = mix_seed(seed, i);
    pipeline::SampleRequest req;
    if (poke_mode == "end_frame") req.pokes = choose_pokes(it.scenario.tracks, poke_count, scene_seed);
    if (cfg.value("label", false)) req.label = it.scenario.label;
    req.queries = query_mode == "grid" ? pipeline::default_queries(req.pokes, cfg.value("grid", 16))
                                       : it.scenario.tracks.starts();
    req.num_samples = cfg.value("num_samples", 8);
    req.nfe = cfg.value("nfe", 10);
    req.seed = scene_seed;
    const auto frame = pipeline::scene_frame(it.scenario, models.vae);
    const auto res = pipeline::sample_and_decode(models, frame, req, it.stem);
    const track::PixelSpace space(it.scenario.raster.width, it.scenario.raster.height);
    for (std::size_t k = 0; k < res.samples.size(); ++k)
      track::save_tracks(res.samples[k], space, dir / (it.stem + ".sample_" + std::to_string(k) + ".tracks.json"));
    if (!req.pokes.empty()) write_file(dir / (it.stem + ".pokes.json"), pokes_json(req.pokes).dump(2));
    summary[it.stem] = {{"seed", scene_seed}, {"epe", res.epe}, {"num_pokes", req.pokes.size()}};
  }
  write_file(dir / "samples.json",
             json{{"model_hash", models.gen_hash}, {"vae_hash", models.vae_hash}, {"scenes", summary}}.dump(2));
  spdlog::info("sample: {} scenarios written to {}", items.size(), dir.string());
}

void cmd_eval(const Invocation& inv) {
  const json cfg = json::parse(load_config(inv.config, "eval"));
  const fs::path gt_dir = cfg.at("ground_truth").get<std::string>();
  const fs::path sm_dir = cfg.at("samples").get<std::string>();
  require_dir(sm_dir);
  const auto items = load_dataset(gt_dir, 0);
  const auto thresholds = cfg.value("pck_thresholds", eval::default_pck_thresholds());
  const int grid = cfg.value("pck_grid", 256);
  const std::regex sample_re(R"(^(.+)\.sample_(\d+)\.tracks\.json$)");

  eval::MetricReport rep;
  double min_sum = 0.0, mean_sum = 0.0, epe_sum = 0.0;
  int n_epe = 0, n_pck = 0;
  eval::PckResult pck_sum;
  pck_sum.thresholds = thresholds;
  pck_sum.fractions.assign(thresholds.size(), 0.0);
  std::ostringstream per_scene;
  per_scene << "scene,n_samples,min_mse,mean_mse,epe\n";

  std::map<std::string, std::vector<std::pair<int, fs::path>>> files;
  for (const auto& e : fs::directory_iterator(sm_dir)) {
    std::smatch m;
    const auto name = e.path().filename().string();
    if (std::regex_match(name, m, sample_re)) files[m[1].str()].emplace_back(std::stoi(m[2].str()), e.path());
  }
  for (const auto& it : items) {
    eval::SampleSet set;
    auto& list = files[it.stem];
    std::sort(list.begin(), list.end());
    for (const auto& [k, p] : list) set.samples.push_back(track::load_tracks(p).tracks);
    if (set.samples.empty()) {
      const auto single = sm_dir / (it.stem + ".tracks.json");
      if (!fs::exists(single)) throw MissingFileError("no samples for scene " + it.stem + " in " + sm_dir.string());
      set.samples.push_back(track::load_tracks(single).tracks);
    }
    const auto mm = eval::min_mean_mse(it.scenario.tracks, set);
    min_sum += mm.min;
    mean_sum += mm.mean;
    for (const auto& s : set.samples) {
      const auto p = eval::pck(it.scenario.tracks, s, thresholds, track::PixelSpace(grid, grid));
      for (std::size_t k = 0; k < thresholds.size(); ++k) pck_sum.fractions[k] += p.fractions[k];
      ++n_pck;
    }
    std::string epe_text;
    const auto pokes_path = sm_dir / (it.stem + ".pokes.json");
    if (fs::exists(pokes_path)) {
      const double e = eval::epe(pokes_from_json(json::parse(read_file(pokes_path))), set);
      epe_sum += e;
      ++n_epe;
      epe_text = fmt_double(e);
    }
    per_scene << it.stem << ',' << set.size() << ',' << fmt_double(mm.min) << ',' << fmt_double(mm.mean) << ','
              << epe_text << '\n';
    rep.n_samples += set.size();
  }
  rep.n_items = static_cast<int>(items.size());
  rep.min_mse = min_sum / rep.n_items;
  rep.mean_mse = mean_sum / rep.n_items;
  if (n_epe > 0) rep.epe = epe_sum / n_epe;
  for (auto& f : pck_sum.fractions) f /= n_pck;
  for (double f : pck_sum.fractions) pck_sum.delta_avg += f;
  pck_sum.delta_avg /= static_cast<double>(pck_sum.fractions.size());
  rep.pck = pck_sum;

  if (cfg.contains("knn")) {
    const auto vae = vae::MotionVae::load(cfg["knn"].at("vae_checkpoint").get<std::string>());
    std::vector<std::vector<double>> lat;
    std::vector<int> labels;
    for (const auto& it : items) {
      const auto frame = pipeline::scene_frame(it.scenario, vae);
      lat.push_back(vae::mean_latent(vae::encode(fit_budget(it.scenario.tracks, vae.config()), frame, vae)).flat());
      labels.push_back(it.scenario.label);
    }
    rep.knn_acc = eval::knn_accuracy(lat, labels, cfg["knn"].value("k", 1));
  }
  rep.config_json = cfg.dump();
  const auto dir = out_dir(inv);
  write_file(dir / "metrics.json", rep.to_json());
  write_file(dir / "metrics.csv", eval::MetricReport::csv_header() + "\n" + rep.csv_row("eval") + "\n");
  write_file(dir / "per_scene.csv", per_scene.str());
  spdlog::info("eval: {} scenes, min_mse {:.4f}, mean_mse {:.4f}", rep.n_items, rep.min_mse, rep.mean_mse);
}

void cmd_ablate_compression(const Invocation& inv) {
  const json cfg = json::parse(load_config(inv.config, "ablate_compression"));
  const auto seed = seed_of(inv, cfg);
  auto items = load_dataset(cfg.at("data").get<std::string>(), cfg.value("max_scenes", 0));
  const int n_eval = std::min<int>(cfg.value("eval_scenes", 20), static_cast<int>(items.size()) - 1);
  if (n_eval < 1) throw ConfigError("ablate-compression needs at least 2 scenarios");
  const std::vector<Item> eval_items(items.end() - n_eval, items.end());
  items.resize(items.size() - static_cast<std::size_t>(n_eval));
  const int num_samples = cfg.value("num_samples", 4);
  const int nfe = cfg.value("nfe", 10);
  const int reps = cfg.value("throughput_reps", 3);
  const int knn_k = cfg.value("knn_k", 1);
  const auto dir = out_dir(inv);
  std::ostringstream csv;
  csv << "t_c,latent_tokens,min_mse,mean_mse,pck,knn_acc,sample_throughput\n";
  for (const auto& tcj : cfg.at("t_c")) {
    const int t_c = tcj.get<int>();
    json vcfg = cfg;
    vcfg["vae"] = cfg.value("vae", json::object());
    vcfg["vae"]["t_c"] = t_c;
    const auto vc = build_vae_config(vcfg, items.front().scenario.tracks.horizon());
    const auto sub = dir / ("t_c_" + std::to_string(t_c));
    auto vae = vae::MotionVae::create(vc, seed);
    vae::train_vae(vae, vae_examples(items, vc), read_vae_train(cfg.value("vae_train", json::object()), seed), sub);
    const auto corpus = latent_corpus(items, vae);
    auto g = gen::MotionGenerator::create(build_gen_config(cfg.value("gen", json::object()), vc), seed);
    g.bind_vae(vae.hash(), fs::absolute(sub / "vae.ckpt").string());
    gen::train_generator(g, corpus, read_gen_train(cfg.value("gen_train", json::object()), seed), sub);
    const auto models = pipeline::ModelPair::from(vae, g);

    double min_sum = 0.0, mean_sum = 0.0, pck_sum = 0.0;
    for (std::size_t i = 0; i < eval_items.size(); ++i) {
      const auto& it = eval_items[i];
      const auto frame = pipeline::scene_frame(it.scenario, vae);
      pipeline::SampleRequest req;
      req.queries = it.scenario.tracks.starts();
      req.num_samples = num_samples;
      req.nfe = nfe;
      req.seed = mix_seed(seed, i);
      eval::SampleSet set;
      set.samples = pipeline::sample_and_decode(models, frame, req, it.stem).samples;
      const auto mm = eval::min_mean_mse(it.scenario.tracks, set);
      min_sum += mm.min;
      mean_sum += mm.mean;
      const auto gt = fit_budget(it.scenario.tracks, vc);
      const auto rec = vae::decode(gt.starts(), vae::mean_latent(vae::encode(gt, frame, vae)), frame, vae);
      pck_sum += eval::pck(gt, rec, eval::default_pck_thresholds()).delta_avg;
    }
    std::vector<std::vector<double>> lat;
    std::vector<int> labels;
    for (const auto& ex : corpus) {
      lat.push_back(ex.z1.flat());
      labels.push_back(*ex.label);
    }
    double knn = std::numeric_limits<double>::quiet_NaN();
    try {
      knn = eval::knn_accuracy(lat, labels, knn_k);
    } catch (const ArgumentError& e) {
      spdlog::warn("ablate-compression: kNN skipped: {}", e.what());
    }
    gen::Condition c;
    c.frame = std::make_shared<const vae::FrameEmbedding>(pipeline::scene_frame(eval_items.front().scenario, vae));
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) gen::sample(g, c, nfe, mix_seed(seed, 0x7470 + r));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double n = static_cast<double>(eval_items.size());
    csv << t_c << ',' << vc.latent_tokens() << ',' << fmt_double(min_sum / n) << ',' << fmt_double(mean_sum / n) << ','
        << fmt_double(pck_sum / n) << ',' << fmt_double(knn) << ',' << fmt_double(reps / secs) << '\n';
    spdlog::info("ablate-compression: t_c = {} done", t_c);
  }
  write_file(dir / "ablation.csv", csv.str());
}

void cmd_serve(const ServeOptions& opt) {
  auto models = pipeline::ModelPair::load(opt.model, opt.vae);
  auto scenes = service::Service::load_scenes(opt.scenes, models.vae);
  spdlog::info("serve: {} scenes, model {}", scenes.size(), models.gen_hash);
  service::ServiceOptions so;
  so.cors_origin = opt.cors_origin;
  const service::Service svc(std::move(models), std::move(scenes), so);
  service::HttpServer server(svc);
  const auto [host, port] = service::parse_addr(opt.addr);
  const int bound = server.bind(host, port);
  spdlog::info("serve: listening on {}:{}", host, bound);
  server.listen();
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"zipmo: latent motion VAE and poke-conditioned flow generator"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  ServeOptions serve;
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  struct Cmd {
    const char* name;
    const char* help;
    void (*fn)(const Invocation&);
  };
  const Cmd cmds[] = {
      {"synth", "generate synthetic scenarios", cmd_synth},
      {"train-vae", "train the trajectory VAE", cmd_train_vae},
      {"train-gen", "train the flow-matching generator", cmd_train_gen},
      {"eval", "score sample track files against ground truth", cmd_eval},
      {"sample", "sample and decode trajectories for scenes", cmd_sample},
      {"ablate-compression", "train and evaluate one model pair per t_c", cmd_ablate_compression},
  };
  std::vector<std::pair<CLI::App*, const Cmd*>> subs;
  for (const auto& c : cmds) {
    auto* s = app.add_subcommand(c.name, c.help);
    s->add_option("--config", inv.config, "JSON config")->required();
    s->add_option("--seed", seed, "overrides the config seed");
    s->add_option("--out", inv.out, "output directory");
    subs.emplace_back(s, &c);
  }
  auto* srv = app.add_subcommand("serve", "run the HTTP sampling service");
  srv->add_option("--addr", serve.addr, "host:port");
  srv->add_option("--model", serve.model, "generator checkpoint")->required();
  srv->add_option("--vae", serve.vae, "VAE checkpoint (default: path recorded in the generator)");
  srv->add_option("--scenes", serve.scenes, "scenario directory")->required();
  srv->add_option("--cors-origin", serve.cors_origin, "Access-Control-Allow-Origin value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  // Logs go to stderr; artifacts go to --out.
  auto logger = spdlog::get("zipmo");
  if (!logger) logger = spdlog::stderr_color_mt("zipmo");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));
  try {
    if (srv->parsed()) {
      cmd_serve(serve);
      return 0;
    }
    for (const auto& [s, c] : subs)
      if (s->parsed()) {
        if (s->count("--seed") > 0) inv.seed = seed;
        c->fn(inv);
      }
    return 0;
  } catch (const SchemaError& e) {
    spdlog::error("config error at {}", e.what());
    return 2;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const MissingFileError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace zipmo::cli
