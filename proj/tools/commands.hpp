#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace zipmo::cli {

struct Invocation {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
};

/// Reads and schema-checks a command config. SchemaError (field path) on a
/// violation, MissingFileError when the file is absent.
std::string load_config(const std::filesystem::path& path, const std::string& schema_name);

void cmd_synth(const Invocation& inv);
void cmd_train_vae(const Invocation& inv);
void cmd_train_gen(const Invocation& inv);
void cmd_eval(const Invocation& inv);
void cmd_sample(const Invocation& inv);
void cmd_ablate_compression(const Invocation& inv);

struct ServeOptions {
  std::string addr = "127.0.0.1:8080";
  std::filesystem::path model;
  std::filesystem::path vae;
  std::filesystem::path scenes;
  std::string cors_origin = "*";
};
void cmd_serve(const ServeOptions& opt);

/// Full command line; returns the process exit code (0 ok, 1 runtime
/// failure, 2 schema or usage error, 3 missing file).
int run(int argc, char** argv);

}  // namespace zipmo::cli
