#pragma once

// Config-driven experiment runner: strict JSON schema, defaults, artifacts
// (CSV/JSON) and a manifest per output directory.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nhsync::experiment {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// A validated, normalised experiment config. Parse errors throw
// Error(ErrorCode::Config) with the offending field path in the message.
class Config {
 public:
  static Config parse(std::string_view json_text);
  static Config load(const std::string& path);

  Config(const Config&);
  Config& operator=(const Config&);
  Config(Config&&) noexcept;
  Config& operator=(Config&&) noexcept;
  ~Config();

  // Pretty-printed normalised config with every default filled in.
  std::string normalized() const;

  std::string kind() const;
  std::string model() const;
  std::uint64_t seed() const;
  std::string output_dir() const;
  std::optional<std::size_t> threads() const;

  void set_seed(std::uint64_t seed);
  void set_output_dir(const std::string& dir);
  void set_threads(std::size_t threads);

  struct Impl;
  const Impl& impl() const { return *impl_; }

 private:
  explicit Config(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

struct RunResult {
  int exit_code = kExitOk;
  std::string output_dir;
  std::vector<std::string> artifacts;  // file names inside output_dir
  std::string message;                 // error text when exit_code != 0
  std::string error_name;
};

// Threads: explicit setting on the config, else NHSYNC_THREADS, else all
// cores for sweep kinds (tongue, aggregate) and 1 otherwise.
RunResult run(const Config& config);

std::size_t resolve_threads(const Config& config);

}  // namespace nhsync::experiment
