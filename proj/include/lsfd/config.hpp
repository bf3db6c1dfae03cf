#pragma once

#include "lsfd/segkit.hpp"
#include "lsfd/synthvid.hpp"
#include "lsfd/trainkit.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lsfd {

struct EvalConfig {
  ProbeConfig probe;
  TcnConfig tcn;
  int seg_window = 16;
  int stability_clip = 16;
  std::vector<int> frame_counts{1, 2, 4, 8};
  bool svg = false;
};

/// Everything a command needs. One seed drives corpus generation, model
/// initialization, view sampling and the probes.
struct RunConfig {
  std::uint64_t seed = 1;
  SynthConfig corpus;
  TrainConfig train;
  EvalConfig eval;
};

/// Sets one key from its textual value. Throws E_CONFIG naming the key when
/// the key is unknown or the value does not parse.
void set_key(RunConfig& config, const std::string& key, const std::string& value);

/// All keys in sorted order with their current values.
std::map<std::string, std::string> resolved(const RunConfig& config);
std::vector<std::string> known_keys();

/// `key = value` lines; `#` starts a comment; blank lines ignored.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin = "config");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Sorted `key = value` lines, newline-terminated.
std::string echo(const RunConfig& config);

/// 16 hex digits of FNV-1a over `text`.
std::string content_hash(const std::string& text);
std::string file_hash(const std::filesystem::path& path);

/// Shortest round-trip text for a double.
std::string format_double(double v);

}  // namespace lsfd
