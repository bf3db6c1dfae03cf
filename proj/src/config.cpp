#include "lsfd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace lsfd {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw Error(ErrorCode::Config, "bad value '" + value + "' for key '" + key + "' (expected " + expected + ")");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto r = std::from_chars(value.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) bad_value(key, value, std::is_integral_v<T> ? "an integer" : "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, trim(item)));
  if (out.empty()) bad_value(key, value, "a comma-separated integer list");
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
Field number_field(Access access) {
  return {[access](RunConfig& c, const std::string& k, const std::string& v) { access(c) = parse_number<T>(k, v); },
          [access](const RunConfig& c) {
            const T value = access(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return format_double(value);
            else return std::to_string(value);
          }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
#define LSFD_INT(key, expr) f[key] = number_field<int>([](RunConfig& c) -> int& { return c.expr; })
#define LSFD_DBL(key, expr) f[key] = number_field<double>([](RunConfig& c) -> double& { return c.expr; })
    f["seed"] = number_field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.seed; });

    LSFD_INT("corpus.backgrounds", corpus.backgrounds);
    LSFD_INT("corpus.shapes", corpus.shapes);
    LSFD_INT("corpus.phases", corpus.phases);
    LSFD_INT("corpus.colors", corpus.colors);
    LSFD_INT("corpus.frames", corpus.frames);
    LSFD_INT("corpus.height", corpus.height);
    LSFD_INT("corpus.width", corpus.width);
    LSFD_INT("corpus.min_phase_len", corpus.min_phase_len);
    LSFD_INT("corpus.max_phase_len", corpus.max_phase_len);
    LSFD_INT("corpus.n_train", corpus.n_train);
    LSFD_INT("corpus.n_test", corpus.n_test);
    LSFD_DBL("corpus.velocity", corpus.velocity);
    LSFD_DBL("corpus.scale_rate", corpus.scale_rate);
    LSFD_DBL("corpus.base_radius", corpus.base_radius);

    LSFD_INT("train.n", train.n);
    LSFD_INT("train.l", train.l);
    LSFD_INT("train.stride", train.stride);
    LSFD_INT("train.batch_size", train.batch_size);
    LSFD_INT("train.epochs", train.epochs);
    LSFD_DBL("train.lr", train.lr);
    LSFD_DBL("train.weight_decay", train.weight_decay);
    LSFD_DBL("train.momentum", train.momentum);
    LSFD_DBL("train.tau", train.tau);
    LSFD_INT("train.bank_capacity", train.bank_capacity);
    LSFD_INT("train.plateau_patience", train.plateau_patience);
    LSFD_DBL("train.plateau_factor", train.plateau_factor);
    LSFD_DBL("train.plateau_rel_tol", train.plateau_rel_tol);
    LSFD_INT("train.val_videos", train.val_videos);
    f["train.aggregator"] = {
        [](RunConfig& c, const std::string&, const std::string& v) { c.train.aggregator = parse_aggregator(v); },
        [](const RunConfig& c) { return to_string(c.train.aggregator); }};
    f["train.loss_flags"] = {
        [](RunConfig& c, const std::string&, const std::string& v) { c.train.loss_flags = parse_loss_flags(v); },
        [](const RunConfig& c) { return to_string(c.train.loss_flags); }};
    f["train.start_policy"] = {[](RunConfig& c, const std::string& k, const std::string& v) {
                                 if (v == "uniform") c.train.start_policy = StartPolicy::Uniform;
                                 else if (v == "centered") c.train.start_policy = StartPolicy::Centered;
                                 else bad_value(k, v, "uniform or centered");
                               },
                               [](const RunConfig& c) {
                                 return std::string(c.train.start_policy == StartPolicy::Centered ? "centered"
                                                                                                  : "uniform");
                               }};

    LSFD_INT("encoder.c1", train.encoder.c1);
    LSFD_INT("encoder.c2", train.encoder.c2);
    LSFD_INT("encoder.feature_dim", train.encoder.feature_dim);
    f["encoder.final_relu"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.train.encoder.final_relu = parse_bool(k, v); },
        [](const RunConfig& c) { return std::string(c.train.encoder.final_relu ? "true" : "false"); }};

    LSFD_DBL("aug.min_area", train.aug.min_area);
    LSFD_DBL("aug.max_area", train.aug.max_area);
    LSFD_DBL("aug.min_aspect", train.aug.min_aspect);
    LSFD_DBL("aug.max_aspect", train.aug.max_aspect);
    LSFD_INT("aug.out_h", train.aug.out_h);
    LSFD_INT("aug.out_w", train.aug.out_w);
    LSFD_DBL("aug.hflip_p", train.aug.hflip_p);
    LSFD_DBL("aug.jitter_p", train.aug.jitter_p);
    LSFD_DBL("aug.brightness", train.aug.brightness);
    LSFD_DBL("aug.contrast", train.aug.contrast);
    LSFD_DBL("aug.saturation", train.aug.saturation);
    LSFD_DBL("aug.hue", train.aug.hue);
    LSFD_DBL("aug.color_drop_p", train.aug.color_drop_p);

    LSFD_INT("eval.probe_epochs", eval.probe.epochs);
    LSFD_DBL("eval.probe_lr", eval.probe.lr);
    LSFD_INT("eval.tcn_hidden", eval.tcn.hidden);
    LSFD_INT("eval.tcn_layers", eval.tcn.layers);
    LSFD_INT("eval.tcn_epochs", eval.tcn.epochs);
    LSFD_INT("eval.tcn_batch_size", eval.tcn.batch_size);
    LSFD_DBL("eval.tcn_lr", eval.tcn.lr);
    LSFD_INT("eval.tcn_plateau_patience", eval.tcn.plateau_patience);
    LSFD_DBL("eval.tcn_plateau_factor", eval.tcn.plateau_factor);
    LSFD_INT("eval.seg_window", eval.seg_window);
    LSFD_INT("eval.stability_clip", eval.stability_clip);
    f["eval.frame_counts"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.frame_counts = parse_int_list(k, v); },
        [](const RunConfig& c) {
          std::string s;
          for (int n : c.eval.frame_counts) s += (s.empty() ? "" : ",") + std::to_string(n);
          return s;
        }};
    f["eval.svg"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.eval.svg = parse_bool(k, v); },
                     [](const RunConfig& c) { return std::string(c.eval.svg ? "true" : "false"); }};
#undef LSFD_INT
#undef LSFD_DBL
    return f;
  }();
  return table;
}

}  // namespace

void set_key(RunConfig& config, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw Error(ErrorCode::Config, "unknown config key '" + key + "'");
  try {
    it->second.set(config, key, value);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Config) throw;
    const std::string msg = e.what();
    if (msg.find("'" + key + "'") != std::string::npos) throw;
    throw Error(ErrorCode::Config, "key '" + key + "': " + msg);
  }
}

std::map<std::string, std::string> resolved(const RunConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(config);
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [key, field] : fields()) out.push_back(key);
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::Config, origin + ":" + std::to_string(number) + ": expected key = value");
    }
    set_key(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(config, buf.str(), path.string());
}

std::string echo(const RunConfig& config) {
  std::string out;
  for (const auto& [key, value] : resolved(config)) out += key + " = " + value + "\n";
  return out;
}

std::string content_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return content_hash(buf.str());
}

}  // namespace lsfd
