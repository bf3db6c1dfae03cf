#include "lsfd/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace lsfd {

using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kTrainStream = 12;
constexpr std::uint64_t kValStream = 13;
constexpr char kCheckpointMagic[8] = {'L', 'S', 'F', 'D', 'C', 'K', 'P', 'T'};

bool starts_with(const std::string& s, const std::string& prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

std::string policy_name(StartPolicy p) { return p == StartPolicy::Centered ? "centered" : "uniform"; }

StartPolicy parse_policy(const std::string& s) {
  if (s == "uniform") return StartPolicy::Uniform;
  if (s == "centered") return StartPolicy::Centered;
  throw Error(ErrorCode::Config, "unknown start policy '" + s + "'");
}

json shape_json(const Shape& s) {
  json a = json::array();
  for (Index e : s) a.push_back(e);
  return a;
}

// Loss terms of one sample; views drawn from `rng`.
LossTerms sample_loss(const TrainState& state, int id, const VideoClip& video, const ProjectedNegatives& negatives,
                      Rng rng, std::vector<Features>* key_out) {
  const TrainConfig& c = state.config;
  const MomentumPair& model = state.model;
  ViewSet views = sample_views(video, c.n, c.l, c.stride, c.start_policy, rng, c.aug);
  const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n)));

  std::vector<Features> shorts;
  if (c.loss_flags.stationary || c.loss_flags.non_stationary) {
    for (const auto& v : views.shorts) shorts.push_back(model.query.encoder.encode(v.clip));
  }
  Features query_long;
  if (c.loss_flags.instance) query_long = model.query.encoder.encode(views.long_a.clip);
  Features key_long;
  {
    NoGradGuard guard;
    key_long = model.key.encoder.encode(views.long_b.clip);
  }
  if (key_out) key_out->push_back(key_long);
  return total_loss(model.query, model.aggregator, shorts, j, query_long, key_long, negatives,
                    LossConfig{c.tau, c.loss_flags, id});
}

bool any_loss(const LossFlags& f) { return f.stationary || f.non_stationary || f.instance; }

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n, const std::filesystem::path& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorCode::Format, "checkpoint truncated: " + path.string());
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::Config, msg);
  };
  require(n >= 1, "n must be >= 1");
  require(l >= 1, "l must be >= 1");
  require(stride >= 1, "stride must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(lr > 0, "lr must be positive");
  require(weight_decay >= 0, "weight_decay must be >= 0");
  require(momentum >= 0 && momentum <= 1, "momentum must lie in [0,1]");
  require(tau > 0, "tau must be positive");
  require(bank_capacity >= 1, "bank_capacity must be >= 1");
  require(plateau_patience >= 1, "plateau_patience must be >= 1");
  require(plateau_factor > 1, "plateau_factor must exceed 1");
  require(val_videos >= 0, "val_videos must be >= 0");
  require(encoder.feature_dim >= 2 && encoder.feature_dim % 2 == 0, "feature_dim must be even");
  require(aug.out_h % 8 == 0 && aug.out_w % 8 == 0 && aug.out_h > 0 && aug.out_w > 0,
          "view size must be a positive multiple of 8");
}

ModelConfig TrainConfig::model_config() const { return ModelConfig{encoder, aggregator, n, momentum}; }

json to_json(const TrainConfig& c) {
  return json{{"n", c.n},
              {"l", c.l},
              {"stride", c.stride},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"momentum", c.momentum},
              {"tau", c.tau},
              {"bank_capacity", c.bank_capacity},
              {"aggregator", to_string(c.aggregator)},
              {"loss_flags", to_string(c.loss_flags)},
              {"seed", c.seed},
              {"plateau_patience", c.plateau_patience},
              {"plateau_factor", c.plateau_factor},
              {"plateau_rel_tol", c.plateau_rel_tol},
              {"val_videos", c.val_videos},
              {"start_policy", policy_name(c.start_policy)},
              {"encoder",
               {{"c1", c.encoder.c1},
                {"c2", c.encoder.c2},
                {"feature_dim", c.encoder.feature_dim},
                {"final_relu", c.encoder.final_relu}}},
              {"aug",
               {{"min_area", c.aug.min_area},
                {"max_area", c.aug.max_area},
                {"min_aspect", c.aug.min_aspect},
                {"max_aspect", c.aug.max_aspect},
                {"out_h", c.aug.out_h},
                {"out_w", c.aug.out_w},
                {"hflip_p", c.aug.hflip_p},
                {"jitter_p", c.aug.jitter_p},
                {"brightness", c.aug.brightness},
                {"contrast", c.aug.contrast},
                {"saturation", c.aug.saturation},
                {"hue", c.aug.hue},
                {"color_drop_p", c.aug.color_drop_p}}}};
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig c;
    c.n = j.at("n");
    c.l = j.at("l");
    c.stride = j.at("stride");
    c.batch_size = j.at("batch_size");
    c.epochs = j.at("epochs");
    c.lr = j.at("lr");
    c.weight_decay = j.at("weight_decay");
    c.momentum = j.at("momentum");
    c.tau = j.at("tau");
    c.bank_capacity = j.at("bank_capacity");
    c.aggregator = parse_aggregator(j.at("aggregator"));
    c.loss_flags = parse_loss_flags(j.at("loss_flags"));
    c.seed = j.at("seed");
    c.plateau_patience = j.at("plateau_patience");
    c.plateau_factor = j.at("plateau_factor");
    c.plateau_rel_tol = j.at("plateau_rel_tol");
    c.val_videos = j.at("val_videos");
    c.start_policy = parse_policy(j.at("start_policy"));
    const json& e = j.at("encoder");
    c.encoder = EncoderConfig{e.at("c1"), e.at("c2"), e.at("feature_dim"), e.at("final_relu")};
    const json& a = j.at("aug");
    c.aug.min_area = a.at("min_area");
    c.aug.max_area = a.at("max_area");
    c.aug.min_aspect = a.at("min_aspect");
    c.aug.max_aspect = a.at("max_aspect");
    c.aug.out_h = a.at("out_h");
    c.aug.out_w = a.at("out_w");
    c.aug.hflip_p = a.at("hflip_p");
    c.aug.jitter_p = a.at("jitter_p");
    c.aug.brightness = a.at("brightness");
    c.aug.contrast = a.at("contrast");
    c.aug.saturation = a.at("saturation");
    c.aug.hue = a.at("hue");
    c.aug.color_drop_p = a.at("color_drop_p");
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("train config: ") + e.what());
  }
}

void adam_step(const NamedTensors& params, OptimState& opt) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) throw Error(ErrorCode::Value, "adam_step: missing gradient for " + name);
  }
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (const auto& [name, p] : params) {
    Tensor t = p;
    Vector& theta = t.mutable_data();
    const Vector g = p.grad() + opt.weight_decay * theta;
    auto [mi, fresh_m] = opt.m.try_emplace(name, Vector::Zero(theta.size()));
    auto [vi, fresh_v] = opt.v.try_emplace(name, Vector::Zero(theta.size()));
    Vector& m = mi->second;
    Vector& v = vi->second;
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g.cwiseProduct(g);
    theta.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
  }
}

void zero_grad(const NamedTensors& params) {
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
}

double plateau_schedule(std::span<const double> history, double lr, int patience, double factor, double rel_tol) {
  if (history.empty()) return lr;
  double best = history[0];
  int bad = 0;
  bool fired = false;
  for (std::size_t i = 1; i < history.size(); ++i) {
    fired = false;
    if (history[i] < best - rel_tol * std::abs(best)) {
      best = history[i];
      bad = 0;
    } else if (++bad >= patience) {
      fired = true;
      bad = 0;
    }
  }
  return fired ? lr / factor : lr;
}

json to_json(const EpochStats& s) {
  return json{{"epoch", s.epoch},
              {"train_total", s.train_total},
              {"train_stationary", s.train_stationary},
              {"train_non_stationary", s.train_non_stationary},
              {"train_instance", s.train_instance},
              {"val_total", s.val_total},
              {"val_stationary", s.val_stationary},
              {"val_non_stationary", s.val_non_stationary},
              {"val_instance", s.val_instance},
              {"lr", s.lr},
              {"bank_size", s.bank_size},
              {"steps", s.steps}};
}

EpochStats epoch_stats_from_json(const json& j) {
  EpochStats s;
  s.epoch = j.at("epoch");
  s.train_total = j.at("train_total");
  s.train_stationary = j.at("train_stationary");
  s.train_non_stationary = j.at("train_non_stationary");
  s.train_instance = j.at("train_instance");
  s.val_total = j.at("val_total");
  s.val_stationary = j.at("val_stationary");
  s.val_non_stationary = j.at("val_non_stationary");
  s.val_instance = j.at("val_instance");
  s.lr = j.at("lr");
  s.bank_size = j.at("bank_size");
  s.steps = j.at("steps");
  return s;
}

TrainState make_train_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.model = make_model(config.model_config(), config.seed);
  s.bank = MemoryBank(config.bank_capacity, config.encoder.feature_dim / 2);
  s.opt.lr = config.lr;
  s.opt.weight_decay = config.weight_decay;
  return s;
}

NamedTensors active_parameters(const TrainState& state) {
  const LossFlags& f = state.config.loss_flags;
  NamedTensors out;
  if (!any_loss(f)) return out;
  for (const auto& entry : state.model.trainable()) {
    const std::string& name = entry.first;
    const bool keep = starts_with(name, "query.encoder.") || (f.stationary && starts_with(name, "query.head_s.")) ||
                      (f.non_stationary && (starts_with(name, "query.head_n.") || starts_with(name, "aggregator."))) ||
                      (f.instance && starts_with(name, "query.head_i."));
    if (keep) out.push_back(entry);
  }
  return out;
}

EpochStats train_epoch(const Corpus& corpus, TrainState& state) {
  const TrainConfig& c = state.config;
  const Rng root(c.seed);
  const auto epoch = static_cast<std::uint64_t>(state.epoch);

  std::vector<int> order = corpus.train;
  Rng shuffle = root.split(kShuffleStream).split(epoch);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

  const NamedTensors active = active_parameters(state);
  const bool learn = any_loss(c.loss_flags);
  const Rng sample_root = root.split(kTrainStream).split(epoch);

  EpochStats stats;
  stats.epoch = state.epoch + 1;
  stats.lr = state.opt.lr;
  std::size_t samples = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(c.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(c.batch_size));
    const ProjectedNegatives negatives = project_negatives(bank_snapshot(state.bank), state.model.query);

    std::vector<Features> keys;
    std::vector<int> owners;
    Tensor batch_loss = Tensor::scalar(0.0);
    for (std::size_t i = start; i < end; ++i) {
      const int id = order[i];
      LossTerms t = sample_loss(state, id, corpus.video(id), negatives,
                                sample_root.split(static_cast<std::uint64_t>(id)), &keys);
      owners.push_back(id);
      stats.train_total += t.total.item();
      stats.train_stationary += t.stationary.item();
      stats.train_non_stationary += t.non_stationary.item();
      stats.train_instance += t.instance.item();
      batch_loss = add(batch_loss, t.total);
    }
    samples += end - start;

    if (learn) {
      backward(scale(batch_loss, 1.0 / static_cast<double>(end - start)));
      adam_step(active, state.opt);
      zero_grad(state.model.trainable());
      momentum_update(state.model);
      ++stats.steps;
    }
    for (std::size_t i = 0; i < keys.size(); ++i) state.bank.push(keys[i].psi, keys[i].phi, owners[i]);
  }

  if (samples > 0) {
    const double inv = 1.0 / static_cast<double>(samples);
    stats.train_total *= inv;
    stats.train_stationary *= inv;
    stats.train_non_stationary *= inv;
    stats.train_instance *= inv;
  }
  const EpochStats val = validation_loss(corpus, state);
  stats.val_total = val.val_total;
  stats.val_stationary = val.val_stationary;
  stats.val_non_stationary = val.val_non_stationary;
  stats.val_instance = val.val_instance;
  stats.bank_size = state.bank.size();

  state.history.push_back(stats);
  ++state.epoch;
  std::vector<double> val_history;
  for (const auto& h : state.history) val_history.push_back(h.val_total);
  state.opt.lr = plateau_schedule(val_history, state.opt.lr, c.plateau_patience, c.plateau_factor, c.plateau_rel_tol);
  return stats;
}

EpochStats validation_loss(const Corpus& corpus, const TrainState& state) {
  NoGradGuard guard;
  const TrainConfig& c = state.config;
  std::vector<int> ids = corpus.test;
  if (c.val_videos > 0 && static_cast<int>(ids.size()) > c.val_videos) ids.resize(static_cast<std::size_t>(c.val_videos));
  const Rng val_root = Rng(c.seed).split(kValStream);
  if (ids.empty()) return EpochStats{};

  // Negatives are the keys of the other held-out videos, so the measure does
  // not move with the fill level of the training bank.
  MemoryBank held_out(static_cast<int>(ids.size()), state.bank.half_dim());
  for (int id : ids) {
    Rng rng = val_root.split(static_cast<std::uint64_t>(id));
    const ViewSet views = sample_views(corpus.video(id), c.n, c.l, c.stride, c.start_policy, rng, c.aug);
    const Features key = state.model.key.encoder.encode(views.long_b.clip);
    held_out.push(key.psi, key.phi, id);
  }
  const ProjectedNegatives negatives = project_negatives(bank_snapshot(held_out), state.model.query);

  EpochStats s;
  for (int id : ids) {
    LossTerms t = sample_loss(state, id, corpus.video(id), negatives, val_root.split(static_cast<std::uint64_t>(id)),
                              nullptr);
    s.val_total += t.total.item();
    s.val_stationary += t.stationary.item();
    s.val_non_stationary += t.non_stationary.item();
    s.val_instance += t.instance.item();
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  s.val_total *= inv;
  s.val_stationary *= inv;
  s.val_non_stationary *= inv;
  s.val_instance *= inv;
  return s;
}

void train(const Corpus& corpus, TrainState& state, const std::function<void(const TrainState&)>& on_epoch) {
  while (state.epoch < state.config.epochs) {
    train_epoch(corpus, state);
    if (on_epoch) on_epoch(state);
  }
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, const Vector*>> payload;
  json manifest = json::array();
  auto add_entry = [&](const std::string& name, const Shape& shape, const Vector* data) {
    manifest.push_back({{"name", name}, {"shape", shape_json(shape)}});
    payload.emplace_back(name, data);
  };

  for (const auto& [name, t] : state.model.all()) add_entry(name, t.shape(), &t.data());
  for (const auto& [name, t] : state.model.trainable()) {
    auto m = state.opt.m.find(name);
    auto v = state.opt.v.find(name);
    if (m == state.opt.m.end() || v == state.opt.v.end()) continue;
    add_entry("adam.m." + name, t.shape(), &m->second);
    add_entry("adam.v." + name, t.shape(), &v->second);
  }
  const Index k = state.bank.size(), d = state.bank.half_dim();
  Vector bank_psi(k * d), bank_phi(k * d), bank_owner(k);
  Index r = 0;
  for (const auto& e : state.bank.entries()) {
    bank_psi.segment(r * d, d) = e.psi;
    bank_phi.segment(r * d, d) = e.phi;
    bank_owner[r] = e.owner;
    ++r;
  }
  if (k > 0) {
    add_entry("bank.psi", {k, d}, &bank_psi);
    add_entry("bank.phi", {k, d}, &bank_phi);
    add_entry("bank.owner", {k}, &bank_owner);
  }

  json history = json::array();
  for (const auto& h : state.history) history.push_back(to_json(h));
  const json header{{"config", to_json(state.config)},
                    {"epoch", state.epoch},
                    {"history", history},
                    {"rng", {{"seed", state.config.seed}, {"epoch", state.epoch}}},
                    {"optimizer",
                     {{"lr", state.opt.lr},
                      {"weight_decay", state.opt.weight_decay},
                      {"beta1", state.opt.beta1},
                      {"beta2", state.opt.beta2},
                      {"eps", state.opt.eps},
                      {"step", state.opt.step}}},
                    {"manifest", manifest}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write checkpoint " + path.string());
  write_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  write_bytes(out, &version, sizeof version);
  const std::uint64_t len = text.size();
  write_bytes(out, &len, sizeof len);
  write_bytes(out, text.data(), text.size());
  for (const auto& [name, data] : payload) {
    write_bytes(out, data->data(), static_cast<std::size_t>(data->size()) * sizeof(double));
  }
  if (!out) throw Error(ErrorCode::Io, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  read_bytes(in, magic, sizeof magic, path);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::Format, "not a checkpoint (bad magic): " + path.string());
  }
  Checkpoint ck;
  read_bytes(in, &ck.version, sizeof ck.version, path);
  if (ck.version != kCheckpointVersion) {
    throw Error(ErrorCode::Format, "checkpoint version " + std::to_string(ck.version) + " unsupported (expected " +
                                       std::to_string(kCheckpointVersion) + ")");
  }
  std::uint64_t len = 0;
  read_bytes(in, &len, sizeof len, path);
  if (len > (std::uint64_t{1} << 32)) throw Error(ErrorCode::Format, "checkpoint header too large");
  std::string text(len, '\0');
  read_bytes(in, text.data(), text.size(), path);

  json header;
  try {
    header = json::parse(text);
    ck.config = train_config_from_json(header.at("config"));
    ck.epoch = header.at("epoch");
    for (const auto& h : header.at("history")) ck.history.push_back(epoch_stats_from_json(h));
    const json& o = header.at("optimizer");
    ck.opt.lr = o.at("lr");
    ck.opt.weight_decay = o.at("weight_decay");
    ck.opt.beta1 = o.at("beta1");
    ck.opt.beta2 = o.at("beta2");
    ck.opt.eps = o.at("eps");
    ck.opt.step = o.at("step");
    for (const auto& entry : header.at("manifest")) {
      const std::string name = entry.at("name");
      Shape shape;
      for (const auto& e : entry.at("shape")) shape.push_back(e.get<Index>());
      Vector data(numel(shape));
      read_bytes(in, data.data(), static_cast<std::size_t>(data.size()) * sizeof(double), path);
      if (starts_with(name, "adam.m.")) ck.opt.m[name.substr(7)] = data;
      else if (starts_with(name, "adam.v.")) ck.opt.v[name.substr(7)] = data;
      ck.tensors.emplace_back(name, Tensor(shape, std::move(data)));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("checkpoint header: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::Format, "trailing bytes in checkpoint");
  return ck;
}

void load_parameters(const NamedTensors& into, const Checkpoint& from) {
  for (const auto& [name, t] : into) {
    const Tensor* src = from.find(name);
    if (!src) throw Error(ErrorCode::Shape, "checkpoint lacks tensor " + name);
    if (src->shape() != t.shape()) {
      throw Error(ErrorCode::Shape, name + ": checkpoint shape " + shape_str(src->shape()) + " vs model shape " +
                                        shape_str(t.shape()));
    }
  }
  for (const auto& [name, t] : into) {
    Tensor dst = t;
    dst.mutable_data() = from.find(name)->data();
  }
}

TrainState restore_train_state(const Checkpoint& ck) {
  TrainState s = make_train_state(ck.config);
  load_parameters(s.model.all(), ck);
  s.opt = ck.opt;
  s.epoch = ck.epoch;
  s.history = ck.history;
  const Tensor* psi = ck.find("bank.psi");
  const Tensor* phi = ck.find("bank.phi");
  const Tensor* owner = ck.find("bank.owner");
  if (psi && phi) {
    if (psi->shape() != phi->shape() || psi->dim(1) != s.bank.half_dim() || !owner || owner->size() != psi->dim(0)) {
      throw Error(ErrorCode::Shape, "bank shapes " + shape_str(psi->shape()) + " and " + shape_str(phi->shape()) +
                                        " vs half dim " + std::to_string(s.bank.half_dim()));
    }
    const Index d = psi->dim(1);
    for (Index r = 0; r < psi->dim(0); ++r) {
      s.bank.push(Tensor({d}, psi->data().segment(r * d, d)), Tensor({d}, phi->data().segment(r * d, d)),
                  static_cast<int>(owner->data()[r]));
    }
  }
  return s;
}

TrainState curriculum_init(const TrainConfig& config, const Checkpoint& previous) {
  TrainConfig c = config;
  c.lr = 1e-4;
  c.weight_decay = 1e-6;
  TrainState s = make_train_state(c);

  NamedTensors branches;
  for (const auto& entry : s.model.all()) {
    if (!starts_with(entry.first, "aggregator.")) branches.push_back(entry);
  }
  load_parameters(branches, previous);

  // The aggregator carries over only when every tensor matches by name and shape.
  const NamedTensors agg = s.model.aggregator.parameters("aggregator.");
  bool compatible = !agg.empty() && previous.config.aggregator == c.aggregator;
  for (const auto& [name, t] : agg) {
    const Tensor* src = previous.find(name);
    compatible = compatible && src && src->shape() == t.shape();
  }
  if (compatible) load_parameters(agg, previous);
  return s;
}

}  // namespace lsfd
