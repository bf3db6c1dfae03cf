#include "lsfd/objective.hpp"

#include <algorithm>
#include <sstream>

namespace lsfd {

MemoryBank::MemoryBank(int capacity, int half_dim) : capacity_(capacity), half_dim_(half_dim) {
  if (capacity < 1 || half_dim < 1) throw Error(ErrorCode::Config, "memory bank needs capacity and dim >= 1");
}

void MemoryBank::push(const Tensor& psi, const Tensor& phi, int owner) {
  if (psi.size() != half_dim_ || phi.size() != half_dim_) {
    throw Error(ErrorCode::Shape, "bank_push: entries must have " + std::to_string(half_dim_) + " values, got " +
                                      shape_str(psi.shape()) + " and " + shape_str(phi.shape()));
  }
  if (static_cast<int>(entries_.size()) == capacity_) entries_.pop_front();
  entries_.push_back({psi.data(), phi.data(), owner});
}

BankSnapshot bank_snapshot(const MemoryBank& bank) {
  BankSnapshot snap;
  const Index k = bank.size(), d = bank.half_dim();
  if (k == 0) return snap;
  RowMatrix psi(k, d), phi(k, d), xi(k, 2 * d);
  Index r = 0;
  for (const auto& e : bank.entries()) {
    psi.row(r) = e.psi.transpose();
    phi.row(r) = e.phi.transpose();
    xi.row(r) << e.psi.transpose(), e.phi.transpose();
    snap.owners.push_back(e.owner);
    ++r;
  }
  auto flat = [](const RowMatrix& m) { return Vector(Eigen::Map<const Vector>(m.data(), m.size())); };
  snap.psi = Tensor({k, d}, flat(psi));
  snap.phi = Tensor({k, d}, flat(phi));
  snap.xi = Tensor({k, 2 * d}, flat(xi));
  return snap;
}

ProjectedNegatives project_negatives(const BankSnapshot& snapshot, const Branch& heads) {
  ProjectedNegatives out;
  if (snapshot.size() == 0) return out;
  out.s = heads.head_s.apply(*snapshot.psi);
  out.n = heads.head_n.apply(*snapshot.phi);
  out.i = heads.head_i.apply(*snapshot.xi);
  out.owners = snapshot.owners;
  return out;
}

std::optional<Tensor> owner_mask(const std::vector<int>& owners, int owner) {
  if (owner < 0 || std::find(owners.begin(), owners.end(), owner) == owners.end()) return std::nullopt;
  Vector m = Vector::Zero(static_cast<Index>(owners.size()) + 1);
  for (std::size_t r = 0; r < owners.size(); ++r) {
    if (owners[r] == owner) m[static_cast<Index>(r) + 1] = -1e9;
  }
  return Tensor({m.size()}, m);
}

Tensor sim(const Head& head, const Tensor& z1, const Tensor& z2, double tau) {
  if (tau <= 0.0) throw Error(ErrorCode::Value, "sim: tau must be positive");
  return scale(cosine(head.apply(z1), head.apply(z2)), 1.0 / tau);
}

Tensor infonce_projected(const Tensor& anchor, const Tensor& positive, const std::optional<Tensor>& negatives,
                         double tau, const std::optional<Tensor>& mask) {
  if (tau <= 0.0) throw Error(ErrorCode::Value, "infonce: tau must be positive");
  if (anchor.rank() != 1 || anchor.shape() != positive.shape()) {
    throw Error(ErrorCode::Shape, "infonce: anchor " + shape_str(anchor.shape()) + " vs positive " +
                                      shape_str(positive.shape()));
  }
  Tensor pos = cosine(anchor, positive);
  Tensor logits = negatives ? concat_lastdim({pos, cosine_rows(anchor, *negatives)}) : pos;
  Tensor scaled = scale(logits, 1.0 / tau);
  if (mask) {
    if (mask->size() != scaled.size()) throw Error(ErrorCode::Shape, "infonce: mask size mismatch");
    scaled = add(scaled, *mask);
  }
  return cross_entropy(scaled, 0);
}

Tensor infonce(const Head& head, const Tensor& anchor, const Tensor& positive, const std::optional<Tensor>& negatives,
               double tau) {
  std::optional<Tensor> projected;
  if (negatives) projected = head.apply(*negatives);
  return infonce_projected(head.apply(anchor), head.apply(positive), projected, tau);
}

LossFlags parse_loss_flags(const std::string& csv) {
  LossFlags f{false, false, false};
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "stationary") f.stationary = true;
    else if (item == "non-stationary" || item == "non_stationary") f.non_stationary = true;
    else if (item == "instance") f.instance = true;
    else if (item == "all") f = LossFlags{};
    else if (item == "none" || item.empty()) {}
    else throw Error(ErrorCode::Config, "unknown loss flag '" + item + "'");
  }
  return f;
}

std::string to_string(const LossFlags& flags) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(flags.stationary, "stationary");
  add(flags.non_stationary, "non-stationary");
  add(flags.instance, "instance");
  return out.empty() ? "none" : out;
}

Tensor loss_stationary(const Head& head_s, const std::vector<Features>& shorts, int j, const Tensor& key_psi,
                       const std::optional<Tensor>& projected, double tau,
                       const std::optional<Tensor>& mask) {
  if (j < 0 || j >= static_cast<int>(shorts.size())) throw Error(ErrorCode::Value, "loss_stationary: bad short index");
  return infonce_projected(head_s.apply(shorts[static_cast<std::size_t>(j)].psi), head_s.apply(key_psi), projected, tau, mask);
}

Tensor loss_non_stationary(const Head& head_n, const Aggregator& agg, const std::vector<Features>& shorts,
                           const Tensor& key_phi, const std::optional<Tensor>& projected, double tau,
                       const std::optional<Tensor>& mask) {
  std::vector<Tensor> phis;
  phis.reserve(shorts.size());
  for (const auto& f : shorts) phis.push_back(f.phi);
  return infonce_projected(head_n.apply(agg.apply(phis)), head_n.apply(key_phi), projected, tau, mask);
}

Tensor loss_instance(const Head& head_i, const Tensor& query_xi, const Tensor& key_xi,
                     const std::optional<Tensor>& projected, double tau,
                       const std::optional<Tensor>& mask) {
  return infonce_projected(head_i.apply(query_xi), head_i.apply(key_xi), projected, tau, mask);
}

LossTerms total_loss(const Branch& query_heads, const Aggregator& agg, const std::vector<Features>& shorts, int j,
                     const Features& query_long, const Features& key_long, const ProjectedNegatives& negatives,
                     const LossConfig& config) {
  LossTerms t{Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0), Tensor::scalar(0.0)};
  const std::optional<Tensor> mask = owner_mask(negatives.owners, config.owner);
  std::vector<Tensor> enabled;
  if (config.flags.stationary) {
    t.stationary = loss_stationary(query_heads.head_s, shorts, j, key_long.psi, negatives.s, config.tau, mask);
    enabled.push_back(t.stationary);
  }
  if (config.flags.non_stationary) {
    t.non_stationary = loss_non_stationary(query_heads.head_n, agg, shorts, key_long.phi, negatives.n, config.tau, mask);
    enabled.push_back(t.non_stationary);
  }
  if (config.flags.instance) {
    t.instance = loss_instance(query_heads.head_i, query_long.xi, key_long.xi, negatives.i, config.tau, mask);
    enabled.push_back(t.instance);
  }
  if (!enabled.empty()) {
    t.total = enabled[0];
    for (std::size_t i = 1; i < enabled.size(); ++i) t.total = add(t.total, enabled[i]);
  }
  return t;
}

}  // namespace lsfd
