#pragma once

#include "lsfd/model.hpp"

#include <deque>
#include <optional>

namespace lsfd {

/// Fixed-capacity FIFO of detached key features, the negatives of all three
/// losses. Instance-loss negatives are ψ_neg ⧺ φ_neg.
class MemoryBank {
 public:
  MemoryBank(int capacity, int half_dim);

  int capacity() const { return capacity_; }
  int half_dim() const { return half_dim_; }
  int size() const { return static_cast<int>(entries_.size()); }

  /// Copies the values; the bank never holds graph references. `owner` is
  /// the source video id (-1 when unknown).
  void push(const Tensor& psi, const Tensor& phi, int owner = -1);

  struct Entry {
    Vector psi, phi;
    int owner = -1;
  };
  const std::deque<Entry>& entries() const { return entries_; }

 private:
  int capacity_;
  int half_dim_;
  std::deque<Entry> entries_;
};

/// Stable copy of the bank for one loss evaluation, oldest entry first.
/// Empty optionals mean an empty bank.
struct BankSnapshot {
  std::optional<Tensor> psi;  // [K, d/2]
  std::optional<Tensor> phi;  // [K, d/2]
  std::optional<Tensor> xi;   // [K, d]
  std::vector<int> owners;
  int size() const { return psi ? static_cast<int>(psi->dim(0)) : 0; }
};

BankSnapshot bank_snapshot(const MemoryBank& bank);

/// Bank rows after the heads. Shared by every sample of a batch.
struct ProjectedNegatives {
  std::optional<Tensor> s, n, i;
  std::vector<int> owners;
};

/// Additive logit mask hiding the rows owned by `owner`; empty if none are.
std::optional<Tensor> owner_mask(const std::vector<int>& owners, int owner);

ProjectedNegatives project_negatives(const BankSnapshot& snapshot, const Branch& heads);

/// (1/τ) cos(h(z1), h(z2)), shape [1].
Tensor sim(const Head& head, const Tensor& z1, const Tensor& z2, double tau);

/// InfoNCE with the positive at logit 0. All inputs already passed through
/// the head; `negatives` may be empty (loss 0). `mask` is added to the
/// negative logits after the 1/τ scaling.
Tensor infonce_projected(const Tensor& anchor, const Tensor& positive, const std::optional<Tensor>& negatives,
                         double tau, const std::optional<Tensor>& mask = std::nullopt);

/// InfoNCE applying `head` to anchor, positive and every negative row.
Tensor infonce(const Head& head, const Tensor& anchor, const Tensor& positive, const std::optional<Tensor>& negatives,
               double tau);

struct LossFlags {
  bool stationary = true;
  bool non_stationary = true;
  bool instance = true;
};

LossFlags parse_loss_flags(const std::string& csv);
std::string to_string(const LossFlags& flags);

struct LossConfig {
  double tau = 0.1;
  LossFlags flags;
  int owner = -1;  // bank rows with this owner are not used as negatives
};

/// Anchor ψ_s^(j) (query), positive ψ_l (key), negatives projected by h_s.
Tensor loss_stationary(const Head& head_s, const std::vector<Features>& shorts, int j, const Tensor& key_psi,
                       const std::optional<Tensor>& projected, double tau,
                       const std::optional<Tensor>& mask = std::nullopt);
/// Anchor g(φ_s^(1..N)) (query), positive φ_l (key), negatives projected by h_n.
Tensor loss_non_stationary(const Head& head_n, const Aggregator& agg, const std::vector<Features>& shorts,
                           const Tensor& key_phi, const std::optional<Tensor>& projected, double tau,
                       const std::optional<Tensor>& mask = std::nullopt);
/// Anchor ξ_l (query, long view a), positive ξ̂_l (key, long view b).
Tensor loss_instance(const Head& head_i, const Tensor& query_xi, const Tensor& key_xi,
                     const std::optional<Tensor>& projected, double tau,
                       const std::optional<Tensor>& mask = std::nullopt);

struct LossTerms {
  Tensor stationary, non_stationary, instance, total;
};

/// L = L_stationary + L_non-stationary + L_instance with disabled terms
/// contributing exactly 0 and no graph.
LossTerms total_loss(const Branch& query_heads, const Aggregator& agg, const std::vector<Features>& shorts, int j,
                     const Features& query_long, const Features& key_long, const ProjectedNegatives& negatives,
                     const LossConfig& config);

}  // namespace lsfd
