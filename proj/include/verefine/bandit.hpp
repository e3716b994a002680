#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace verefine {

struct BanditConfig {
  double exploration = 0.5;  // c
  double discount = 0.99;    // gamma; 1 disables discounting

  void validate() const {
    if (!(exploration >= 0.0)) throw std::invalid_argument("BanditConfig: exploration must be >= 0");
    if (!(discount > 0.0 && discount <= 1.0)) throw std::invalid_argument("BanditConfig: discount must be in (0, 1]");
  }
};

/// UCB statistics with real-valued (discountable) play counts.
class BanditState {
 public:
  BanditState() = default;
  BanditState(std::size_t arms, BanditConfig cfg) : cfg_(cfg), reward_(arms, 0.0), plays_(arms, 0.0) {
    cfg_.validate();
  }

  std::size_t arms() const { return plays_.size(); }
  const BanditConfig& config() const { return cfg_; }
  double plays(std::size_t j) const { return plays_.at(j); }
  double cumulative_reward(std::size_t j) const { return reward_.at(j); }
  double total_plays() const { return total_; }
  double mean(std::size_t j) const { return plays_.at(j) > 0.0 ? reward_[j] / plays_[j] : 0.0; }

  /// mu_j + c sqrt(ln p / n_j); +inf for unplayed arms. ln p is clamped at 0 for p < 1.
  double ucb(std::size_t j) const {
    if (!(plays_.at(j) > 0.0)) return std::numeric_limits<double>::infinity();
    const double logp = std::log(std::max(total_, 1.0));
    return mean(j) + cfg_.exploration * std::sqrt(logp / plays_[j]);
  }

  /// Arm with maximal UCB; unplayed arms first, ties to the lowest index.
  std::size_t select() const {
    if (plays_.empty()) throw std::logic_error("BanditState::select: no arms");
    std::size_t best = 0;
    double best_ucb = ucb(0);
    for (std::size_t j = 1; j < plays_.size(); ++j) {
      const double u = ucb(j);
      if (u > best_ucb) {
        best_ucb = u;
        best = j;
      }
    }
    return best;
  }

  void update(std::size_t arm, double reward) {
    if (arm >= plays_.size()) throw std::out_of_range("BanditState::update: arm out of range");
    if (!(reward >= 0.0 && reward <= 1.0)) throw std::invalid_argument("BanditState::update: reward must be in [0, 1]");
    reward_[arm] += reward;
    plays_[arm] += 1.0;
    total_ += 1.0;
  }

  /// Scales every reward sum and play count (and the total) by gamma.
  void discount() {
    const double g = cfg_.discount;
    if (g == 1.0) return;
    for (auto& r : reward_) r *= g;
    for (auto& n : plays_) n *= g;
    total_ *= g;
  }

 private:
  BanditConfig cfg_;
  std::vector<double> reward_;
  std::vector<double> plays_;
  double total_ = 0.0;
};

struct BanditPull {
  std::size_t arm;
  double reward;
};

/// Sequence of (arm, reward) pulls, exportable as CSV.
struct BanditTrace {
  std::vector<BanditPull> pulls;

  void record(std::size_t arm, double reward) { pulls.push_back({arm, reward}); }

  std::vector<std::size_t> counts(std::size_t arms) const {
    std::vector<std::size_t> c(arms, 0);
    for (const auto& p : pulls)
      if (p.arm < arms) ++c[p.arm];
    return c;
  }

  void write_csv(std::ostream& out) const {
    out << "pull,arm,reward\n";
    out.precision(17);
    for (std::size_t i = 0; i < pulls.size(); ++i) out << i << ',' << pulls[i].arm << ',' << pulls[i].reward << '\n';
  }
};

}  // namespace verefine
