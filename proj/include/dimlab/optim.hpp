#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimlab/display.hpp"
#include "dimlab/metrics.hpp"

namespace dimlab {

enum class LossDomain { kLinear, kPu };

const char* to_string(LossDomain d);
LossDomain parse_loss_domain(const std::string& name);

struct LossConfig {
  double p_a = 0.0;
  double beta = 20.0;
  double delta = 1.0;                 // smooth-L1 transition, normalised units
  std::optional<double> m_max;        // unset: number of LEDs
  LossDomain domain = LossDomain::kLinear;
  const PuCurve* curve = nullptr;     // kPu only; null: PuCurve::standard()

  void validate() const;
  double resolved_m_max(Index leds) const { return m_max.value_or(static_cast<double>(leds)); }
};

struct LossTerms {
  double total = 0.0;
  double reg = 0.0;  // mean smooth-L1 over channel-pixels
  double mag = 0.0;  // sum B_k / M_max
};

double smooth_l1(double r, double delta);

/// Loss of a backlight for one target. The target is in display nits
/// (see to_display_nits) and is normalised by peak_nits internally.
class LossModel {
 public:
  LossModel(const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc);

  const DisplayConfig& display() const { return cfg_; }
  const LossConfig& config() const { return lc_; }
  void set_power(double p_a);

  /// Loss at drive levels `b`; fills `grad` (dL/dB) when non-null.
  LossTerms eval(const Eigen::VectorXd& b, Eigen::VectorXd* grad = nullptr) const;

  /// Per-LED flag: true when some pixel the LED lights sits within `margin`
  /// (normalised units) of a clamp kink. Finite differences are unreliable there.
  std::vector<bool> near_kink(const Eigen::VectorXd& b, double margin) const;

 private:
  Raster diffusion(const Eigen::VectorXd& b) const;

  DisplayConfig cfg_;
  LossConfig lc_;
  std::array<Raster, 3> target_;  // normalised
  std::shared_ptr<const LargeConvolver> conv_;
  double m_max_ = 1.0;
};

LossTerms loss_terms(const Backlight& b, const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc);
double loss(const Backlight& b, const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc);
Eigen::VectorXd loss_grad(const Backlight& b, const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc);

enum class InitKind { kFromMax, kFromAvg, kConstant };

const char* to_string(InitKind k);
InitKind parse_init_kind(const std::string& name);

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  int max_iters = 2000;
  double rel_tol = 1e-5;  // over a 50-iteration window
  InitKind init = InitKind::kFromMax;
  double init_value = 0.5;  // kConstant

  void validate() const;
};

inline constexpr int kStopWindow = 50;

struct TraceRow {
  int iteration = 0;
  LossTerms terms;
};

struct OptimResult {
  Backlight backlight;
  std::vector<TraceRow> trace;  // row 0 is the initial point
  int best_iteration = 0;
  bool converged = false;       // stopped by rel_tol rather than max_iters
};

class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& what, std::vector<TraceRow> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<TraceRow>& trace() const { return trace_; }

 private:
  std::vector<TraceRow> trace_;
};

/// Adam on the loss with projection onto [0, 1]^N after every step. Returns
/// the lowest-loss iterate seen.
OptimResult optimize_backlight(const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc,
                               const OptimConfig& oc);

Backlight initial_backlight(const HdrImage& target, const DisplayConfig& cfg, const OptimConfig& oc);

/// Columns iteration,L,L_reg,L_mag.
void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace);

/// Adam state for a flat parameter vector.
class Adam {
 public:
  Adam(Index size, double lr, double beta1, double beta2, double eps = 1e-8);
  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad);
  Index steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  Eigen::VectorXd m_, v_;
  Index t_ = 0;
};

}  // namespace dimlab
