#include "dimlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dimlab/dimmers.hpp"
#include "dimlab/hdrio.hpp"

namespace dimlab {

const char* to_string(LossDomain d) { return d == LossDomain::kPu ? "pu" : "linear"; }

LossDomain parse_loss_domain(const std::string& name) {
  if (name == "linear") return LossDomain::kLinear;
  if (name == "pu") return LossDomain::kPu;
  throw InvalidArgument("unknown loss domain '" + name + "'");
}

const char* to_string(InitKind k) {
  switch (k) {
    case InitKind::kFromMax: return "from_max";
    case InitKind::kFromAvg: return "from_avg";
    case InitKind::kConstant: return "constant";
  }
  return "?";
}

InitKind parse_init_kind(const std::string& name) {
  for (InitKind k : {InitKind::kFromMax, InitKind::kFromAvg, InitKind::kConstant}) {
    if (name == to_string(k)) return k;
  }
  throw InvalidArgument("unknown init '" + name + "'");
}

void LossConfig::validate() const {
  if (!(p_a >= 0.0 && p_a <= 1.25)) throw InvalidArgument("loss: p_a must be in [0, 1.25]");
  if (!(beta > 0.0)) throw InvalidArgument("loss: beta must be > 0");
  if (!(delta > 0.0)) throw InvalidArgument("loss: delta must be > 0");
  if (m_max && !(*m_max > 0.0)) throw InvalidArgument("loss: m_max must be > 0");
}

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("optim: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("optim: beta1 and beta2 must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw InvalidArgument("optim: adam_eps must be > 0");
  if (max_iters < 0) throw InvalidArgument("optim: max_iters must be >= 0");
  if (!(rel_tol >= 0.0)) throw InvalidArgument("optim: rel_tol must be >= 0");
  if (!(init_value >= 0.0 && init_value <= 1.0)) throw InvalidArgument("optim: init_value must be in [0, 1]");
}

double smooth_l1(double r, double delta) {
  const double a = std::abs(r);
  return a < delta ? 0.5 * r * r / delta : a - 0.5 * delta;
}

namespace {

double smooth_l1_deriv(double r, double delta) {
  if (std::abs(r) < delta) return r / delta;
  return r > 0 ? 1.0 : -1.0;
}

}  // namespace

// --- loss -----------------------------------------------------------------

LossModel::LossModel(const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc) : cfg_(cfg), lc_(lc) {
  cfg.validate();
  lc.validate();
  if (target.height() != cfg.panel_height() || target.width() != cfg.panel_width()) {
    throw InvalidArgument("loss: target size differs from the panel");
  }
  const double scale = target.nits_per_unit() / cfg.peak_nits;
  for (int c = 0; c < 3; ++c) {
    target_[static_cast<std::size_t>(c)] = target.channel(c) * scale;
    if (target_[static_cast<std::size_t>(c)].maxCoeff() > 1.0 + 1e-12) {
      throw InvalidArgument("loss: target exceeds peak_nits; clip it first (to_display_nits)");
    }
  }
  conv_ = default_kernel_cache().get(cfg.psf.kernel(), cfg.panel_height(), cfg.panel_width(), cfg.boundary);
  m_max_ = lc.resolved_m_max(cfg.layout->size());
}

void LossModel::set_power(double p_a) {
  lc_.p_a = p_a;
  lc_.validate();
}

Raster LossModel::diffusion(const Eigen::VectorXd& b) const {
  const auto& layout = *cfg_.layout;
  if (b.size() != layout.size()) throw InvalidArgument("loss: backlight size differs from the layout");
  Raster s = Raster::Zero(layout.panel_height(), layout.panel_width());
  for (Index k = 0; k < b.size(); ++k) {
    const auto& c = layout.centers()[static_cast<std::size_t>(k)];
    s(c.row, c.col) = b[k] * layout.max_drive_nits();
  }
  return conv_->apply(s);
}

LossTerms LossModel::eval(const Eigen::VectorXd& b, Eigen::VectorXd* grad) const {
  const Raster raw = diffusion(b);
  const double peak = cfg_.peak_nits, eps = cfg_.leak_floor, delta = lc_.delta;
  const bool pu = lc_.domain == LossDomain::kPu;
  const PuCurve& curve = lc_.curve ? *lc_.curve : PuCurve::standard();
  const double range = pu ? curve.encode(peak) - curve.encode(0.1) : 1.0;
  const double n = 3.0 * static_cast<double>(raw.size());

  Raster g;
  if (grad) g = Raster::Zero(raw.rows(), raw.cols());
  long double reg = 0.0L;
  for (Index i = 0; i < raw.size(); ++i) {
    const double dn = std::max(raw.data()[i], 0.0);
    const double d = dn / peak;
    const bool dark = dn < kDarkBacklight;
    double gi = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double tgt = target_[static_cast<std::size_t>(c)].data()[i];
      double shown, dshown;  // displayed value and its derivative w.r.t. d
      if (dark) {
        shown = d;
        dshown = 1.0;
      } else {
        const double t = std::clamp(tgt / d, eps, 1.0);
        shown = d * t;
        dshown = tgt > d ? 1.0 : (tgt < eps * d ? eps : 0.0);
      }
      double r, dr = 1.0;
      if (pu) {
        r = (curve.encode(shown * peak) - curve.encode(tgt * peak)) / range;
        dr = curve.slope(shown * peak) * peak / range;
      } else {
        r = shown - tgt;
      }
      reg += smooth_l1(r, delta);
      if (grad && dshown != 0.0) gi += smooth_l1_deriv(r, delta) * dr * dshown;
    }
    // dL/dD in nits; the floor at zero passes no gradient.
    if (grad && raw.data()[i] > 0.0) g.data()[i] = gi / (n * peak);
  }

  LossTerms out;
  out.reg = static_cast<double>(reg / n);
  out.mag = b.sum() / m_max_;
  out.total = out.reg + lc_.p_a * lc_.beta * out.mag;

  if (grad) {
    const auto& layout = *cfg_.layout;
    const Raster back = conv_->apply_adjoint(g);
    grad->resize(b.size());
    const double power = lc_.p_a * lc_.beta / m_max_;
    for (Index k = 0; k < b.size(); ++k) {
      const auto& c = layout.centers()[static_cast<std::size_t>(k)];
      (*grad)[k] = layout.max_drive_nits() * back(c.row, c.col) + power;
    }
  }
  return out;
}

std::vector<bool> LossModel::near_kink(const Eigen::VectorXd& b, double margin) const {
  const Raster raw = diffusion(b);
  const double peak = cfg_.peak_nits, eps = cfg_.leak_floor;
  Raster mark = Raster::Zero(raw.rows(), raw.cols());
  for (Index i = 0; i < raw.size(); ++i) {
    const double dn = std::max(raw.data()[i], 0.0);
    const double d = dn / peak;
    bool near = std::abs(dn - kDarkBacklight) < margin * peak;
    for (int c = 0; c < 3 && !near; ++c) {
      const double tgt = target_[static_cast<std::size_t>(c)].data()[i];
      near = std::abs(tgt - d) < margin || std::abs(tgt - eps * d) < margin;
    }
    if (near) mark.data()[i] = 1.0;
  }
  const Raster support = (cfg_.psf.kernel() > 0.0).cast<double>();
  const Raster hit = correlate_large(mark, support, cfg_.boundary);
  std::vector<bool> out(static_cast<std::size_t>(b.size()));
  for (Index k = 0; k < b.size(); ++k) {
    const auto& c = cfg_.layout->centers()[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(k)] = hit(c.row, c.col) > 0.5;
  }
  return out;
}

namespace {

void require_layout(const Backlight& b, const DisplayConfig& cfg, const char* what) {
  if (!(b.layout() == *cfg.layout)) throw InvalidArgument(std::string(what) + ": backlight layout differs from the display");
}

}  // namespace

LossTerms loss_terms(const Backlight& b, const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc) {
  require_layout(b, cfg, "loss");
  return LossModel(target, cfg, lc).eval(b.values());
}

double loss(const Backlight& b, const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc) {
  return loss_terms(b, target, cfg, lc).total;
}

Eigen::VectorXd loss_grad(const Backlight& b, const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc) {
  require_layout(b, cfg, "loss_grad");
  Eigen::VectorXd g;
  LossModel(target, cfg, lc).eval(b.values(), &g);
  return g;
}

// --- optimiser ------------------------------------------------------------

Adam::Adam(Index size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = b1_ * m_ + (1.0 - b1_) * grad;
  v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

Backlight initial_backlight(const HdrImage& target, const DisplayConfig& cfg, const OptimConfig& oc) {
  switch (oc.init) {
    case InitKind::kFromMax: return dim_max(target, cfg);
    case InitKind::kFromAvg: return dim_avg(target, cfg);
    case InitKind::kConstant: return Backlight::constant(cfg.layout, oc.init_value);
  }
  throw InvalidArgument("optim: bad init");
}

OptimResult optimize_backlight(const HdrImage& target, const DisplayConfig& cfg, const LossConfig& lc,
                               const OptimConfig& oc) {
  oc.validate();
  const LossModel model(target, cfg, lc);
  Eigen::VectorXd b = initial_backlight(target, cfg, oc).values();
  Eigen::VectorXd grad;
  std::vector<TraceRow> trace;
  auto check = [&](const LossTerms& t, int it) {
    trace.push_back({it, t});
    if (!std::isfinite(t.total) || !grad.allFinite()) {
      throw OptimizationError("optimize_backlight: non-finite loss or gradient at iteration " + std::to_string(it),
                              trace);
    }
  };
  LossTerms terms = model.eval(b, &grad);
  check(terms, 0);
  Eigen::VectorXd best = b;
  double best_loss = terms.total;
  int best_it = 0;
  bool converged = false;
  Adam adam(b.size(), oc.lr, oc.beta1, oc.beta2, oc.adam_eps);
  for (int it = 1; it <= oc.max_iters; ++it) {
    adam.step(b, grad);
    b = b.cwiseMax(0.0).cwiseMin(1.0);
    terms = model.eval(b, &grad);
    check(terms, it);
    if (terms.total < best_loss) {
      best_loss = terms.total;
      best = b;
      best_it = it;
    }
    if (it >= kStopWindow) {
      const double before = trace[static_cast<std::size_t>(it - kStopWindow)].terms.total;
      if (before - terms.total <= oc.rel_tol * std::abs(before)) {
        converged = true;
        break;
      }
    }
  }
  return {Backlight(cfg.layout, best), std::move(trace), best_it, converged};
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,L,L_reg,L_mag\n";
  char buf[128];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.iteration, r.terms.total, r.terms.reg, r.terms.mag);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace dimlab
