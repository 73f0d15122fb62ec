#include "app.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "dimlab/display_io.hpp"
#include "dimlab/hdrio.hpp"
#include "dimlab/synth.hpp"
#include "json.hpp"

namespace dimlab::app {

using nlohmann::json;

// --- display ----------------------------------------------------------------

DisplayConfig DisplaySpec::build(Index height, Index width) const {
  if (led_rows < 1 || led_cols < 1) throw ConfigError("display: LED grid must be at least 1x1");
  if (led_rows > height || led_cols > width) throw ConfigError("display: more LED rows/cols than pixels");
  DisplayConfig cfg;
  cfg.layout = std::make_shared<const BacklightLayout>(led_rows, led_cols, height, width, peak_nits);
  cfg.peak_nits = peak_nits;
  cfg.leak_floor = leak_floor;
  cfg.boundary = boundary;
  switch (psf) {
    case PsfKind::kGaussian: {
      const double sigma = sigma_factor * std::sqrt(cfg.layout->pitch_rows() * cfg.layout->pitch_cols());
      cfg.psf = Psf::gaussian(sigma, radius_sigmas * sigma);
      break;
    }
    case PsfKind::kBox:
      cfg.psf = Psf::box(static_cast<Index>(std::lround(cfg.layout->pitch_rows())),
                         static_cast<Index>(std::lround(cfg.layout->pitch_cols())));
      break;
    case PsfKind::kDelta: cfg.psf = Psf::delta(); break;
    case PsfKind::kFile: cfg.psf = Psf::load(psf_path); break;
  }
  if (normalize && (psf == PsfKind::kGaussian || psf == PsfKind::kFile)) {
    cfg.psf = normalize_psf_to_peak(cfg.psf, *cfg.layout, peak_nits, boundary);
  }
  cfg.validate();
  return cfg;
}

// --- names --------------------------------------------------------------------

const char* to_string(Algo a) {
  switch (a) {
    case Algo::kMax: return "max";
    case Algo::kAvg: return "avg";
    case Algo::kLp: return "lp";
    case Algo::kImf: return "imf";
    case Algo::kOpt: return "opt";
    case Algo::kDbld: return "dbld";
  }
  return "?";
}

Algo parse_algo(const std::string& name) {
  for (Algo a : {Algo::kMax, Algo::kAvg, Algo::kLp, Algo::kImf, Algo::kOpt, Algo::kDbld}) {
    if (name == to_string(a)) return a;
  }
  throw ConfigError("unknown algorithm '" + name + "' (max, avg, lp, imf, opt, dbld)");
}

bool uses_power(Algo a) { return a == Algo::kOpt || a == Algo::kDbld; }

namespace {

PsfKind parse_psf_kind(const std::string& s) {
  if (s == "gaussian") return PsfKind::kGaussian;
  if (s == "box") return PsfKind::kBox;
  if (s == "delta") return PsfKind::kDelta;
  if (s == "file") return PsfKind::kFile;
  throw ConfigError("unknown psf kind '" + s + "' (gaussian, box, delta, file)");
}

Boundary parse_boundary(const std::string& s) {
  if (s == "zero") return Boundary::kZeroPad;
  if (s == "circular") return Boundary::kCircular;
  throw ConfigError("unknown boundary '" + s + "' (zero, circular)");
}

ReportFormat parse_format(const std::string& s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format '" + s + "' (csv, json)");
}

std::string backlight_ext(const std::string& s) {
  if (s == "json" || s == "csv") return "." + s;
  throw ConfigError("unknown backlight format '" + s + "' (json, csv)");
}

// Wraps library InvalidArgument as configuration errors.
template <typename F>
auto as_config(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  as_config([&] {
    dimmer.validate();
    loss.validate();
    optim.validate();
    net.validate();
    train.validate();
    return 0;
  });
  if (!(display.peak_nits > 0)) throw ConfigError("display: peak_nits must be > 0");
  if (!(display.leak_floor >= 0 && display.leak_floor < 1)) throw ConfigError("display: leak_floor must be in [0, 1)");
  if (!(display.sigma_factor > 0) || !(display.radius_sigmas > 0)) throw ConfigError("display: bad gaussian psf");
  if (train_size < (Index{1} << net.stages)) throw ConfigError("train: size too small for the network depth");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  for (double pa : pa_list) {
    if (!(pa >= 0 && pa <= 1.25)) throw ConfigError("pa_list values must be in [0, 1.25]");
  }
}

// --- config file --------------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

fs::path existing(const fs::path& base, const std::string& p, const char* what) {
  fs::path path = fs::path(p).is_absolute() ? fs::path(p) : base / p;
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path.string());
  return path;
}

}  // namespace

void apply_config_json(RunConfig& rc, const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    check_keys(j, {"display", "dimmer", "loss", "optim", "net", "train", "checkpoint", "report", "pa_list", "threads"},
               "config");
    if (j.contains("display")) {
      const auto& d = j["display"];
      check_keys(d, {"led_rows", "led_cols", "peak_nits", "leak_floor", "boundary", "psf"}, "display");
      get(d, "led_rows", rc.display.led_rows);
      get(d, "led_cols", rc.display.led_cols);
      get(d, "peak_nits", rc.display.peak_nits);
      get(d, "leak_floor", rc.display.leak_floor);
      if (d.contains("boundary")) rc.display.boundary = parse_boundary(d["boundary"].get<std::string>());
      if (d.contains("psf")) {
        const auto& p = d["psf"];
        check_keys(p, {"kind", "sigma_factor", "radius_sigmas", "path", "normalize"}, "display.psf");
        if (p.contains("kind")) rc.display.psf = parse_psf_kind(p["kind"].get<std::string>());
        get(p, "sigma_factor", rc.display.sigma_factor);
        get(p, "radius_sigmas", rc.display.radius_sigmas);
        get(p, "normalize", rc.display.normalize);
        if (p.contains("path")) rc.display.psf_path = existing(base_dir, p["path"].get<std::string>(), "psf file");
      }
    }
    if (j.contains("dimmer")) {
      const auto& d = j["dimmer"];
      check_keys(d, {"algo", "lp_c", "imf_w", "imf_bins", "stat_plane"}, "dimmer");
      if (d.contains("algo")) rc.algo = parse_algo(d["algo"].get<std::string>());
      get(d, "lp_c", rc.dimmer.lp_c);
      get(d, "imf_w", rc.dimmer.imf_w);
      get(d, "imf_bins", rc.dimmer.imf_bins);
      if (d.contains("stat_plane")) {
        rc.dimmer.plane = as_config([&] { return parse_stat_plane(d["stat_plane"].get<std::string>()); });
      }
    }
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      check_keys(l, {"p_a", "beta", "delta", "m_max", "domain"}, "loss");
      get(l, "p_a", rc.loss.p_a);
      get(l, "beta", rc.loss.beta);
      get(l, "delta", rc.loss.delta);
      if (l.contains("m_max") && !l["m_max"].is_null()) rc.loss.m_max = l["m_max"].get<double>();
      if (l.contains("domain")) rc.loss.domain = as_config([&] { return parse_loss_domain(l["domain"].get<std::string>()); });
    }
    if (j.contains("optim")) {
      const auto& o = j["optim"];
      check_keys(o, {"lr", "beta1", "beta2", "max_iters", "rel_tol", "init", "init_value"}, "optim");
      get(o, "lr", rc.optim.lr);
      get(o, "beta1", rc.optim.beta1);
      get(o, "beta2", rc.optim.beta2);
      get(o, "max_iters", rc.optim.max_iters);
      get(o, "rel_tol", rc.optim.rel_tol);
      get(o, "init_value", rc.optim.init_value);
      if (o.contains("init")) rc.optim.init = as_config([&] { return parse_init_kind(o["init"].get<std::string>()); });
    }
    if (j.contains("net")) {
      const auto& n = j["net"];
      check_keys(n, {"stages", "widths", "norm_eps", "seed"}, "net");
      get(n, "stages", rc.net.stages);
      get(n, "widths", rc.net.widths);
      get(n, "norm_eps", rc.net.norm_eps);
      get(n, "seed", rc.net.seed);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t, {"iterations", "lr", "beta1", "beta2", "size"}, "train");
      get(t, "iterations", rc.train.max_iters);
      get(t, "lr", rc.train.lr);
      get(t, "beta1", rc.train.beta1);
      get(t, "beta2", rc.train.beta2);
      get(t, "size", rc.train_size);
    }
    if (j.contains("checkpoint")) rc.checkpoint = existing(base_dir, j["checkpoint"].get<std::string>(), "checkpoint");
    if (j.contains("report")) {
      const auto& r = j["report"];
      check_keys(r, {"format", "backlight_format"}, "report");
      if (r.contains("format")) rc.format = parse_format(r["format"].get<std::string>());
      if (r.contains("backlight_format")) rc.backlight_ext = backlight_ext(r["backlight_format"].get<std::string>());
    }
    get(j, "pa_list", rc.pa_list);
    get(j, "threads", rc.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig rc;
  apply_config_json(rc, ss.str(), path.parent_path());
  rc.validate();
  return rc;
}

// --- running ------------------------------------------------------------------

Prepared prepare(const HdrImage& image, const DisplaySpec& spec) {
  Prepared p{to_display_nits(image, spec.peak_nits), spec.build(image.height(), image.width())};
  return p;
}

Backlight run_algo(Algo algo, const Prepared& p, const RunConfig& rc, double p_a, const NetParams* net) {
  switch (algo) {
    case Algo::kMax: return dim_max(p.target, p.display, rc.dimmer.plane);
    case Algo::kAvg: return dim_avg(p.target, p.display, rc.dimmer.plane);
    case Algo::kLp: return dim_lp(p.target, p.display, rc.dimmer.lp_c, rc.dimmer.plane);
    case Algo::kImf: return dim_imf(p.target, p.display, rc.dimmer.imf_w, rc.dimmer.imf_bins, rc.dimmer.plane);
    case Algo::kOpt: {
      LossConfig lc = rc.loss;
      lc.p_a = p_a;
      return optimize_backlight(p.target, p.display, lc, rc.optim).backlight;
    }
    case Algo::kDbld:
      if (!net) throw ConfigError("dbld needs a checkpoint (--checkpoint)");
      return predict_backlight(*net, p.target, p_a, p.display);
  }
  throw ConfigError("bad algorithm");
}

ReportRow score(const std::string& image, Algo algo, std::optional<double> p_a, const Prepared& p, const Backlight& b) {
  const Simulation sim = simulate_full(p.target, b, p.display);
  QualityOptions q;
  q.peak_nits = p.display.peak_nits;
  return {image, to_string(algo), p_a, evaluate(p.target, b, sim, q), b.values().mean()};
}

// --- reports ------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json row_json(const ReportRow& r) {
  return {{"image", r.image},
          {"algo", r.algo},
          {"p_a", r.p_a ? json(*r.p_a) : json(nullptr)},
          {"psr", r.metrics.psr},
          {"pu_psnr", r.metrics.pu_psnr},
          {"pu_ms_ssim", r.metrics.pu_ms_ssim},
          {"ms_ssim_scales", r.metrics.ms_ssim_scales},
          {"clipping_fraction", r.metrics.clipping_fraction},
          {"mean_drive", r.mean_drive}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.image) << ',' << r.algo << ',' << (r.p_a ? num(*r.p_a) : "") << ',' << num(r.metrics.psr)
        << ',' << num(r.metrics.pu_psnr) << ',' << num(r.metrics.pu_ms_ssim) << ',' << r.metrics.ms_ssim_scales << ','
        << num(r.metrics.clipping_fraction) << ',' << num(r.mean_drive) << '\n';
  }
}

void write_errors_csv(std::ostream& out, const std::vector<ErrorRow>& errors) {
  out << "image,error\n";
  for (const auto& e : errors) out << csv_field(e.image) << ',' << csv_field(e.message) << '\n';
}

std::string report_json(const Report& report) {
  json j;
  j["rows"] = json::array();
  for (const auto& r : report.rows) j["rows"].push_back(row_json(r));
  j["errors"] = json::array();
  for (const auto& e : report.errors) j["errors"].push_back({{"image", e.image}, {"error", e.message}});
  return j.dump(2) + "\n";
}

void write_report(const Report& report, const fs::path& dir, ReportFormat format) {
  if (format == ReportFormat::kJson) {
    write_text(dir / "report.json", report_json(report));
    return;
  }
  std::ostringstream rows;
  write_report_csv(rows, report.rows);
  write_text(dir / "report.csv", rows.str());
  const fs::path err = dir / "errors.csv";
  if (report.errors.empty()) {
    fs::remove(err);
  } else {
    std::ostringstream e;
    write_errors_csv(e, report.errors);
    write_text(err, e.str());
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --- batch helpers ------------------------------------------------------------

namespace {

// Runs f(i) for i in [0, n); results are placed by index, so ordering does
// not depend on completion order.
template <typename F>
void parallel_for(std::size_t n, int threads, F f) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Per-image outcome: rows or an error.
struct Outcome {
  std::vector<ReportRow> rows;
  std::optional<std::string> error;
};

Report collect(const std::vector<fs::path>& images, const std::vector<Outcome>& outcomes) {
  Report r;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (outcomes[i].error) {
      r.errors.push_back({images[i].string(), *outcomes[i].error});
    } else {
      r.rows.insert(r.rows.end(), outcomes[i].rows.begin(), outcomes[i].rows.end());
    }
  }
  return r;
}

template <typename F>
std::vector<Outcome> for_each_image(const std::vector<fs::path>& images, int threads, F f) {
  std::vector<Outcome> out(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    try {
      out[i].rows = f(i, prepare(read_image(images[i]), RunConfig{}.display));
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

void log_errors(const Report& r, std::ostream& log) {
  for (const auto& e : r.errors) log << "error: " << e.image << ": " << e.message << '\n';
}

int finish(const Report& r, std::ostream& log) {
  log_errors(r, log);
  return r.errors.empty() ? kExitOk : kExitPartial;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw ConfigError("cannot create output directory " + dir.string());
}

std::optional<NetParams> load_net_if(Algo algo, const fs::path& checkpoint) {
  if (algo != Algo::kDbld) return std::nullopt;
  if (checkpoint.empty()) throw ConfigError("dbld needs a checkpoint (--checkpoint)");
  try {
    return load_checkpoint(checkpoint);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

// --- commands -----------------------------------------------------------------

int cmd_dim(const std::vector<fs::path>& images, const RunConfig& rc, const fs::path& out_dir, std::ostream& log) {
  rc.validate();
  ensure_dir(out_dir);
  const auto net = load_net_if(rc.algo, rc.checkpoint);
  std::vector<Outcome> out(images.size());
  parallel_for(images.size(), rc.threads, [&](std::size_t i) {
    try {
      const Prepared p = prepare(read_image(images[i]), rc.display);
      const Backlight b = run_algo(rc.algo, p, rc, rc.loss.p_a, net ? &*net : nullptr);
      write_backlight(b, out_dir / (images[i].stem().string() + ".backlight" + rc.backlight_ext));
      const std::optional<double> pa = uses_power(rc.algo) ? std::optional<double>(rc.loss.p_a) : std::nullopt;
      out[i].rows.push_back(score(images[i].string(), rc.algo, pa, p, b));
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  const Report r = collect(images, out);
  write_report(r, out_dir, rc.format);
  log << "dim: " << r.rows.size() << " ok, " << r.errors.size() << " failed\n";
  return finish(r, log);
}

int cmd_simulate(const fs::path& image, const fs::path& backlight, const RunConfig& rc, const SimulateOutputs& out,
                 std::ostream& log) {
  rc.validate();
  const Prepared p = prepare(read_image(image), rc.display);
  Backlight b = [&] {
    try {
      return read_backlight(backlight, p.display.layout);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("backlight does not fit the display: ") + e.what());
    }
  }();
  const Simulation sim = simulate_full(p.target, b, p.display);
  write_image(sim.displayed, out.displayed);
  if (out.diffusion) write_pfm(sim.diffusion, *out.diffusion);
  json d = {{"image", image.string()},
            {"backlight", backlight.string()},
            {"displayed", out.displayed.string()},
            {"clipping_fraction", clipping_fraction(p.target, sim.diffusion)},
            {"diffusion_min", sim.diffusion.minCoeff()},
            {"diffusion_max", sim.diffusion.maxCoeff()},
            {"psr", psr(b)}};
  if (out.diffusion) d["diffusion"] = out.diffusion->string();
  log << d.dump(2) << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& checkpoint, const std::vector<fs::path>& images, const RunConfig& rc,
             const fs::path& out_dir, std::ostream& log) {
  rc.validate();
  if (rc.pa_list.empty()) throw ConfigError("eval: empty p_a list");
  ensure_dir(out_dir);
  NetParams net = [&] {
    try {
      return load_checkpoint(checkpoint);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("checkpoint: ") + e.what());
    }
  }();
  const NetConfig& want = rc.net;
  const NetConfig& got = net.config();
  if (want.stages != got.stages || want.widths != got.widths) {
    throw ConfigError("checkpoint shape mismatch: checkpoint has " + std::to_string(got.stages) +
                      " stages, config expects " + std::to_string(want.stages) + " (or widths differ)");
  }
  std::vector<Outcome> out(images.size());
  parallel_for(images.size(), rc.threads, [&](std::size_t i) {
    try {
      const Prepared p = prepare(read_image(images[i]), rc.display);
      for (double pa : rc.pa_list) {
        out[i].rows.push_back(score(images[i].string(), Algo::kDbld, pa, p, predict_backlight(net, p.target, pa, p.display)));
      }
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  const Report r = collect(images, out);
  write_report(r, out_dir, rc.format);
  log << "eval: " << r.rows.size() << " rows, " << r.errors.size() << " failed\n";
  return finish(r, log);
}

int cmd_sweep(const std::vector<fs::path>& images, const RunConfig& rc, const fs::path& out_dir, std::ostream& log) {
  rc.validate();
  if (rc.pa_list.empty()) throw ConfigError("sweep: empty p_a list");
  ensure_dir(out_dir);
  const auto net = load_net_if(rc.algo, rc.checkpoint);
  const bool powered = uses_power(rc.algo);
  const std::vector<double> pas = powered ? rc.pa_list : std::vector<double>{rc.pa_list.front()};
  std::vector<Outcome> out(images.size());
  parallel_for(images.size(), rc.threads, [&](std::size_t i) {
    try {
      const Prepared p = prepare(read_image(images[i]), rc.display);
      for (double pa : pas) {
        const Backlight b = run_algo(rc.algo, p, rc, pa, net ? &*net : nullptr);
        out[i].rows.push_back(score(images[i].string(), rc.algo, powered ? std::optional<double>(pa) : std::nullopt, p, b));
      }
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  const Report r = collect(images, out);
  std::vector<SweepRow> sweep;
  for (std::size_t k = 0; k < pas.size(); ++k) {
    std::vector<double> ps, pp, pm;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (out[i].error) continue;
      const auto& m = out[i].rows[k].metrics;
      ps.push_back(m.psr);
      pp.push_back(m.pu_psnr);
      pm.push_back(m.pu_ms_ssim);
    }
    sweep.push_back({to_string(rc.algo), powered ? std::optional<double>(pas[k]) : std::nullopt, ps.size(), median(ps),
                     median(pp), median(pm)});
  }
  std::ostringstream csv;
  csv << kSweepHeader << '\n';
  for (const auto& s : sweep) {
    csv << s.algo << ',' << (s.p_a ? num(*s.p_a) : "") << ',' << s.images << ',' << num(s.median_psr) << ','
        << num(s.median_pu_psnr) << ',' << num(s.median_pu_ms_ssim) << '\n';
  }
  write_text(out_dir / "sweep.csv", csv.str());
  write_report(r, out_dir, rc.format);
  if (!powered) log << "sweep: " << to_string(rc.algo) << " ignores p_a; single row\n";
  log << csv.str();
  return finish(r, log);
}

HdrImage training_view(const HdrImage& image, Index size) {
  const Index side = std::min(image.height(), image.width());
  if (side < size) throw InvalidArgument("image smaller than the training size");
  const Index top = (image.height() - side) / 2, left = (image.width() - side) / 2;
  std::array<Raster, 3> rgb;
  for (int c = 0; c < 3; ++c) {
    const Raster& src = image.channel(c);
    Raster& dst = rgb[static_cast<std::size_t>(c)];
    dst.resize(size, size);
    for (Index y = 0; y < size; ++y) {
      const Index y0 = top + y * side / size, y1 = top + (y + 1) * side / size;
      for (Index x = 0; x < size; ++x) {
        const Index x0 = left + x * side / size, x1 = left + (x + 1) * side / size;
        dst(y, x) = src.block(y0, x0, y1 - y0, x1 - x0).mean();
      }
    }
  }
  return HdrImage(std::move(rgb), image.calibration());
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".hdr" || ext == ".pfm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int cmd_train(const fs::path& dataset_dir, const RunConfig& rc, const fs::path& out_dir, std::ostream& log) {
  rc.validate();
  const auto files = list_images(dataset_dir);
  if (files.empty()) throw ConfigError("no .hdr/.pfm images in " + dataset_dir.string());
  ensure_dir(out_dir);
  std::vector<HdrImage> data;
  Report skipped;
  for (const auto& f : files) {
    try {
      data.push_back(training_view(read_image(f), rc.train_size));
    } catch (const std::exception& e) {
      skipped.errors.push_back({f.string(), e.what()});
    }
  }
  log_errors(skipped, log);
  if (data.empty()) throw ConfigError("no usable training images");
  const DisplayConfig cfg = rc.display.build(rc.train_size, rc.train_size);
  const int every = std::max(1, rc.train.max_iters / 10);
  TrainResult res;
  try {
    res = train(data, cfg, rc.loss, rc.net, rc.train, [&](const HistoryRow& h) {
      if ((h.iteration + 1) % every == 0) log << "train: iteration " << h.iteration + 1 << " loss " << h.terms.total << '\n';
    });
  } catch (const TrainingError& e) {
    write_history_csv(out_dir / "history.csv", e.history());
    throw;
  }
  save_checkpoint(out_dir / "net.ckpt", res.params);
  write_history_csv(out_dir / "history.csv", res.history);
  log << "train: " << data.size() << " images, " << res.history.size() << " iterations, "
      << res.params.parameter_count() << " parameters -> " << (out_dir / "net.ckpt").string() << '\n';
  return skipped.errors.empty() ? kExitOk : kExitPartial;
}

int cmd_compare(const std::vector<fs::path>& images, const std::vector<Algo>& algos, const RunConfig& rc,
                const fs::path& out_dir, std::ostream& log) {
  rc.validate();
  if (algos.empty()) throw ConfigError("compare: no algorithms");
  ensure_dir(out_dir);
  std::optional<NetParams> net;
  if (std::find(algos.begin(), algos.end(), Algo::kDbld) != algos.end()) net = load_net_if(Algo::kDbld, rc.checkpoint);
  std::vector<Outcome> out(images.size());
  parallel_for(images.size(), rc.threads, [&](std::size_t i) {
    try {
      const Prepared p = prepare(read_image(images[i]), rc.display);
      for (Algo a : algos) {
        const std::optional<double> pa = uses_power(a) ? std::optional<double>(rc.loss.p_a) : std::nullopt;
        out[i].rows.push_back(score(images[i].string(), a, pa, p, run_algo(a, p, rc, rc.loss.p_a, net ? &*net : nullptr)));
      }
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  const Report r = collect(images, out);
  write_report(r, out_dir, rc.format);
  std::ostringstream summary;
  summary << "algo,images,median_psr,median_pu_psnr,median_pu_ms_ssim,median_clipping_fraction\n";
  for (Algo a : algos) {
    std::vector<double> ps, pp, pm, cf;
    for (const auto& row : r.rows) {
      if (row.algo != to_string(a)) continue;
      ps.push_back(row.metrics.psr);
      pp.push_back(row.metrics.pu_psnr);
      pm.push_back(row.metrics.pu_ms_ssim);
      cf.push_back(row.metrics.clipping_fraction);
    }
    summary << to_string(a) << ',' << ps.size() << ',' << num(median(ps)) << ',' << num(median(pp)) << ','
            << num(median(pm)) << ',' << num(median(cf)) << '\n';
  }
  write_text(out_dir / "summary.csv", summary.str());
  log << summary.str();
  return finish(r, log);
}

int cmd_synth(const fs::path& out_dir, std::size_t count, Index height, Index width, std::uint64_t first_seed,
              const std::string& ext, std::ostream& log) {
  if (ext != "hdr" && ext != "pfm") throw ConfigError("synth: format must be hdr or pfm");
  if (height < 1 || width < 1) throw ConfigError("synth: size must be positive");
  ensure_dir(out_dir);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = first_seed + i;
    const fs::path path = out_dir / ("scene_" + std::to_string(seed) + "." + ext);
    write_image(synth_scene(height, width, seed), path);
    log << path.string() << '\n';
  }
  return kExitOk;
}

// --- command line ---------------------------------------------------------------

namespace {

template <typename T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;
  bool set() const { return opt && opt->count() > 0; }
};

struct Overrides {
  std::string config;
  Flag<std::string> out_format, backlight_format, algo, leds, psf, psf_file, boundary, stat_plane, loss_domain, init,
      checkpoint;
  Flag<double> pa, peak, leak, lp_c, imf_w, beta, delta, lr, rel_tol;
  Flag<int> imf_bins, iters, threads, train_iters, train_size;
  Flag<std::uint64_t> seed;
  Flag<std::vector<double>> pa_list;
};

template <typename T>
void add_flag(CLI::App* app, Flag<T>& f, const std::string& name, const std::string& help) {
  f.opt = app->add_option(name, f.value, help);
}

// Options shared by all commands that build a display.
void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, std::string("JSON config file (default: $") + kConfigEnv + ")");
  add_flag(app, o.out_format, "--format", "report format: csv or json");
  add_flag(app, o.peak, "--peak", "peak luminance in cd/m^2");
  add_flag(app, o.leds, "--leds", "LED grid as ROWSxCOLS");
  add_flag(app, o.leak, "--leak", "LC leakage floor");
  add_flag(app, o.psf, "--psf", "psf kind: gaussian, box, delta, file");
  add_flag(app, o.psf_file, "--psf-file", "grayscale PFM kernel (implies --psf file)");
  add_flag(app, o.boundary, "--boundary", "zero or circular");
  add_flag(app, o.threads, "--threads", "worker threads for per-image work");
}

void add_algo_options(CLI::App* app, Overrides& o) {
  add_flag(app, o.algo, "--algo", "max, avg, lp, imf, opt, dbld");
  add_flag(app, o.stat_plane, "--stat-plane", "max_rgb or luminance");
  add_flag(app, o.lp_c, "--lp-c", "lp correction weight");
  add_flag(app, o.imf_w, "--imf-w", "imf max/avg mixing weight");
  add_flag(app, o.imf_bins, "--imf-bins", "imf histogram bins");
  add_flag(app, o.beta, "--beta", "power term weight");
  add_flag(app, o.delta, "--delta", "smooth-L1 transition");
  add_flag(app, o.loss_domain, "--loss-domain", "linear or pu");
  add_flag(app, o.lr, "--lr", "optimizer learning rate");
  add_flag(app, o.iters, "--iters", "optimizer iteration cap");
  add_flag(app, o.rel_tol, "--rel-tol", "optimizer stopping tolerance");
  add_flag(app, o.init, "--init", "from_max, from_avg, constant");
  add_flag(app, o.checkpoint, "--checkpoint", "network checkpoint for dbld");
}

RunConfig resolve(const Overrides& o) {
  RunConfig rc;
  std::string path = o.config;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  if (!path.empty()) rc = load_config(path);
  if (o.out_format.set()) rc.format = parse_format(o.out_format.value);
  if (o.backlight_format.set()) rc.backlight_ext = backlight_ext(o.backlight_format.value);
  if (o.algo.set()) rc.algo = parse_algo(o.algo.value);
  if (o.peak.set()) rc.display.peak_nits = o.peak.value;
  if (o.leak.set()) rc.display.leak_floor = o.leak.value;
  if (o.leds.set()) {
    long r = 0, c = 0;
    char x = 0;
    std::istringstream in(o.leds.value);
    if (!(in >> r >> x >> c) || x != 'x' || r < 1 || c < 1) throw ConfigError("--leds expects ROWSxCOLS, e.g. 12x22");
    rc.display.led_rows = r;
    rc.display.led_cols = c;
  }
  if (o.psf.set()) rc.display.psf = parse_psf_kind(o.psf.value);
  if (o.psf_file.set()) {
    rc.display.psf = PsfKind::kFile;
    rc.display.psf_path = existing(".", o.psf_file.value, "psf file");
  }
  if (o.boundary.set()) rc.display.boundary = parse_boundary(o.boundary.value);
  if (o.stat_plane.set()) rc.dimmer.plane = as_config([&] { return parse_stat_plane(o.stat_plane.value); });
  if (o.lp_c.set()) rc.dimmer.lp_c = o.lp_c.value;
  if (o.imf_w.set()) rc.dimmer.imf_w = o.imf_w.value;
  if (o.imf_bins.set()) rc.dimmer.imf_bins = o.imf_bins.value;
  if (o.pa.set()) rc.loss.p_a = o.pa.value;
  if (o.beta.set()) rc.loss.beta = o.beta.value;
  if (o.delta.set()) rc.loss.delta = o.delta.value;
  if (o.loss_domain.set()) rc.loss.domain = as_config([&] { return parse_loss_domain(o.loss_domain.value); });
  if (o.lr.set()) rc.optim.lr = o.lr.value;
  if (o.iters.set()) rc.optim.max_iters = o.iters.value;
  if (o.rel_tol.set()) rc.optim.rel_tol = o.rel_tol.value;
  if (o.init.set()) rc.optim.init = as_config([&] { return parse_init_kind(o.init.value); });
  if (o.checkpoint.set()) rc.checkpoint = existing(".", o.checkpoint.value, "checkpoint");
  if (o.threads.set()) rc.threads = o.threads.value;
  if (o.seed.set()) rc.net.seed = o.seed.value;
  if (o.train_iters.set()) rc.train.max_iters = o.train_iters.value;
  if (o.train_size.set()) rc.train_size = o.train_size.value;
  if (o.pa_list.set()) rc.pa_list = o.pa_list.value;
  rc.validate();
  return rc;
}

std::vector<fs::path> as_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"HDR dual-panel display simulation and local dimming"};
  app.require_subcommand(1);
  // CLI11 options belong to one subcommand, so each gets its own overrides.
  Overrides o_dim, o_sim, o_ev, o_sw, o_tr, o_cmp;
  std::vector<std::string> inputs;
  std::string out_dir = "out", image, backlight, displayed, diffusion, dataset, algos = "max,avg,lp,imf,opt", ext = "hdr";
  std::size_t count = 16;
  Index height = 128, width = 128;
  Flag<std::uint64_t> first_seed;
  first_seed.value = 1;

  CLI::App* dim = app.add_subcommand("dim", "run a dimming algorithm on images");
  dim->add_option("images", inputs, "input .hdr/.pfm files")->required();
  dim->add_option("-o,--out", out_dir, "output directory");
  add_common(dim, o_dim);
  add_algo_options(dim, o_dim);
  add_flag(dim, o_dim.pa, "--pa", "power parameter p_a");
  add_flag(dim, o_dim.backlight_format, "--backlight-format", "json or csv");

  CLI::App* sim = app.add_subcommand("simulate", "simulate the display for an image and backlight");
  sim->add_option("image", image, "input image")->required();
  sim->add_option("-b,--backlight", backlight, "backlight .json/.csv")->required();
  sim->add_option("-o,--out", displayed, "displayed image (.hdr or .pfm)")->required();
  sim->add_option("--diffusion", diffusion, "write the diffused backlight as grayscale .pfm");
  add_common(sim, o_sim);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a trained network");
  ev->add_option("images", inputs, "input .hdr/.pfm files")->required();
  add_flag(ev, o_ev.checkpoint, "--checkpoint", "network checkpoint");
  o_ev.checkpoint.opt->required();
  ev->add_option("-o,--out", out_dir, "output directory");
  add_flag(ev, o_ev.pa_list, "--pa-list", "comma-separated p_a values");
  o_ev.pa_list.opt->delimiter(',');
  add_common(ev, o_ev);

  CLI::App* sw = app.add_subcommand("sweep", "sweep p_a and report medians");
  sw->add_option("images", inputs, "input .hdr/.pfm files")->required();
  sw->add_option("-o,--out", out_dir, "output directory");
  add_common(sw, o_sw);
  add_algo_options(sw, o_sw);
  add_flag(sw, o_sw.pa_list, "--pa-list", "comma-separated p_a values");
  o_sw.pa_list.opt->delimiter(',');

  CLI::App* tr = app.add_subcommand("train", "train the network on a directory of images");
  tr->add_option("dataset", dataset, "directory of .hdr/.pfm images")->required();
  tr->add_option("-o,--out", out_dir, "output directory");
  add_common(tr, o_tr);
  add_flag(tr, o_tr.train_iters, "--iterations", "training iterations");
  add_flag(tr, o_tr.train_size, "--size", "training crop size");
  add_flag(tr, o_tr.seed, "--seed", "random seed");
  add_flag(tr, o_tr.beta, "--beta", "power term weight");

  CLI::App* cmp = app.add_subcommand("compare", "table of several algorithms over one image set");
  cmp->add_option("images", inputs, "input .hdr/.pfm files")->required();
  cmp->add_option("-o,--out", out_dir, "output directory");
  cmp->add_option("--algos", algos, "comma-separated algorithms");
  add_common(cmp, o_cmp);
  add_flag(cmp, o_cmp.pa, "--pa", "power parameter for opt/dbld");
  add_flag(cmp, o_cmp.checkpoint, "--checkpoint", "network checkpoint for dbld");
  add_flag(cmp, o_cmp.iters, "--iters", "optimizer iteration cap");

  CLI::App* sy = app.add_subcommand("synth", "write synthetic HDR scenes");
  sy->add_option("-o,--out", out_dir, "output directory")->required();
  sy->add_option("--count", count, "number of scenes");
  sy->add_option("--height", height, "rows");
  sy->add_option("--width", width, "columns");
  add_flag(sy, first_seed, "--seed", "first seed");
  sy->add_option("--ext", ext, "hdr or pfm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (sy->parsed()) return cmd_synth(out_dir, count, height, width, first_seed.value, ext, err);
    if (dim->parsed()) return cmd_dim(as_paths(inputs), resolve(o_dim), out_dir, err);
    if (sim->parsed()) {
      SimulateOutputs so{displayed, std::nullopt};
      if (!diffusion.empty()) so.diffusion = fs::path(diffusion);
      return cmd_simulate(image, backlight, resolve(o_sim), so, out);
    }
    if (ev->parsed()) {
      const RunConfig rc = resolve(o_ev);
      return cmd_eval(rc.checkpoint, as_paths(inputs), rc, out_dir, err);
    }
    if (sw->parsed()) return cmd_sweep(as_paths(inputs), resolve(o_sw), out_dir, err);
    if (tr->parsed()) return cmd_train(dataset, resolve(o_tr), out_dir, err);
    if (cmp->parsed()) {
      std::vector<Algo> list;
      std::stringstream ss(algos);
      for (std::string a; std::getline(ss, a, ',');) list.push_back(parse_algo(a));
      return cmd_compare(as_paths(inputs), list, resolve(o_cmp), out_dir, err);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitPartial;
  }
  return kExitConfig;
}

}  // namespace dimlab::app
