#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimlab/dbldnet.hpp"
#include "dimlab/dimmers.hpp"
#include "dimlab/display.hpp"
#include "dimlab/metrics.hpp"
#include "dimlab/optim.hpp"

namespace dimlab::app {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitConfig = 2;

inline constexpr const char* kConfigEnv = "DIMLAB_CONFIG";

/// Bad configuration or arguments (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PsfKind { kGaussian, kBox, kDelta, kFile };

/// Display parameters that do not depend on the panel size.
struct DisplaySpec {
  Index led_rows = 12;
  Index led_cols = 22;
  double peak_nits = 4000.0;
  double leak_floor = 0.001;
  Boundary boundary = Boundary::kZeroPad;
  PsfKind psf = PsfKind::kGaussian;
  double sigma_factor = 0.6;   // gaussian: sigma = factor x mean pitch
  double radius_sigmas = 3.0;  // gaussian: support radius
  fs::path psf_path;           // file
  bool normalize = true;       // gaussian/file: scale to peak at the panel centre

  /// kBox: a segment-sized box of ones, unnormalised, so each LED lights its
  /// own segment at its drive level.
  DisplayConfig build(Index height, Index width) const;
};

enum class Algo { kMax, kAvg, kLp, kImf, kOpt, kDbld };

const char* to_string(Algo a);
Algo parse_algo(const std::string& name);
/// Whether p_a affects the algorithm.
bool uses_power(Algo a);

enum class ReportFormat { kCsv, kJson };

struct RunConfig {
  DisplaySpec display;
  Algo algo = Algo::kMax;
  DimmerSpec dimmer;
  LossConfig loss;
  OptimConfig optim;
  NetConfig net;
  OptimConfig train;  // max_iters = training iterations
  Index train_size = 128;
  fs::path checkpoint;
  ReportFormat format = ReportFormat::kCsv;
  std::string backlight_ext = ".json";
  std::vector<double> pa_list{0.0, 0.25, 0.5, 0.75, 1.0};
  int threads = 1;

  RunConfig() { train.max_iters = 2000; }
  void validate() const;
};

/// JSON config file. Unknown keys are errors; relative paths resolve against
/// the file's directory and must exist.
RunConfig load_config(const fs::path& path);
void apply_config_json(RunConfig& rc, const std::string& text, const fs::path& base_dir);

/// Image in display nits plus the display built for its size.
struct Prepared {
  HdrImage target;
  DisplayConfig display;
};

Prepared prepare(const HdrImage& image, const DisplaySpec& spec);

/// Runs one algorithm. kDbld needs `net`.
Backlight run_algo(Algo algo, const Prepared& p, const RunConfig& rc, double p_a, const NetParams* net = nullptr);

struct ReportRow {
  std::string image;
  std::string algo;
  std::optional<double> p_a;  // empty when the algorithm ignores it
  MetricReport metrics;
  double mean_drive = 0.0;
};

struct ErrorRow {
  std::string image;
  std::string message;
};

struct Report {
  std::vector<ReportRow> rows;
  std::vector<ErrorRow> errors;
};

ReportRow score(const std::string& image, Algo algo, std::optional<double> p_a, const Prepared& p, const Backlight& b);

/// image,algo,p_a,psr,pu_psnr,pu_ms_ssim,ms_ssim_scales,clipping_fraction,mean_drive
inline constexpr const char* kReportHeader =
    "image,algo,p_a,psr,pu_psnr,pu_ms_ssim,ms_ssim_scales,clipping_fraction,mean_drive";

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
void write_errors_csv(std::ostream& out, const std::vector<ErrorRow>& errors);
std::string report_json(const Report& report);

/// Writes report.{csv,json} (and errors.csv when needed for CSV) into `dir`.
void write_report(const Report& report, const fs::path& dir, ReportFormat format);

struct SweepRow {
  std::string algo;
  std::optional<double> p_a;
  std::size_t images = 0;
  double median_psr = 0.0;
  double median_pu_psnr = 0.0;
  double median_pu_ms_ssim = 0.0;
};

inline constexpr const char* kSweepHeader = "algo,p_a,images,median_psr,median_pu_psnr,median_pu_ms_ssim";

double median(std::vector<double> v);

// --- commands ---------------------------------------------------------------

/// Per image: run the configured algorithm (p_a from rc.loss.p_a), write
/// <stem>.backlight<ext> and a report row. Unreadable images become error rows.
int cmd_dim(const std::vector<fs::path>& images, const RunConfig& rc, const fs::path& out_dir, std::ostream& log);

struct SimulateOutputs {
  fs::path displayed;                // .hdr or .pfm
  std::optional<fs::path> diffusion;  // grayscale .pfm
};

/// Prints a JSON diagnostics object to `log`.
int cmd_simulate(const fs::path& image, const fs::path& backlight, const RunConfig& rc, const SimulateOutputs& out,
                 std::ostream& log);

/// One row per image per p_a, algorithm dbld, same schema as cmd_dim.
int cmd_eval(const fs::path& checkpoint, const std::vector<fs::path>& images, const RunConfig& rc,
             const fs::path& out_dir, std::ostream& log);

/// sweep.csv: one row per p_a (medians over images); classical algorithms
/// give a single row with an empty p_a.
int cmd_sweep(const std::vector<fs::path>& images, const RunConfig& rc, const fs::path& out_dir, std::ostream& log);

/// net.ckpt and history.csv in out_dir.
int cmd_train(const fs::path& dataset_dir, const RunConfig& rc, const fs::path& out_dir, std::ostream& log);

/// Rows for every image x algorithm, then a per-algorithm median summary.
int cmd_compare(const std::vector<fs::path>& images, const std::vector<Algo>& algos, const RunConfig& rc,
                const fs::path& out_dir, std::ostream& log);

/// Writes synthetic scenes scene_<seed>.<ext>.
int cmd_synth(const fs::path& out_dir, std::size_t count, Index height, Index width, std::uint64_t first_seed,
              const std::string& ext, std::ostream& log);

/// Centre square crop then box-filter resample to size x size.
HdrImage training_view(const HdrImage& image, Index size);

/// .hdr/.pfm files in a directory, sorted by name.
std::vector<fs::path> list_images(const fs::path& dir);

/// Command-line entry point.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace dimlab::app
