#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dimlab/autodiff.hpp"
#include "dimlab/display.hpp"
#include "dimlab/optim.hpp"

namespace dimlab {

/// Small power-conditioned UNet. Input: RGB in [0, 1] plus a constant plane
/// holding p_a. Level s (0 = full resolution) has widths[s] channels; there
/// are `stages` stride-2 downsamplings, the bottleneck reusing widths.back().
struct NetConfig {
  int in_channels = 4;
  int stages = 3;
  std::vector<int> widths{16, 32, 64};
  double norm_eps = 1e-5;
  std::uint64_t seed = 1;

  void validate() const;
  int width(int level) const { return widths[static_cast<std::size_t>(std::min(level, stages - 1))]; }
};

struct ParamInfo {
  std::string name;
  std::vector<Index> shape;  // conv: {out, in, k, k}; bias/affine: {channels}
  Index offset = 0;
  Index size = 0;
};

class NetParams {
 public:
  NetParams() = default;
  /// Layout for `config`, values zero.
  explicit NetParams(const NetConfig& config);

  /// He-style uniform conv weights, zero biases, unit/zero norm affine.
  static NetParams initialize(const NetConfig& config);

  const NetConfig& config() const { return config_; }
  const std::vector<ParamInfo>& tensors() const { return infos_; }
  const ParamInfo& info(const std::string& name) const;
  Index parameter_count() const { return values_.size(); }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  void validate() const;

 private:
  NetConfig config_;
  std::vector<ParamInfo> infos_;
  Eigen::VectorXd values_;
};

/// Container: magic "DBLDCKPT", u32 version, u32 JSON length, JSON (config and
/// tensor table), then float64 little-endian values in table order.
void save_checkpoint(const std::filesystem::path& path, const NetParams& params);
NetParams load_checkpoint(const std::filesystem::path& path);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A recorded forward pass. `map` is the sigmoid output on the padded grid;
/// params[i] is the leaf for tensors()[i].
template <typename S>
struct NetForward {
  ad::Tape<S> tape;
  ad::Var map = -1;
  ad::Var input = -1;
  std::vector<ad::Var> params;
  Index height = 0, width = 0;  // unpadded input size
};

/// Network input tensor: RGB of `image01` then a plane of p_a, zero-padded on
/// the bottom/right to a multiple of 2^stages.
template <typename S>
ad::Tensor<S> network_input(const HdrImage& image01, double p_a, int stages);

template <typename S>
NetForward<S> forward_tape(const NetParams& params, const HdrImage& image01, double p_a);

/// Gradient over all parameters (flat, tensors() order) from dL/d(map),
/// given on the unpadded grid.
template <typename S>
Eigen::VectorXd backward(NetForward<S>& fwd, const Raster& upstream);

/// Forward in float, cropped to the input size. Values in (0, 1).
Raster predict_map(const NetParams& params, const HdrImage& image01, double p_a);

/// Map sampled at the LED centres.
Backlight sample_centers(const Raster& map, const LayoutPtr& layout);
/// Adjoint of sample_centers: dL/dB scattered to the centre pixels.
Raster scatter_centers(const Eigen::VectorXd& grad, const BacklightLayout& layout);

Backlight predict_backlight(const NetParams& params, const HdrImage& target_nits, double p_a, const DisplayConfig& cfg);

/// target / peak_nits, calibrated to 1.
HdrImage normalize_for_net(const HdrImage& target_nits, double peak_nits);

struct HistoryRow {
  int iteration = 0;
  std::size_t image = 0;
  double p_a = 0.0;
  LossTerms terms;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::vector<HistoryRow> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<HistoryRow>& history() const { return history_; }

 private:
  std::vector<HistoryRow> history_;
};

struct TrainResult {
  NetParams params;
  std::vector<HistoryRow> history;
};

using TrainProgress = std::function<void(const HistoryRow&)>;

/// One image per iteration: pick an image, rescale its maximum to
/// U[3000, 5000] nits and clip at peak_nits, draw p_a ~ U[0, 1], then take an
/// Adam step (oc.lr, oc.beta1, oc.beta2) on the loss of the sampled backlight.
/// Runs oc.max_iters iterations; randomness comes from nc.seed.
TrainResult train(const std::vector<HdrImage>& dataset, const DisplayConfig& cfg, const LossConfig& lc,
                  const NetConfig& nc, const OptimConfig& oc, const TrainProgress& progress = {},
                  std::optional<NetParams> start = std::nullopt);

/// Columns iteration,image,p_a,L,L_reg,L_mag.
void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& history);

}  // namespace dimlab
