#pragma once

// OpenCV's Radiance reader as an independent RGBE decoder. Test-only.

#include <algorithm>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "dimlab/hdrio.hpp"

#ifndef DIMLAB_FIXTURE_DIR
#error "DIMLAB_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace dimlab::oracle {

inline std::filesystem::path fixture_dir() { return DIMLAB_FIXTURE_DIR; }

inline std::vector<std::filesystem::path> rgbe_fixture_files() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(fixture_dir() / "rgbe")) {
    if (e.path().extension() == ".hdr") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Number of channel samples where our decoder and OpenCV disagree, after
/// rounding ours to binary32 (OpenCV decodes to float). -1 if OpenCV fails.
inline long rgbe_parity_mismatches(const std::filesystem::path& path) {
  const cv::Mat ref = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (ref.empty() || ref.type() != CV_32FC3) return -1;
  const HdrImage ours = read_hdr(path);
  if (ours.height() != ref.rows || ours.width() != ref.cols) return -1;
  long bad = 0;
  for (int y = 0; y < ref.rows; ++y) {
    for (int x = 0; x < ref.cols; ++x) {
      const auto& bgr = ref.at<cv::Vec3f>(y, x);
      for (int c = 0; c < 3; ++c) {
        if (static_cast<float>(ours.channel(c)(y, x)) != bgr[2 - c]) ++bad;
      }
    }
  }
  return bad;
}

}  // namespace dimlab::oracle
