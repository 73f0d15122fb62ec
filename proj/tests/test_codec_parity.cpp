// Decode parity against OpenCV's Radiance reader on the fixture corpus.
#include <filesystem>
#include <random>

#include "doctest.h"
#include "dimlab/hdrio.hpp"
#include "support/reference_codec.hpp"

using namespace dimlab;

TEST_CASE("RGBE decode matches the reference codec on every fixture") {
  const auto files = oracle::rgbe_fixture_files();
  REQUIRE(files.size() == 5);
  for (const auto& f : files) {
    CAPTURE(f.string());
    CHECK(oracle::rgbe_parity_mismatches(f) == 0);
  }
}

TEST_CASE("files written by our encoder decode identically in the reference codec") {
  std::mt19937_64 rng(77);
  std::lognormal_distribution<double> d(0.0, 2.0);
  for (bool rle : {true, false}) {
    std::array<Raster, 3> rgb;
    for (auto& c : rgb) {
      c.resize(21, 45);
      for (Index i = 0; i < c.size(); ++i) c.data()[i] = d(rng);
    }
    const auto path = std::filesystem::temp_directory_path() / "dimlab_parity_out.hdr";
    write_hdr(HdrImage(std::move(rgb)), path, {rle});
    CHECK(oracle::rgbe_parity_mismatches(path) == 0);
    std::filesystem::remove(path);
  }
}
