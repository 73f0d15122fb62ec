#include "dimlab/hdrio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace dimlab {

const char* to_string(DecodeErrorKind kind) {
  switch (kind) {
    case DecodeErrorKind::kIo: return "io error";
    case DecodeErrorKind::kMalformedHeader: return "malformed header";
    case DecodeErrorKind::kTruncated: return "truncated scanline";
    case DecodeErrorKind::kUnsupportedOrientation: return "unsupported orientation";
    case DecodeErrorKind::kSizeMismatch: return "size mismatch";
    case DecodeErrorKind::kInvalidSample: return "invalid sample";
  }
  return "decode error";
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DecodeError(DecodeErrorKind::kIo, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  bool at_end() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  // Returns false at EOF. The newline is consumed but not returned.
  bool line(std::string& out) {
    if (at_end()) return false;
    const auto nl = bytes_.find('\n', pos_);
    const auto end = nl == std::string::npos ? bytes_.size() : nl;
    out.assign(bytes_, pos_, end - pos_);
    pos_ = nl == std::string::npos ? bytes_.size() : nl + 1;
    return true;
  }

  std::uint8_t byte() {
    if (at_end()) {
      throw DecodeError(DecodeErrorKind::kTruncated, "unexpected end of pixel data");
    }
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  void read(void* dst, std::size_t n) {
    if (remaining() < n) {
      throw DecodeError(DecodeErrorKind::kTruncated, "unexpected end of pixel data");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

struct Orientation {
  bool flip_rows = false;
  bool flip_cols = false;
  Index width = 0;
  Index height = 0;
};

Orientation parse_resolution(const std::string& line) {
  std::istringstream ss(line);
  std::string a, b;
  long long n1 = 0, n2 = 0;
  if (!(ss >> a >> n1 >> b >> n2) || a.size() != 2 || b.size() != 2) {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "bad resolution string '" + line + "'");
  }
  const auto valid_sign = [](char c) { return c == '+' || c == '-'; };
  if (!valid_sign(a[0]) || !valid_sign(b[0])) {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "bad resolution string '" + line + "'");
  }
  if (n1 < 1 || n2 < 1 || n1 > (1 << 20) || n2 > (1 << 20)) {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "bad image dimensions in '" + line + "'");
  }
  if (a[1] == 'X' && b[1] == 'Y') {
    throw DecodeError(DecodeErrorKind::kUnsupportedOrientation,
                      "column-major orientation '" + line + "' is not supported");
  }
  if (a[1] != 'Y' || b[1] != 'X') {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "bad resolution string '" + line + "'");
  }
  Orientation o;
  o.flip_rows = a[0] == '+';
  o.flip_cols = b[0] == '-';
  o.height = static_cast<Index>(n1);
  o.width = static_cast<Index>(n2);
  return o;
}

// One scanline into `out` (width * 4 bytes, RGBE interleaved).
void read_scanline(ByteReader& in, Index width, std::vector<std::uint8_t>& out) {
  out.assign(static_cast<std::size_t>(width) * 4, 0);
  const bool rle_capable = width >= 8 && width <= 0x7fff;
  std::array<std::uint8_t, 4> first{};
  in.read(first.data(), 4);

  if (rle_capable && first[0] == 2 && first[1] == 2 && (first[2] & 0x80) == 0) {
    const Index encoded_width = (Index{first[2]} << 8) | first[3];
    if (encoded_width != width) {
      throw DecodeError(DecodeErrorKind::kSizeMismatch, "scanline width does not match header");
    }
    for (int c = 0; c < 4; ++c) {
      Index x = 0;
      while (x < width) {
        std::uint8_t count = in.byte();
        if (count > 128) {
          count = static_cast<std::uint8_t>(count - 128);
          const std::uint8_t value = in.byte();
          if (x + count > width) {
            throw DecodeError(DecodeErrorKind::kSizeMismatch, "run overflows scanline");
          }
          for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(x++) * 4 + c] = value;
        } else {
          if (count == 0 || x + count > width) {
            throw DecodeError(DecodeErrorKind::kSizeMismatch, "bad literal run in scanline");
          }
          for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(x++) * 4 + c] = in.byte();
        }
      }
    }
    return;
  }

  // Flat pixels, possibly with old-style (1,1,1,n) repeat markers.
  Index x = 0;
  int shift = 0;
  std::array<std::uint8_t, 4> px = first;
  bool have = true;
  while (x < width) {
    if (!have) in.read(px.data(), 4);
    have = false;
    if (px[0] == 1 && px[1] == 1 && px[2] == 1) {
      if (x == 0) {
        throw DecodeError(DecodeErrorKind::kSizeMismatch, "repeat marker at scanline start");
      }
      const Index count = Index{px[3]} << shift;
      if (x + count > width) {
        throw DecodeError(DecodeErrorKind::kSizeMismatch, "repeat run overflows scanline");
      }
      for (Index i = 0; i < count; ++i, ++x) {
        std::memcpy(&out[static_cast<std::size_t>(x) * 4], &out[static_cast<std::size_t>(x - 1) * 4], 4);
      }
      shift += 8;
    } else {
      std::memcpy(&out[static_cast<std::size_t>(x) * 4], px.data(), 4);
      ++x;
      shift = 0;
    }
  }
}

void append_rle_channel(std::string& out, const std::uint8_t* data, Index n) {
  constexpr Index kMinRun = 4;
  Index cur = 0;
  while (cur < n) {
    Index beg_run = cur;
    Index run_count = 0;
    Index old_run_count = 0;
    // Locate the next run of at least kMinRun identical bytes.
    while (run_count < kMinRun && beg_run < n) {
      beg_run += run_count;
      old_run_count = run_count;
      run_count = 1;
      while (beg_run + run_count < n && run_count < 127 && data[beg_run] == data[beg_run + run_count]) {
        ++run_count;
      }
    }
    // A short run just before the long one is cheaper as a run than as literals.
    if (old_run_count > 1 && old_run_count == beg_run - cur) {
      out.push_back(static_cast<char>(128 + old_run_count));
      out.push_back(static_cast<char>(data[cur]));
      cur = beg_run;
    }
    while (cur < beg_run) {
      const Index nonrun = std::min<Index>(128, beg_run - cur);
      out.push_back(static_cast<char>(nonrun));
      out.append(reinterpret_cast<const char*>(data + cur), static_cast<std::size_t>(nonrun));
      cur += nonrun;
    }
    if (run_count >= kMinRun) {
      out.push_back(static_cast<char>(128 + run_count));
      out.push_back(static_cast<char>(data[beg_run]));
      cur += run_count;
    }
  }
}

template <typename T>
T swap_bytes(T v) {
  static_assert(sizeof(T) == 4);
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  u = ((u & 0xff) << 24) | ((u & 0xff00) << 8) | ((u >> 8) & 0xff00) | (u >> 24);
  std::memcpy(&v, &u, 4);
  return v;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Rgbe float_to_rgbe(double r, double g, double b) {
  const double v = std::max({r, g, b});
  if (!(v >= 1e-32)) {
    return {0, 0, 0, 0};
  }
  int e = 0;
  const double mantissa = std::frexp(v, &e);
  if (e + 128 > 255) {
    return {255, 255, 255, 255};
  }
  const double scale = mantissa * 256.0 / v;
  const auto q = [&](double c) {
    return static_cast<std::uint8_t>(std::clamp(c * scale, 0.0, 255.0));
  };
  return {q(r), q(g), q(b), static_cast<std::uint8_t>(e + 128)};
}

std::array<double, 3> rgbe_to_float(const Rgbe& px) {
  if (px[3] == 0) {
    return {0.0, 0.0, 0.0};
  }
  const double f = std::ldexp(1.0, int{px[3]} - (128 + 8));
  return {px[0] * f, px[1] * f, px[2] * f};
}

HdrImage decode_hdr(const std::string& bytes) {
  ByteReader in(bytes);
  std::string line;
  if (!in.line(line) || !(line.rfind("#?RADIANCE", 0) == 0 || line.rfind("#?RGBE", 0) == 0)) {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "missing #?RADIANCE / #?RGBE magic");
  }
  std::optional<double> nits;
  for (;;) {
    if (!in.line(line)) {
      throw DecodeError(DecodeErrorKind::kMalformedHeader, "header not terminated");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;
    if (line.rfind("FORMAT=", 0) == 0 && line != "FORMAT=32-bit_rle_rgbe") {
      throw DecodeError(DecodeErrorKind::kMalformedHeader, "unsupported " + line);
    }
    if (line.rfind("NITSPERUNIT=", 0) == 0) {
      char* end = nullptr;
      const double v = std::strtod(line.c_str() + 12, &end);
      if (end == line.c_str() + 12 || !(v > 0.0) || !std::isfinite(v)) {
        throw DecodeError(DecodeErrorKind::kMalformedHeader, "bad " + line);
      }
      nits = v;
    }
  }
  if (!in.line(line)) {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "missing resolution string");
  }
  const Orientation o = parse_resolution(line);

  std::array<Raster, 3> rgb;
  for (auto& c : rgb) c.resize(o.height, o.width);
  std::vector<std::uint8_t> scan;
  for (Index y = 0; y < o.height; ++y) {
    read_scanline(in, o.width, scan);
    const Index row = o.flip_rows ? o.height - 1 - y : y;
    for (Index x = 0; x < o.width; ++x) {
      const Index col = o.flip_cols ? o.width - 1 - x : x;
      const std::size_t k = static_cast<std::size_t>(x) * 4;
      const auto v = rgbe_to_float({scan[k], scan[k + 1], scan[k + 2], scan[k + 3]});
      rgb[0](row, col) = v[0];
      rgb[1](row, col) = v[1];
      rgb[2](row, col) = v[2];
    }
  }
  return HdrImage(std::move(rgb), nits);
}

HdrImage read_hdr(const std::filesystem::path& path) { return decode_hdr(slurp(path)); }

std::string encode_hdr(const HdrImage& image, HdrWriteOptions opts) {
  image.validate();
  const Index w = image.width();
  const Index h = image.height();
  std::string out = "#?RADIANCE\n# dimlab\nFORMAT=32-bit_rle_rgbe\n";
  if (image.calibrated()) {
    out += "NITSPERUNIT=" + format_number(image.nits_per_unit()) + "\n";
  }
  out += "\n-Y " + std::to_string(h) + " +X " + std::to_string(w) + "\n";

  const bool rle = opts.run_length && w >= 8 && w <= 0x7fff;
  std::vector<std::uint8_t> planes(static_cast<std::size_t>(w) * 4);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Rgbe px = float_to_rgbe(image.channel(0)(y, x), image.channel(1)(y, x), image.channel(2)(y, x));
      if (rle) {
        for (int c = 0; c < 4; ++c) planes[static_cast<std::size_t>(c * w + x)] = px[c];
      } else {
        out.append(reinterpret_cast<const char*>(px.data()), 4);
      }
    }
    if (rle) {
      out.push_back(2);
      out.push_back(2);
      out.push_back(static_cast<char>(w >> 8));
      out.push_back(static_cast<char>(w & 0xff));
      for (int c = 0; c < 4; ++c) append_rle_channel(out, &planes[static_cast<std::size_t>(c * w)], w);
    }
  }
  return out;
}

void write_hdr(const HdrImage& image, const std::filesystem::path& path, HdrWriteOptions opts) {
  spit(path, encode_hdr(image, opts));
}

namespace {

struct PfmHeader {
  int channels = 0;
  Index width = 0;
  Index height = 0;
  bool little_endian = true;
  double scale = 1.0;
};

// PFM headers are whitespace-separated tokens; the raster starts after the
// single whitespace byte that follows the scale.
PfmHeader parse_pfm_header(const std::string& bytes, std::size_t& pos) {
  const auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) {
      throw DecodeError(DecodeErrorKind::kMalformedHeader, "PFM header ends prematurely");
    }
    return bytes.substr(start, pos - start);
  };
  PfmHeader hdr;
  const std::string magic = token();
  if (magic == "PF") {
    hdr.channels = 3;
  } else if (magic == "Pf") {
    hdr.channels = 1;
  } else {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "bad PFM magic '" + magic + "'");
  }
  try {
    std::size_t used = 0;
    const std::string ws = token();
    const long long w = std::stoll(ws, &used);
    if (used != ws.size()) throw std::invalid_argument(ws);
    const std::string hs = token();
    const long long h = std::stoll(hs, &used);
    if (used != hs.size()) throw std::invalid_argument(hs);
    const std::string ss = token();
    const double s = std::stod(ss, &used);
    if (used != ss.size()) throw std::invalid_argument(ss);
    if (w < 1 || h < 1 || w > (1 << 20) || h > (1 << 20) || s == 0.0 || !std::isfinite(s)) {
      throw std::invalid_argument("range");
    }
    hdr.width = static_cast<Index>(w);
    hdr.height = static_cast<Index>(h);
    hdr.scale = s;
    hdr.little_endian = s < 0.0;
  } catch (const std::logic_error&) {
    throw DecodeError(DecodeErrorKind::kMalformedHeader, "bad PFM dimensions or scale");
  }
  if (pos >= bytes.size()) {
    throw DecodeError(DecodeErrorKind::kSizeMismatch, "PFM raster missing");
  }
  ++pos;
  return hdr;
}

std::vector<float> pfm_samples(const std::string& bytes, PfmHeader& hdr) {
  std::size_t pos = 0;
  hdr = parse_pfm_header(bytes, pos);
  const std::size_t n = static_cast<std::size_t>(hdr.width * hdr.height * hdr.channels);
  if (bytes.size() - pos != n * sizeof(float)) {
    throw DecodeError(DecodeErrorKind::kSizeMismatch,
                      "PFM raster has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(n * sizeof(float)));
  }
  std::vector<float> samples(n);
  std::memcpy(samples.data(), bytes.data() + pos, n * sizeof(float));
  const bool host_little = std::endian::native == std::endian::little;
  if (hdr.little_endian != host_little) {
    for (auto& f : samples) f = swap_bytes(f);
  }
  return samples;
}

std::string pfm_bytes(const Raster* const* planes, int channels) {
  const Index h = planes[0]->rows();
  const Index w = planes[0]->cols();
  std::string out = std::string(channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(w) + " " +
                    std::to_string(h) + "\n" + (std::endian::native == std::endian::little ? "-1.0" : "1.0") +
                    "\n";
  std::vector<float> row(static_cast<std::size_t>(w * channels));
  for (Index y = h - 1; y >= 0; --y) {
    for (Index x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        row[static_cast<std::size_t>(x * channels + c)] = static_cast<float>((*planes[c])(y, x));
      }
    }
    out.append(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
  }
  return out;
}

}  // namespace

HdrImage decode_pfm(const std::string& bytes) {
  PfmHeader hdr;
  const std::vector<float> s = pfm_samples(bytes, hdr);
  std::array<Raster, 3> rgb;
  for (auto& c : rgb) c.resize(hdr.height, hdr.width);
  for (Index y = 0; y < hdr.height; ++y) {
    const Index row = hdr.height - 1 - y;
    for (Index x = 0; x < hdr.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src_c = hdr.channels == 3 ? c : 0;
        const float v = s[static_cast<std::size_t>((y * hdr.width + x) * hdr.channels + src_c)];
        if (!std::isfinite(v) || v < 0.0f) {
          throw DecodeError(DecodeErrorKind::kInvalidSample, "PFM sample is negative or not finite");
        }
        rgb[static_cast<std::size_t>(c)](row, x) = v;
      }
    }
  }
  return HdrImage(std::move(rgb));
}

HdrImage read_pfm(const std::filesystem::path& path) { return decode_pfm(slurp(path)); }

Raster read_pfm_gray(const std::filesystem::path& path) {
  const HdrImage img = read_pfm(path);
  if (!(img.channel(0) == img.channel(1)).all() || !(img.channel(0) == img.channel(2)).all()) {
    throw DecodeError(DecodeErrorKind::kSizeMismatch, path.string() + " is not a grayscale map");
  }
  return img.channel(0);
}

std::string encode_pfm(const HdrImage& image) {
  image.validate();
  const Raster* planes[3] = {&image.channel(0), &image.channel(1), &image.channel(2)};
  return pfm_bytes(planes, 3);
}

std::string encode_pfm(const Raster& gray) {
  if (gray.size() == 0 || !gray.allFinite()) {
    throw InvalidArgument("encode_pfm: raster must be non-empty and finite");
  }
  const Raster* planes[1] = {&gray};
  return pfm_bytes(planes, 1);
}

void write_pfm(const HdrImage& image, const std::filesystem::path& path) { spit(path, encode_pfm(image)); }
void write_pfm(const Raster& gray, const std::filesystem::path& path) { spit(path, encode_pfm(gray)); }

namespace {
std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext;
}
}  // namespace

HdrImage read_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".pfm") return read_pfm(path);
  return read_hdr(path);
}

void write_image(const HdrImage& image, const std::filesystem::path& path) {
  if (lower_ext(path) == ".pfm") {
    write_pfm(image, path);
  } else {
    write_hdr(image, path);
  }
}

}  // namespace dimlab
