#include "dimlab/display_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dimlab/hdrio.hpp"
#include "json.hpp"

namespace dimlab {

using nlohmann::json;

namespace {

json layout_json(const BacklightLayout& l) {
  return json{{"led_rows", l.led_rows()},
              {"led_cols", l.led_cols()},
              {"panel_height", l.panel_height()},
              {"panel_width", l.panel_width()},
              {"max_drive_nits", l.max_drive_nits()}};
}

BacklightLayout layout_of(const json& j) {
  try {
    return BacklightLayout(j.at("led_rows").get<Index>(), j.at("led_cols").get<Index>(),
                           j.at("panel_height").get<Index>(), j.at("panel_width").get<Index>(),
                           j.at("max_drive_nits").get<double>());
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("layout: ") + e.what());
  }
}

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string(what) + ": " + e.what());
  }
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string ext_of(const std::filesystem::path& path) {
  std::string e = path.extension().string();
  for (auto& ch : e) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return e;
}

}  // namespace

std::string layout_to_json(const BacklightLayout& layout) { return layout_json(layout).dump(2); }

BacklightLayout layout_from_json(const std::string& text) { return layout_of(parse(text, "layout")); }

std::string backlight_to_json(const Backlight& b) {
  json values = json::array();
  for (Index k = 0; k < b.size(); ++k) values.push_back(b[k]);
  return json{{"layout", layout_json(b.layout())}, {"values", values}}.dump(2);
}

Backlight backlight_from_json(const std::string& text) {
  const json j = parse(text, "backlight");
  if (!j.contains("layout") || !j.contains("values") || !j["values"].is_array()) {
    throw InvalidArgument("backlight: expected {\"layout\": {...}, \"values\": [...]}");
  }
  auto layout = std::make_shared<const BacklightLayout>(layout_of(j["layout"]));
  Eigen::VectorXd v(static_cast<Index>(j["values"].size()));
  for (Index k = 0; k < v.size(); ++k) {
    const auto& e = j["values"][static_cast<std::size_t>(k)];
    if (!e.is_number()) throw InvalidArgument("backlight: non-numeric value at LED " + std::to_string(k));
    v[k] = e.get<double>();
  }
  return Backlight(std::move(layout), std::move(v));
}

std::string backlight_to_csv(const Backlight& b) {
  std::string out = "led,row,col,center_y,center_x,value\n";
  const auto& l = b.layout();
  char buf[160];
  for (Index k = 0; k < b.size(); ++k) {
    const auto& c = l.centers()[static_cast<std::size_t>(k)];
    std::snprintf(buf, sizeof buf, "%lld,%lld,%lld,%lld,%lld,%.17g\n", static_cast<long long>(k),
                  static_cast<long long>(k / l.led_cols()), static_cast<long long>(k % l.led_cols()),
                  static_cast<long long>(c.row), static_cast<long long>(c.col), b[k]);
    out += buf;
  }
  return out;
}

Backlight backlight_from_csv(const std::string& text, LayoutPtr layout) {
  if (!layout) throw InvalidArgument("backlight CSV: a layout is required");
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("led,", 0) != 0) {
    throw InvalidArgument("backlight CSV: missing header");
  }
  Eigen::VectorXd v = Eigen::VectorXd::Constant(layout->size(), -1.0);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    long long k = -1;
    double value = 0.0;
    // led index first, value last.
    if (std::sscanf(line.c_str(), "%lld,", &k) != 1) throw InvalidArgument("backlight CSV: bad line '" + line + "'");
    const auto comma = line.rfind(',');
    char* end = nullptr;
    value = std::strtod(line.c_str() + comma + 1, &end);
    if (comma == std::string::npos || end == line.c_str() + comma + 1) {
      throw InvalidArgument("backlight CSV: bad value in '" + line + "'");
    }
    if (k < 0 || k >= layout->size()) throw InvalidArgument("backlight CSV: LED index out of range: " + line);
    v[k] = value;
  }
  if ((v.array() < 0.0).any()) {
    throw InvalidArgument("backlight CSV: expected " + std::to_string(layout->size()) + " LEDs with values in [0, 1]");
  }
  return Backlight(std::move(layout), std::move(v));
}

void write_backlight(const Backlight& b, const std::filesystem::path& path) {
  const std::string e = ext_of(path);
  std::string bytes;
  if (e == ".json") {
    bytes = backlight_to_json(b);
  } else if (e == ".csv") {
    bytes = backlight_to_csv(b);
  } else {
    throw InvalidArgument("write_backlight: unknown extension '" + e + "'");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError("cannot write " + path.string());
  }
}

Backlight read_backlight(const std::filesystem::path& path, LayoutPtr layout) {
  const std::string e = ext_of(path);
  if (e == ".json") {
    Backlight b = backlight_from_json(slurp(path));
    if (layout && !(b.layout() == *layout)) {
      throw InvalidArgument("read_backlight: " + path.string() + " was made for a different layout");
    }
    return layout ? Backlight(layout, b.values()) : b;
  }
  if (e == ".csv") return backlight_from_csv(slurp(path), std::move(layout));
  throw InvalidArgument("read_backlight: unknown extension '" + e + "'");
}

}  // namespace dimlab
