#pragma once

#include <filesystem>
#include <string>

#include "dimlab/display.hpp"

namespace dimlab {

/// Layout as JSON: {"led_rows", "led_cols", "panel_height", "panel_width", "max_drive_nits"}.
std::string layout_to_json(const BacklightLayout& layout);
BacklightLayout layout_from_json(const std::string& text);

/// {"layout": {...}, "values": [B_0, ..., B_{N-1}]}. Values round-trip exactly.
std::string backlight_to_json(const Backlight& b);
Backlight backlight_from_json(const std::string& text);

/// Header `led,row,col,center_y,center_x,value`, one line per LED in index
/// order. The layout is not stored, so reading needs one.
std::string backlight_to_csv(const Backlight& b);
Backlight backlight_from_csv(const std::string& text, LayoutPtr layout);

/// Dispatch on extension (.json / .csv). CSV reads need `layout`.
void write_backlight(const Backlight& b, const std::filesystem::path& path);
Backlight read_backlight(const std::filesystem::path& path, LayoutPtr layout = nullptr);

}  // namespace dimlab
