#pragma once

#include <string>
#include <vector>

namespace cfilter {

// Shortest-safe round-trip text for a double ("%.17g").
std::string format_real(double v);

void write_text_file(const std::string& path, const std::string& contents);
std::string read_text_file(const std::string& path);

// Plain PGM (P2), maxval 255, row-major pixels.
std::string pgm_text(std::size_t width, std::size_t height, const std::vector<int>& pixels);

}  // namespace cfilter
