#include "cfilter/textio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cfilter/errors.hpp"

namespace cfilter {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << contents;
  if (!out) throw Error("failed writing: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string pgm_text(std::size_t width, std::size_t height, const std::vector<int>& pixels) {
  if (pixels.size() != width * height) throw Error("pgm: pixel count does not match size");
  std::ostringstream os;
  os << "P2\n" << width << ' ' << height << "\n255\n";
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (x) os << ' ';
      os << pixels[y * width + x];
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace cfilter
