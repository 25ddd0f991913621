#include <fstream>
#include <sstream>

#include "dsl/image.hpp"

namespace dsl {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw std::runtime_error("pgm: unexpected end of header");
}

}  // namespace

Image load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  if (next_token(in) != "P5") throw std::runtime_error("pgm: not a P5 file: " + path);
  const int w = std::stoi(next_token(in));
  const int h = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("pgm: unsupported header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size())
    throw std::runtime_error("pgm: truncated pixel data in " + path);
  Image img(w, h);
  for (size_t i = 0; i < raw.size(); ++i) img.data()[i] = static_cast<float>(raw[i]);
  return img;
}

void save_pgm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot open for writing " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<uint8_t> raw(img.data().size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const float v = std::round(img.data()[i]);
    raw[i] = static_cast<uint8_t>(std::min(255.f, std::max(0.f, v)));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("pgm: write failed for " + path);
}

void save_pgm16(const std::vector<uint16_t>& data, int width, int height, const std::string& path) {
  if (data.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("pgm16: data size does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm16: cannot open for writing " + path);
  out << "P5\n" << width << " " << height << "\n65535\n";
  for (uint16_t v : data) {
    const uint8_t hi = static_cast<uint8_t>(v >> 8), lo = static_cast<uint8_t>(v & 0xff);
    out.put(static_cast<char>(hi));
    out.put(static_cast<char>(lo));
  }
  if (!out) throw std::runtime_error("pgm16: write failed for " + path);
}

}  // namespace dsl
