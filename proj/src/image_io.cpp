#include "tidm/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "tidm/error.hpp"

namespace tidm {

std::uint8_t to_byte(float v) {
  const double scaled = (std::clamp(static_cast<double>(v), -1.0, 1.0) + 1.0) * 127.5;
  return static_cast<std::uint8_t>(std::nearbyint(scaled));  // default rounding mode: half to even
}

float from_byte(std::uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

namespace {

void write_p6(const std::string& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("ppm: cannot write " + path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw RuntimeFailure("ppm: write failed for " + path);
}

int read_header_int(std::istream& in, const std::string& path) {
  int c = in.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int value = 0;
  if (!(in >> value)) throw ValueError("ppm: malformed header in " + path);
  return value;
}

std::vector<std::uint8_t> read_p6(const std::string& path, int& height, int& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("ppm: cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw ValueError("ppm: " + path + " is not a binary PPM (P6)");
  width = read_header_int(in, path);
  height = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (width < 1 || height < 1 || maxval != 255) throw ValueError("ppm: unsupported geometry or depth in " + path);
  in.get();  // single whitespace before the raster
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3) * width * height);
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (in.gcount() != static_cast<std::streamsize>(rgb.size())) throw ValueError("ppm: truncated raster in " + path);
  return rgb;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected [3,H,W], got " + shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<std::uint8_t> rgb(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) rgb[3 * p + c] = to_byte(image[c * plane + p]);
  write_p6(path, h, w, rgb);
}

Tensor<float> read_ppm(const std::string& path) {
  int h = 0, w = 0;
  auto rgb = read_p6(path, h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<float> image({3, h, w});
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) image[c * plane + p] = from_byte(rgb[3 * p + c]);
  return image;
}

void write_mask(const std::string& path, const Tensor<float>& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1) throw ShapeError("write_mask: expected [1,H,W], got " + shape_str(mask.shape()));
  std::vector<std::uint8_t> rgb;
  rgb.reserve(3 * mask.size());
  for (float v : mask.data()) rgb.insert(rgb.end(), 3, v > 0.5f ? 255 : 0);
  write_p6(path, mask.dim(1), mask.dim(2), rgb);
}

Tensor<float> read_mask(const std::string& path) {
  int h = 0, w = 0;
  auto rgb = read_p6(path, h, w);
  Tensor<float> mask({1, h, w});
  for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = rgb[3 * p] > 127 ? 1.0f : 0.0f;
  return mask;
}

}  // namespace tidm
