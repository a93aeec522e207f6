#include "crossinit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <png.h>

#include "crossinit/errors.hpp"

namespace crossinit {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image load_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw CorruptFile("cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw CorruptFile("cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out{static_cast<int>(img.width), static_cast<int>(img.height), 3, {}};
  out.pixels.reserve(buffer.size());
  for (auto b : buffer) out.pixels.push_back(b / 255.0);
  return out;
}

std::string next_header_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok.front() == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  throw CorruptFile("truncated netpbm header");
}

Image load_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::string magic = next_header_token(in);
  const bool gray = magic == "P2" || magic == "P5";
  const bool binary = magic == "P5" || magic == "P6";
  if (!gray && magic != "P3" && magic != "P6") throw CorruptFile("unsupported netpbm type " + magic);
  Image out;
  try {
    out.width = std::stoi(next_header_token(in));
    out.height = std::stoi(next_header_token(in));
  } catch (const std::logic_error&) {
    throw CorruptFile("bad netpbm header in " + path.string());
  }
  const int maxval = std::stoi(next_header_token(in));
  if (out.width < 1 || out.height < 1 || maxval < 1 || maxval > 65535)
    throw CorruptFile("bad netpbm header in " + path.string());
  out.channels = gray ? 1 : 3;
  const std::size_t count = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.pixels.resize(count);
  if (binary) {
    in.get();  // single whitespace after maxval
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(count * bytes);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
      throw CorruptFile("truncated netpbm data in " + path.string());
    for (std::size_t i = 0; i < count; ++i) {
      const int v = bytes == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
      out.pixels[i] = static_cast<double>(v) / maxval;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      int v = 0;
      if (!(in >> v)) throw CorruptFile("truncated netpbm data in " + path.string());
      out.pixels[i] = static_cast<double>(v) / maxval;
    }
  }
  return out;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open image " + path.string());
  char magic[2] = {};
  probe.read(magic, 2);
  if (probe.gcount() < 2) throw CorruptFile("image file too short: " + path.string());
  if (magic[0] == 'P' && magic[1] >= '2' && magic[1] <= '6') return load_netpbm(path);
  if (static_cast<unsigned char>(magic[0]) == 0x89 && magic[1] == 'P') return load_png(path);
  throw CorruptFile("unrecognised image format: " + path.string());
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.empty() || (image.channels != 1 && image.channels != 3))
    throw InvalidConfig("write_png needs a 1- or 3-channel image");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(image.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i)
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  if (!png_image_write_to_file(&img, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  if (image.empty() || image.channels != 1) throw InvalidConfig("write_pgm needs a 1-channel image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (double p : image.pixels) out.put(static_cast<char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)));
  if (!out) throw IoError("failed writing " + path.string());
}

Image to_gray_thumbnail(const Image& image, int size) {
  if (image.empty() || size < 1) throw InvalidConfig("cannot resample an empty image");
  Image out{size, size, 1, std::vector<double>(static_cast<std::size_t>(size) * size, 0.0)};
  for (int ty = 0; ty < size; ++ty) {
    const int y0 = ty * image.height / size;
    const int y1 = std::max(y0 + 1, (ty + 1) * image.height / size);
    for (int tx = 0; tx < size; ++tx) {
      const int x0 = tx * image.width / size;
      const int x1 = std::max(x0 + 1, (tx + 1) * image.width / size);
      double sum = 0.0;
      int count = 0;
      for (int y = y0; y < y1 && y < image.height; ++y)
        for (int x = x0; x < x1 && x < image.width; ++x) {
          double luma = 0.0;
          if (image.channels >= 3)
            luma = 0.299 * image.at(x, y, 0) + 0.587 * image.at(x, y, 1) + 0.114 * image.at(x, y, 2);
          else
            luma = image.at(x, y, 0);
          sum += luma;
          ++count;
        }
      out.pixels[static_cast<std::size_t>(ty * size + tx)] = count ? sum / count : 0.0;
    }
  }
  return out;
}

Image synthetic_face(int size) {
  if (size < 8) throw InvalidConfig("synthetic face needs size >= 8");
  Image out{size, size, 1, std::vector<double>(static_cast<std::size_t>(size) * size, 0.15)};
  auto inside = [](double dx, double dy, double rx, double ry) { return dx * dx / (rx * rx) + dy * dy / (ry * ry) <= 1.0; };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size - 0.5;
      const double v = (y + 0.5) / size - 0.5;
      double p = 0.15;
      if (inside(u, v, 0.34, 0.44)) p = 0.8;
      if (inside(u + 0.14, v + 0.1, 0.06, 0.04) || inside(u - 0.14, v + 0.1, 0.06, 0.04)) p = 0.1;
      if (inside(u, v - 0.05, 0.03, 0.1)) p = 0.65;
      if (inside(u, v - 0.22, 0.14, 0.035)) p = 0.3;
      out.pixels[static_cast<std::size_t>(y * size + x)] = p;
    }
  return out;
}

}  // namespace crossinit
