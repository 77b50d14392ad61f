#include "cpr/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <fmt/format.h>
#include <png.h>

#include "cpr/types.hpp"

namespace cpr {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open image {}", path.string()));
  std::string magic;
  in >> magic;
  if (magic != "P6") throw ParseError(fmt::format("{}: not a binary PPM", path.string()));
  auto next_int = [&]() {
    int v = 0;
    while (in >> std::ws && in.peek() == '#') in.ignore(1 << 20, '\n');
    in >> v;
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  in.get();
  if (w <= 0 || h <= 0 || maxval != 255) throw ParseError(fmt::format("{}: unsupported PPM header", path.string()));
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw ParseError(fmt::format("{}: truncated PPM data", path.string()));
  return img;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".ppm") return read_ppm(path);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw InputError(fmt::format("cannot read image {}: {}", path.string(), png.message));
  png.format = PNG_FORMAT_RGB;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw ParseError(fmt::format("cannot decode {}: {}", path.string(), png.message));
  }
  return img;
}

void write_image(const Image& image, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (lower_ext(path) == ".ppm") {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
    return;
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.rgb.data(), 0, nullptr))
    throw Error(fmt::format("cannot write {}: {}", path.string(), png.message));
}

Tensor3<float> to_tensor(const Image& image) {
  Tensor3<float> t(image.height, image.width, 3);
  for (std::size_t i = 0; i < image.rgb.size(); ++i) t.data[i] = image.rgb[i] / 255.0f - 0.5f;
  return t;
}

Image flip_horizontal(const Image& image) {
  Image out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      std::copy_n(image.pixel(image.width - 1 - x, y), 3, out.pixel(x, y));
  return out;
}

}  // namespace cpr
