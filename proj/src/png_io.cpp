#include <csetjmp>
#include <cstdio>
#include <memory>

#include <png.h>

#include "attnseg/error.hpp"
#include "attnseg/tensor_store.hpp"

namespace attnseg {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMaxPixels = std::size_t{1} << 28;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct ErrorSink {
  char message[256] = {};
};

void on_png_error(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<ErrorSink*>(png_get_error_ptr(png));
  if (sink) std::snprintf(sink->message, sizeof(sink->message), "%s", msg);
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

// Single-channel 8-bit raster: grayscale or palette indices. Palette PNGs
// (the VOC ground-truth convention) yield their raw indices.
std::vector<std::uint8_t> read_gray8(const fs::path& path, std::size_t& width, std::size_t& height) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw ValidationError(path.string() + " is not a PNG file");
  }

  ErrorSink sink;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, on_png_error, on_png_warning);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }

  std::vector<std::uint8_t> pixels;
  std::vector<png_bytep> rows;
  std::string failure;
  volatile bool validation_failure = false;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": " + sink.message);
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (bit_depth > 8) {
    failure = "mask must be 8-bit, got " + std::to_string(bit_depth) + "-bit";
    validation_failure = true;
  } else if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_PALETTE) {
    failure = "mask must be single-channel (grayscale or palette)";
    validation_failure = true;
  } else if (static_cast<std::size_t>(w) * h > kMaxPixels) {
    failure = "mask dimensions overflow";
    validation_failure = true;
  }

  if (!validation_failure) {
    if (bit_depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    width = w;
    height = h;
    pixels.resize(static_cast<std::size_t>(w) * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (validation_failure) throw ValidationError(path.string() + ": " + failure);
  return pixels;
}

void write_gray8(const fs::path& path, std::size_t width, std::size_t height, const std::vector<std::uint8_t>& px) {
  if (width == 0 || height == 0 || width * height > kMaxPixels || px.size() != width * height) {
    throw ValidationError("invalid mask dimensions for " + path.string());
  }
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");

  ErrorSink sink;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, on_png_error, on_png_warning);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = const_cast<png_bytep>(px.data() + y * width);

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": " + sink.message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

fs::path uncertainty_path(const fs::path& mask_path) {
  auto p = mask_path;
  p.replace_filename(mask_path.stem().string() + "_uncertain" + mask_path.extension().string());
  return p;
}

void write_mask(const LabelMask& mask, const fs::path& path) {
  if (mask.labels.size() != mask.width * mask.height || mask.uncertain.size() != mask.labels.size()) {
    throw ValidationError("mask buffers do not match its dimensions");
  }
  write_gray8(path, mask.width, mask.height, mask.labels);
  std::vector<std::uint8_t> flags(mask.uncertain.size());
  for (std::size_t i = 0; i < flags.size(); ++i) flags[i] = mask.uncertain[i] ? 255 : 0;
  write_gray8(uncertainty_path(path), mask.width, mask.height, flags);
}

LabelMask read_mask(const fs::path& path) {
  LabelMask mask;
  mask.labels = read_gray8(path, mask.width, mask.height);
  mask.uncertain.assign(mask.labels.size(), 0);
  const auto side = uncertainty_path(path);
  if (fs::exists(side)) {
    std::size_t w = 0, h = 0;
    const auto flags = read_gray8(side, w, h);
    if (w != mask.width || h != mask.height) {
      throw ValidationError(side.string() + ": dimensions differ from " + path.filename().string());
    }
    for (std::size_t i = 0; i < flags.size(); ++i) mask.uncertain[i] = flags[i] != 0 ? 1 : 0;
  }
  return mask;
}

RgbImage read_rgb(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError(path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = image.width;
  out.height = image.height;
  if (out.width * out.height > kMaxPixels) {
    png_image_free(&image);
    throw ValidationError(path.string() + ": image dimensions overflow");
  }
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
  return out;
}

void write_rgb(const RgbImage& img, const fs::path& path) {
  if (img.pixels.size() != 3 * img.width * img.height || img.width == 0 || img.height == 0) {
    throw ValidationError("invalid RGB image buffer");
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw IoError(path.string() + ": " + image.message);
  }
}

}  // namespace attnseg
