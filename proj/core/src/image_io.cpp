#include "cdcn/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "cdcn/error.hpp"

namespace cdcn {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image8 read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open image: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 ||
      png_sig_cmp(header, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path);
  }

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path);
  }

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_byte color_type = png_get_color_type(png, info);
  png_byte bit_depth = png_get_bit_depth(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  Image8 image;
  image.width = int(png_get_image_width(png, info));
  image.height = int(png_get_image_height(png, info));
  int channels = int(png_get_channels(png, info));
  if (channels == 4) channels = 3;  // tRNS-expanded alpha is stripped above
  image.channels = channels;
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG channel count in " + path);
  }

  image.pixels.resize(size_t(image.height) * image.width * image.channels);
  std::vector<png_bytep> rows(image.height);
  const size_t stride = size_t(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y)
    rows[y] = image.pixels.data() + size_t(y) * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::string& path, const Image8& image) {
  if (!image.valid())
    throw ValueError("write_png: malformed image for " + path);
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open image for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing PNG: " + path);
  }

  png_init_io(png, file.get());
  int color_type =
      image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, png_uint_32(image.width), png_uint_32(image.height),
               8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_bytep> rows(image.height);
  const size_t stride = size_t(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) {
    rows[y] =
        const_cast<png_bytep>(image.pixels.data() + size_t(y) * stride);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

TensorT<float> image_to_tensor(const Image8& image) {
  if (!image.valid()) throw ValueError("image_to_tensor: malformed image");
  const int c = image.channels;
  const int h = image.height;
  const int w = image.width;
  std::vector<float> data(size_t(c) * h * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        uint8_t v = image.pixels[(size_t(y) * w + x) * c + ch];
        data[(size_t(ch) * h + y) * w + x] = float(v) / 255.0f;
      }
    }
  }
  return TensorT<float>({c, h, w}, std::move(data));
}

Image8 tensor_to_image(const TensorT<float>& chw) {
  if (chw.rank() != 3) throw ShapeError("tensor_to_image: expected (C,H,W)");
  const int c = chw.shape()[0];
  const int h = chw.shape()[1];
  const int w = chw.shape()[2];
  if (c != 1 && c != 3)
    throw ShapeError("tensor_to_image: channel count must be 1 or 3");
  Image8 image;
  image.width = w;
  image.height = h;
  image.channels = c;
  image.pixels.resize(size_t(c) * h * w);
  const float* px = chw.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        float v = px[(size_t(ch) * h + y) * w + x];
        v = std::min(1.0f, std::max(0.0f, v));
        image.pixels[(size_t(y) * w + x) * c + ch] =
            uint8_t(std::lround(v * 255.0f));
      }
    }
  }
  return image;
}

}  // namespace cdcn
