#include "avobj/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <memory>
#include <vector>

namespace avobj::img {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

float clamp01(float v) { return std::max(0.0f, std::min(1.0f, v)); }

}  // namespace

Tensor<float> read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw data_error("cannot open png: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("malformed png: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  // Normalize everything to 8-bit RGB.
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  std::vector<png_byte> row(png_get_rowbytes(png, info));
  Tensor<float> out({3, static_cast<Index>(h), static_cast<Index>(w)});
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c)
        out(c, static_cast<Index>(y), static_cast<Index>(x)) =
            static_cast<float>(row[x * 3 + static_cast<png_uint_32>(c)]) /
            255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
    throw config_error("write_png expects (3,H,W) or (1,H,W), got " +
                       shape_str(image.shape()));
  const Index C = image.dim(0), H = image.dim(1), W = image.dim(2);

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw data_error("cannot open " + path + " for writing");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw data_error("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W),
               static_cast<png_uint_32>(H), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<std::size_t>(W) * 3);
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = C == 3 ? image(c, y, x) : image(Index(0), y, x);
        row[static_cast<std::size_t>(x * 3 + c)] =
            static_cast<png_byte>(std::lround(clamp01(v) * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> to_gray(const Tensor<float>& image) {
  const Index H = image.dim(1), W = image.dim(2);
  Tensor<float> out({H, W});
  if (image.dim(0) == 1) {
    std::copy_n(image.data(), H * W, out.data());
    return out;
  }
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      out(y, x) = 0.299f * image(Index(0), y, x) +
                  0.587f * image(Index(1), y, x) +
                  0.114f * image(Index(2), y, x);
  return out;
}

namespace {

void put_pixel(Tensor<float>& im, Index x, Index y, float r, float g, float b) {
  if (x < 0 || y < 0 || x >= im.dim(2) || y >= im.dim(1)) return;
  im(Index(0), y, x) = r;
  im(Index(1), y, x) = g;
  im(Index(2), y, x) = b;
}

}  // namespace

void draw_box(Tensor<float>& image, Index x0, Index y0, Index x1, Index y1,
              float r, float g, float b, Index thickness) {
  for (Index t = 0; t < thickness; ++t) {
    for (Index x = x0; x <= x1; ++x) {
      put_pixel(image, x, y0 + t, r, g, b);
      put_pixel(image, x, y1 - t, r, g, b);
    }
    for (Index y = y0; y <= y1; ++y) {
      put_pixel(image, x0 + t, y, r, g, b);
      put_pixel(image, x1 - t, y, r, g, b);
    }
  }
}

void fill_rect(Tensor<float>& image, Index x0, Index y0, Index x1, Index y1,
               float r, float g, float b, float alpha) {
  const Index H = image.dim(1), W = image.dim(2);
  for (Index y = std::max<Index>(0, y0); y <= std::min(H - 1, y1); ++y)
    for (Index x = std::max<Index>(0, x0); x <= std::min(W - 1, x1); ++x) {
      image(Index(0), y, x) = (1 - alpha) * image(Index(0), y, x) + alpha * r;
      image(Index(1), y, x) = (1 - alpha) * image(Index(1), y, x) + alpha * g;
      image(Index(2), y, x) = (1 - alpha) * image(Index(2), y, x) + alpha * b;
    }
}

void draw_cross(Tensor<float>& image, Index x, Index y, Index arm, float r,
                float g, float b) {
  for (Index d = -arm; d <= arm; ++d) {
    put_pixel(image, x + d, y, r, g, b);
    put_pixel(image, x, y + d, r, g, b);
  }
}

void overlay_heatmap(Tensor<float>& image, const Tensor<float>& map,
                     float alpha) {
  const Index H = image.dim(1), W = image.dim(2);
  const Index mh = map.dim(0), mw = map.dim(1);
  float lo = map[0], hi = map[0];
  for (Index i = 0; i < map.size(); ++i) {
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  const float span = hi - lo > 1e-12f ? hi - lo : 1.0f;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const Index my = std::min(mh - 1, y * mh / H);
      const Index mx = std::min(mw - 1, x * mw / W);
      const float v = (map(my, mx) - lo) / span;
      // Blue (cold) to red (hot).
      const float r = clamp01(1.5f * v - 0.25f);
      const float g = clamp01(1.0f - std::abs(2.0f * v - 1.0f));
      const float b = clamp01(1.25f - 1.5f * v);
      image(Index(0), y, x) = (1 - alpha) * image(Index(0), y, x) + alpha * r;
      image(Index(1), y, x) = (1 - alpha) * image(Index(1), y, x) + alpha * g;
      image(Index(2), y, x) = (1 - alpha) * image(Index(2), y, x) + alpha * b;
    }
}

}  // namespace avobj::img
