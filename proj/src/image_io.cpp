#include "freehead/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <csetjmp>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace freehead {

namespace {

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes->size()) png_error(png, "truncated PNG");
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

void write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_cb(png_structp) {}

void warning_cb(png_structp, png_const_charp) {}
[[noreturn]] void error_cb(png_structp png, png_const_charp) { png_longjmp(png, 1); }

struct Header {
  int width = 0, height = 0;
};

// libpng reports errors by longjmp, so everything with a destructor lives in
// the callers and these helpers only touch plain data.
bool read_header(png_structp png, png_infop info, ReadCursor* cur, Header* h) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_read_fn(png, cur, read_cb);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  h->width = int(png_get_image_width(png, info));
  h->height = int(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != std::size_t(h->width) * 3) return false;
  return true;
}

bool read_rows(png_structp png, png_bytep* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  return true;
}

bool write_rows(png_structp png, png_infop info, std::vector<std::uint8_t>* out, int W, int H, int C, png_bytep* rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_write_fn(png, out, write_cb, flush_cb);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, W, H, 8, C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  return true;
}

constexpr int kMaxSide = 1 << 14;

}  // namespace

Tensor<float> decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageError("not a PNG image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  if (!png) throw ImageError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{&bytes, 0};
  Header h;
  if (!info || !read_header(png, info, &cur, &h) || h.width < 1 || h.height < 1 || h.width > kMaxSide ||
      h.height > kMaxSide) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("malformed or unsupported PNG");
  }
  const int W = h.width, H = h.height;
  const std::size_t stride = std::size_t(W) * 3;
  std::vector<std::uint8_t> raw(stride * H);
  std::vector<png_bytep> rows(H);
  for (int y = 0; y < H; ++y) rows[y] = raw.data() + stride * y;
  const bool ok = read_rows(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw ImageError("corrupt PNG data");
  Tensor<float> out(Shape{3, H, W});
  const Index plane = Index(H) * W;
  for (Index q = 0; q < plane; ++q)
    for (int c = 0; c < 3; ++c) out[c * plane + q] = raw[q * 3 + c] / 255.0f;
  return out;
}

Tensor<float> read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_png(bytes);
}

std::vector<std::uint8_t> encode_png(const Tensor<float>& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ImageError("encode_png expects (1|3,H,W), got " + shape_str(image.shape()));
  }
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const Index plane = Index(H) * W;
  std::vector<std::uint8_t> raw(std::size_t(plane) * C);
  for (Index q = 0; q < plane; ++q)
    for (int c = 0; c < C; ++c) {
      float v = image[c * plane + q];
      v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
      raw[q * C + c] = std::uint8_t(std::lround(v * 255.0f));
    }

  std::vector<png_bytep> rows(H);
  for (int y = 0; y < H; ++y) rows[y] = raw.data() + std::size_t(y) * W * C;
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  if (!png) throw ImageError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  const bool ok = info && write_rows(png, info, &out, W, H, C, rows.data());
  png_destroy_write_struct(&png, &info);
  if (!ok) throw ImageError("png encoding failed");
  return out;
}

void write_png(const std::string& path, const Tensor<float>& image) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write image " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

Tensor<float> to_network_range(const Tensor<float>& image) {
  if (image.ndim() != 3) throw ShapeError("expected (C,H,W) image, got " + shape_str(image.shape()));
  Tensor<float> out(Shape{1, image.dim(0), image.dim(1), image.dim(2)});
  out.array() = image.array() * 2.0f - 1.0f;
  return out;
}

Tensor<float> from_network_range(const Tensor<float>& batch, int index) {
  if (batch.ndim() != 4 || index < 0 || index >= batch.dim(0)) {
    throw ShapeError("expected (N,C,H,W) batch, got " + shape_str(batch.shape()));
  }
  const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  const Index n = Index(C) * H * W;
  Tensor<float> out(Shape{C, H, W});
  out.array() = ((batch.array().segment(index * n, n) + 1.0f) * 0.5f).max(0.0f).min(1.0f);
  return out;
}

namespace {

float sample_bilinear(const float* plane, int H, int W, double x, double y) {
  if (!(x > -1.0) || !(x < W) || !(y > -1.0) || !(y < H)) return 0.0f;
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int xx, int yy) -> double {
    return (xx >= 0 && xx < W && yy >= 0 && yy < H) ? plane[Index(yy) * W + xx] : 0.0;
  };
  return float((1 - fx) * (1 - fy) * at(x0, y0) + fx * (1 - fy) * at(x0 + 1, y0) + (1 - fx) * fy * at(x0, y0 + 1) +
               fx * fy * at(x0 + 1, y0 + 1));
}

}  // namespace

Tensor<float> resize_image(const Tensor<float>& image, int height, int width) {
  if (image.ndim() != 3) throw ShapeError("expected (C,H,W) image, got " + shape_str(image.shape()));
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (H == height && W == width) return image;
  Tensor<float> out(Shape{C, height, width});
  const double sy = double(H) / height, sx = double(W) / width;
  for (int c = 0; c < C; ++c) {
    const float* plane = image.data() + Index(c) * H * W;
    for (int y = 0; y < height; ++y) {
      const double yy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(H - 1));
      for (int x = 0; x < width; ++x) {
        const double xx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(W - 1));
        out[(Index(c) * height + y) * width + x] = sample_bilinear(plane, H, W, xx, yy);
      }
    }
  }
  return out;
}

Tensor<float> crop_square(const Tensor<float>& image, double cx, double cy, double size, int out_size) {
  if (image.ndim() != 3) throw ShapeError("expected (C,H,W) image, got " + shape_str(image.shape()));
  if (!(size > 0) || out_size < 1) throw std::invalid_argument("crop size must be positive");
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor<float> out(Shape{C, out_size, out_size});
  // Pixel i covers [i - 0.5, i + 0.5].
  const double step = size / out_size, x0 = cx - size / 2.0, y0 = cy - size / 2.0;
  for (int c = 0; c < C; ++c) {
    const float* plane = image.data() + Index(c) * H * W;
    for (int y = 0; y < out_size; ++y)
      for (int x = 0; x < out_size; ++x) {
        out[(Index(c) * out_size + y) * out_size + x] =
            sample_bilinear(plane, H, W, x0 + (x + 0.5) * step, y0 + (y + 0.5) * step);
      }
  }
  return out;
}

}  // namespace freehead
