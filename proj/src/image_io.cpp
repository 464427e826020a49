#include "easyphoto/image_io.hpp"

#include "easyphoto/error.hpp"

#include <png.h>

#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <iterator>
#include <random>

namespace easyphoto {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<std::uint8_t> encode_rgb8(const std::vector<std::uint8_t>& pixels, Eigen::Index height,
                                      Eigen::Index width, png_uint_32 format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::IoError, std::string("png sizing failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw Error(Errc::IoError, std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

Image from_rgb8(const std::uint8_t* data, Eigen::Index height, Eigen::Index width) {
  Image img(height, width);
  for (Eigen::Index y = 0; y < height; ++y) {
    for (Eigen::Index x = 0; x < width; ++x) {
      const std::uint8_t* px = data + 3 * (y * width + x);
      for (int c = 0; c < 3; ++c) {
        img(y, x, c) = static_cast<float>(static_cast<double>(px[c]) / 255.0);
      }
    }
  }
  return img;
}

Image decode_png(std::string_view bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(Errc::UndecodableImage, std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  if (image.width == 0 || image.height == 0) {
    png_image_free(&image);
    throw Error(Errc::UndecodableImage, "png: empty image");
  }
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&image, &white, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(Errc::UndecodableImage, "png: " + msg);
  }
  return from_rgb8(buffer.data(), image.height, image.width);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(std::string_view bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> buffer;
  JDIMENSION width = 0;
  JDIMENSION height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(Errc::UndecodableImage, "jpeg: corrupt stream");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = cinfo.output_width;
  height = cinfo.output_height;
  buffer.resize(static_cast<size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buffer.data() + static_cast<size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(buffer.data(), height, width);
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.empty()) throw Error(Errc::InvalidArgument, "cannot encode an empty image");
  const Eigen::Index h = img.height();
  const Eigen::Index w = img.width();
  std::vector<std::uint8_t> pixels(static_cast<size_t>(h * w * 3));
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) pixels[static_cast<size_t>(3 * (y * w + x) + c)] = to_byte(img(y, x, c));
    }
  }
  return encode_rgb8(pixels, h, w, PNG_FORMAT_RGB);
}

std::vector<std::uint8_t> encode_png(const Mask& mask) {
  std::vector<std::uint8_t> pixels(static_cast<size_t>(mask.size()));
  for (Eigen::Index y = 0; y < mask.rows(); ++y) {
    for (Eigen::Index x = 0; x < mask.cols(); ++x) {
      pixels[static_cast<size_t>(y * mask.cols() + x)] = to_byte(mask(y, x));
    }
  }
  return encode_rgb8(pixels, mask.rows(), mask.cols(), PNG_FORMAT_GRAY);
}

Image decode_image(std::string_view bytes) {
  static constexpr unsigned char kPng[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(kPng), std::end(kPng), bytes.begin(),
                                      [](unsigned char a, char b) {
                                        return a == static_cast<unsigned char>(b);
                                      })) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8) {
    return decode_jpeg(bytes);
  }
  throw Error(Errc::UndecodableImage, "unrecognized image signature");
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return decode_image(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  thread_local std::mt19937_64 rng{std::random_device{}()};
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(Errc::IoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_png(const std::filesystem::path& path, const Image& img) {
  const auto png = encode_png(img);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
}

Image quantize8(const Image& img) {
  Image out = img;
  for (auto& ch : out.channels) {
    ch = ch.unaryExpr([](float v) {
      return static_cast<float>(static_cast<double>(to_byte(v)) / 255.0);
    });
  }
  return out;
}

}  // namespace easyphoto
