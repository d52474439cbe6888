#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "vfn/error.hpp"
#include "vfn/imaging.hpp"

namespace vfn {

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError(path, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline ImageBuffer from_rgb8(int w, int h, const unsigned char* px) {
  std::vector<float> data(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = px[i] / 255.0f;
  return ImageBuffer(w, h, std::move(data));
}

inline ImageBuffer decode_png(const std::string& path, const std::vector<unsigned char>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DecodeError(path, image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(path, msg);
  }
  return from_rgb8(static_cast<int>(image.width), static_cast<int>(image.height), px.data());
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" inline void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Warnings such as "premature end of data" mean the file is truncated;
// they are escalated so no partially decoded buffer escapes.
extern "C" inline void jpeg_message(j_common_ptr cinfo, int level) {
  if (level < 0) jpeg_fail(cinfo);
}

inline ImageBuffer decode_jpeg(const std::string& path, const std::vector<unsigned char>& bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_fail;
  err.base.emit_message = jpeg_message;
  std::vector<unsigned char> px;
  int w = 0, h = 0;
  // No objects with destructors may be created between setjmp and longjmp.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(path, err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = static_cast<int>(cinfo.output_width);
  h = static_cast<int>(cinfo.output_height);
  px.resize(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(w, h, px.data());
}

}  // namespace detail

// Decodes PNG or JPEG (detected by signature) into an RGB buffer in [0, 1].
// Grayscale and palette inputs are expanded to three channels.
inline ImageBuffer load_image(const std::string& path) {
  const auto bytes = detail::read_file(path);
  static constexpr unsigned char kPng[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPng, 8) == 0)
    return detail::decode_png(path, bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff)
    return detail::decode_jpeg(path, bytes);
  throw DecodeError(path, "unrecognized image format");
}

inline std::vector<unsigned char> to_rgb8(const ImageBuffer& img) {
  std::vector<unsigned char> px(img.data().size());
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data()[i], 0.0f, 1.0f) * 255.0f));
  return px;
}

inline void save_png(const ImageBuffer& img, const std::string& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  const auto px = to_rgb8(img);
  if (!png_image_write_to_file(&image, path.c_str(), 0, px.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path + "': " + image.message);
}

}  // namespace vfn
