#include "fracdet/codec.hpp"

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include <jpeglib.h>
#include <png.h>

#include "fracdet/error.hpp"

namespace fracdet {

namespace {

[[noreturn]] void decode_fail(std::size_t offset, const std::string& what) {
  throw Error(ErrorCode::kDecode, "decode-error at offset " + std::to_string(offset) + ": " + what);
}

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

struct PnmHeader {
  int width;
  int height;
  int maxval;
  std::size_t payload_offset;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes, char kind) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(kind)) {
    decode_fail(0, std::string("expected magic P") + kind);
  }
  std::size_t pos = 2;
  auto read_field = [&](const char* name) -> int {
    for (;;) {
      while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size()) decode_fail(pos, std::string("truncated header before ") + name);
    if (bytes[pos] < '0' || bytes[pos] > '9') decode_fail(pos, std::string("malformed ") + name);
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 24)) decode_fail(pos, std::string(name) + " out of range");
      ++pos;
    }
    return static_cast<int>(v);
  };
  PnmHeader h{};
  h.width = read_field("width");
  h.height = read_field("height");
  h.maxval = read_field("maxval");
  if (h.width < 1 || h.height < 1) decode_fail(pos, "zero image dimension");
  if (h.maxval < 1 || h.maxval > 255) decode_fail(pos, "unsupported maxval " + std::to_string(h.maxval));
  if (pos >= bytes.size() || !is_space(bytes[pos])) decode_fail(pos, "missing whitespace after maxval");
  h.payload_offset = pos + 1;
  return h;
}

std::uint8_t rescale(std::uint8_t v, int maxval) {
  if (maxval == 255) return v;
  if (v > maxval) v = static_cast<std::uint8_t>(maxval);
  return to_u8(v * 255.0 / maxval);
}

Bytes pnm_header(char kind, int w, int h) {
  const std::string s = std::string("P") + kind + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return Bytes(s.begin(), s.end());
}

Bytes png_from_raw(const std::uint8_t* raw, int w, int h, png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, raw, 0, nullptr)) {
    throw Error(ErrorCode::kInternal, std::string("png encode failed: ") + image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, raw, 0, nullptr)) {
    throw Error(ErrorCode::kInternal, std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

ColorImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    decode_fail(0, std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  ColorImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, out.values.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    decode_fail(0, "png: " + msg);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

ColorImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  // Everything that must be destroyed on the error path lives outside the
  // setjmp frame.
  ColorImage out;
  std::string failure;
  if (setjmp(err.jump)) {
    failure = err.message;
    jpeg_destroy_decompress(&cinfo);
    decode_fail(0, "jpeg: " + failure);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out = ColorImage(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.values.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

}  // namespace

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return ImageFormat::kPgm;
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return ImageFormat::kPpm;
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return ImageFormat::kPng;
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return ImageFormat::kJpeg;
  return ImageFormat::kUnknown;
}

PixelGrid8 decode_pgm(std::span<const std::uint8_t> bytes) {
  const PnmHeader h = parse_pnm_header(bytes, '5');
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() - h.payload_offset < need) {
    decode_fail(bytes.size(), "truncated payload: expected " + std::to_string(need) + " bytes, found " +
                                  std::to_string(bytes.size() - h.payload_offset));
  }
  PixelGrid8 out(h.width, h.height);
  for (std::size_t i = 0; i < need; ++i) out.values[i] = rescale(bytes[h.payload_offset + i], h.maxval);
  return out;
}

ColorImage decode_ppm(std::span<const std::uint8_t> bytes) {
  const PnmHeader h = parse_pnm_header(bytes, '6');
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() - h.payload_offset < need) {
    decode_fail(bytes.size(), "truncated payload: expected " + std::to_string(need) + " bytes, found " +
                                  std::to_string(bytes.size() - h.payload_offset));
  }
  ColorImage out(h.width, h.height);
  for (std::size_t i = 0; i < need; ++i) out.values[i] = rescale(bytes[h.payload_offset + i], h.maxval);
  return out;
}

Bytes encode_pgm(const PixelGrid8& img) {
  Bytes out = pnm_header('5', img.width, img.height);
  out.insert(out.end(), img.values.begin(), img.values.end());
  return out;
}

Bytes encode_ppm(const ColorImage& img) {
  Bytes out = pnm_header('6', img.width, img.height);
  out.insert(out.end(), img.values.begin(), img.values.end());
  return out;
}

Bytes encode_png(const PixelGrid8& img) {
  return png_from_raw(img.values.data(), img.width, img.height, PNG_FORMAT_GRAY);
}

Bytes encode_png(const ColorImage& img) {
  return png_from_raw(img.values.data(), img.width, img.height, PNG_FORMAT_RGB);
}

ColorImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) decode_fail(0, "empty payload");
  switch (sniff_format(bytes)) {
    case ImageFormat::kPgm: return gray_to_color(decode_pgm(bytes));
    case ImageFormat::kPpm: return decode_ppm(bytes);
    case ImageFormat::kPng: return decode_png(bytes);
    case ImageFormat::kJpeg: return decode_jpeg(bytes);
    case ImageFormat::kUnknown: break;
  }
  decode_fail(0, "unrecognized image signature");
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

ColorImage read_image(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return decode_image(bytes);
}

void write_image(const std::filesystem::path& path, const PixelGrid8& img) {
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return write_file(path, encode_pgm(img));
  if (ext == ".png") return write_file(path, encode_png(img));
  if (ext == ".ppm") return write_file(path, encode_ppm(gray_to_color(img)));
  throw_invalid("unsupported output extension '" + ext + "'");
}

void write_image(const std::filesystem::path& path, const ColorImage& img) {
  const std::string ext = path.extension().string();
  if (ext == ".ppm") return write_file(path, encode_ppm(img));
  if (ext == ".png") return write_file(path, encode_png(img));
  if (ext == ".pgm") return write_file(path, encode_pgm(to_grayscale(img)));
  throw_invalid("unsupported output extension '" + ext + "'");
}

}  // namespace fracdet
