#include "cytonet/image.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "cytonet/error.hpp"
#include "cytonet/nn_ops.hpp"

namespace cytonet {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write file: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

// ---- PNG --------------------------------------------------------------------

namespace {

constexpr std::uint8_t kPngSig[8] = {137, 80, 78, 71, 13, 10, 26, 10};

std::uint32_t be32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

ImageU8 decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSig, 8) != 0) {
    throw IoError("not a PNG stream");
  }
  std::size_t off = 8;
  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<std::uint8_t> idat;
  std::vector<std::uint8_t> palette;  // rgb triples
  bool saw_ihdr = false, saw_iend = false;

  while (off + 8 <= bytes.size()) {
    const std::uint32_t len = be32(bytes.data() + off);
    if (off + 12 + len > bytes.size()) throw IoError("PNG: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + off + 4);
    const std::uint8_t* data = bytes.data() + off + 8;
    const uLong crc_got = be32(bytes.data() + off + 8 + len);
    const uLong crc_want = crc32(0L, bytes.data() + off + 4, static_cast<uInt>(4 + len));
    if (crc_got != crc_want) throw IoError("PNG: chunk CRC mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("PNG: bad IHDR");
      width = static_cast<int>(be32(data));
      height = static_cast<int>(be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
      saw_ihdr = true;
    } else if (std::memcmp(type, "PLTE", 4) == 0) {
      palette.assign(data, data + len);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    off += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) throw IoError("PNG: missing IHDR or IEND");
  if (width <= 0 || height <= 0) throw IoError("PNG: bad dimensions");
  if (bit_depth != 8) throw IoError("PNG: only 8-bit depth supported");
  if (interlace != 0) throw IoError("PNG: interlaced streams not supported");

  int channels = 0;
  switch (color_type) {
    case 0: channels = 1; break;  // gray
    case 2: channels = 3; break;  // rgb
    case 3: channels = 1; break;  // palette index
    case 4: channels = 2; break;  // gray + alpha
    case 6: channels = 4; break;  // rgba
    default: throw IoError("PNG: unsupported color type " + std::to_string(color_type));
  }
  if (color_type == 3 && palette.empty()) throw IoError("PNG: palette image without PLTE");

  const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  const std::size_t raw_size = (stride + 1) * static_cast<std::size_t>(height);
  std::vector<std::uint8_t> raw(raw_size);
  uLongf dest_len = static_cast<uLongf>(raw_size);
  const int zrc = uncompress(raw.data(), &dest_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || dest_len != raw_size) throw IoError("PNG: inflate failed");

  // unfilter in place into a packed scanline buffer
  std::vector<std::uint8_t> img(stride * static_cast<std::size_t>(height));
  const int bpp = channels;
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * static_cast<std::size_t>(y)];
    const std::uint8_t* src = raw.data() + (stride + 1) * static_cast<std::size_t>(y) + 1;
    std::uint8_t* dst = img.data() + stride * static_cast<std::size_t>(y);
    const std::uint8_t* up = y > 0 ? img.data() + stride * static_cast<std::size_t>(y - 1) : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= static_cast<std::size_t>(bpp) ? dst[x - static_cast<std::size_t>(bpp)] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= static_cast<std::size_t>(bpp)) ? up[x - static_cast<std::size_t>(bpp)] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("PNG: unknown filter type " + std::to_string(filter));
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xff);
    }
  }

  ImageU8 out;
  out.width = width;
  out.height = height;
  out.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* px = img.data() + stride * static_cast<std::size_t>(y) +
                               static_cast<std::size_t>(x) * static_cast<std::size_t>(channels);
      std::uint8_t r, g, b;
      switch (color_type) {
        case 0: r = g = b = px[0]; break;
        case 2: r = px[0]; g = px[1]; b = px[2]; break;
        case 3: {
          const std::size_t idx = static_cast<std::size_t>(px[0]) * 3;
          if (idx + 2 >= palette.size()) throw IoError("PNG: palette index out of range");
          r = palette[idx]; g = palette[idx + 1]; b = palette[idx + 2];
          break;
        }
        case 4: r = g = b = px[0]; break;
        default: r = px[0]; g = px[1]; b = px[2]; break;  // rgba: drop alpha
      }
      out.at(y, x, 0) = r;
      out.at(y, x, 1) = g;
      out.at(y, x, 2) = b;
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_png(const ImageU8& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw IoError("encode_png: malformed image");
  }
  const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw((stride + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw[(stride + 1) * static_cast<std::size_t>(y)] = 0;  // filter: none
    std::memcpy(raw.data() + (stride + 1) * static_cast<std::size_t>(y) + 1,
                img.pixels.data() + stride * static_cast<std::size_t>(y), stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("encode_png: deflate failed");
  }
  compressed.resize(bound);

  std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type: rgb
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", compressed);
  put_chunk(out, "IEND", {});
  return out;
}

// ---- BMP --------------------------------------------------------------------

namespace {

std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

ImageU8 decode_bmp(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 54 || bytes[0] != 'B' || bytes[1] != 'M') throw IoError("not a BMP stream");
  const std::uint32_t data_off = le32(bytes.data() + 10);
  const std::uint32_t hdr_size = le32(bytes.data() + 14);
  if (hdr_size < 40) throw IoError("BMP: unsupported header");
  const std::int32_t width = static_cast<std::int32_t>(le32(bytes.data() + 18));
  std::int32_t height = static_cast<std::int32_t>(le32(bytes.data() + 22));
  const std::uint16_t bpp = le16(bytes.data() + 28);
  const std::uint32_t compression = le32(bytes.data() + 30);
  if (width <= 0 || height == 0) throw IoError("BMP: bad dimensions");
  if (bpp != 24 || compression != 0) throw IoError("BMP: only uncompressed 24-bit supported");
  const bool bottom_up = height > 0;
  if (!bottom_up) height = -height;

  const std::size_t row = (static_cast<std::size_t>(width) * 3 + 3) & ~std::size_t{3};
  if (data_off + row * static_cast<std::size_t>(height) > bytes.size()) {
    throw IoError("BMP: truncated pixel data");
  }
  ImageU8 out;
  out.width = width;
  out.height = height;
  out.pixels.resize(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    const int src_y = bottom_up ? height - 1 - y : y;
    const std::uint8_t* src = bytes.data() + data_off + row * static_cast<std::size_t>(src_y);
    for (int x = 0; x < width; ++x) {
      out.at(y, x, 2) = src[static_cast<std::size_t>(x) * 3 + 0];  // b
      out.at(y, x, 1) = src[static_cast<std::size_t>(x) * 3 + 1];  // g
      out.at(y, x, 0) = src[static_cast<std::size_t>(x) * 3 + 2];  // r
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_bmp(const ImageU8& img) {
  const std::size_t row = (static_cast<std::size_t>(img.width) * 3 + 3) & ~std::size_t{3};
  const std::size_t data_size = row * static_cast<std::size_t>(img.height);
  std::vector<std::uint8_t> out;
  out.reserve(54 + data_size);
  out.push_back('B');
  out.push_back('M');
  put_le32(out, static_cast<std::uint32_t>(54 + data_size));
  put_le32(out, 0);
  put_le32(out, 54);
  put_le32(out, 40);
  put_le32(out, static_cast<std::uint32_t>(img.width));
  put_le32(out, static_cast<std::uint32_t>(img.height));
  put_le16(out, 1);
  put_le16(out, 24);
  put_le32(out, 0);
  put_le32(out, static_cast<std::uint32_t>(data_size));
  put_le32(out, 2835);
  put_le32(out, 2835);
  put_le32(out, 0);
  put_le32(out, 0);
  out.resize(54 + data_size, 0);
  for (int y = 0; y < img.height; ++y) {
    std::uint8_t* dst = out.data() + 54 + row * static_cast<std::size_t>(img.height - 1 - y);
    for (int x = 0; x < img.width; ++x) {
      dst[static_cast<std::size_t>(x) * 3 + 0] = img.at(y, x, 2);
      dst[static_cast<std::size_t>(x) * 3 + 1] = img.at(y, x, 1);
      dst[static_cast<std::size_t>(x) * 3 + 2] = img.at(y, x, 0);
    }
  }
  return out;
}

ImageU8 decode_image(const std::vector<std::uint8_t>& bytes, const std::string& hint) {
  try {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes);
  } catch (const IoError& e) {
    throw IoError("undecodable image '" + hint + "': " + e.what());
  }
  throw IoError("undecodable image '" + hint + "': unknown format (PNG and BMP supported)");
}

// ---- tensor conversion --------------------------------------------------------

Tensor<float> image_to_tensor(const ImageU8& img) {
  Tensor<float> t({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t[(static_cast<std::size_t>(c) * img.height + y) * static_cast<std::size_t>(img.width) + x] =
            static_cast<float>(img.at(y, x, c)) / 255.0f;
  return t;
}

ImageU8 tensor_to_image(const Tensor<float>& t) {
  if (t.ndim() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image expects (3,H,W)");
  ImageU8 img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float v = t[(static_cast<std::size_t>(c) * img.height + y) * static_cast<std::size_t>(img.width) + x];
        v = std::min(1.0f, std::max(0.0f, v));
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

Tensor<float> resize_bilinear(const Tensor<float>& chw, int target_h, int target_w) {
  if (chw.ndim() != 3) throw ShapeError("resize_bilinear expects (C,H,W)");
  const int C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
  if (H == target_h && W == target_w) return chw;
  const auto ay = detail::lerp_axis(H, target_h);
  const auto ax = detail::lerp_axis(W, target_w);
  Tensor<float> out({C, target_h, target_w});
  for (int c = 0; c < C; ++c) {
    const float* src = chw.data() + static_cast<std::size_t>(c) * H * W;
    float* dst = out.data() + static_cast<std::size_t>(c) * target_h * target_w;
    for (int oy = 0; oy < target_h; ++oy) {
      const int y0 = ay.lo[static_cast<std::size_t>(oy)], y1 = ay.hi[static_cast<std::size_t>(oy)];
      const float wy = static_cast<float>(ay.w[static_cast<std::size_t>(oy)]);
      for (int ox = 0; ox < target_w; ++ox) {
        const int x0 = ax.lo[static_cast<std::size_t>(ox)], x1 = ax.hi[static_cast<std::size_t>(ox)];
        const float wx = static_cast<float>(ax.w[static_cast<std::size_t>(ox)]);
        const float v00 = src[static_cast<std::size_t>(y0) * W + x0];
        const float v01 = src[static_cast<std::size_t>(y0) * W + x1];
        const float v10 = src[static_cast<std::size_t>(y1) * W + x0];
        const float v11 = src[static_cast<std::size_t>(y1) * W + x1];
        const float top = v00 + wx * (v01 - v00);
        const float bot = v10 + wx * (v11 - v10);
        dst[static_cast<std::size_t>(oy) * target_w + ox] = top + wy * (bot - top);
      }
    }
  }
  return out;
}

}  // namespace cytonet
