#include "psfed/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace psfed {

namespace {

const unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

void put_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>(v & 0xFF));
}

std::uint32_t get_u32_be(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.append(type, 4);
  out.append(data);
  const auto crc =
      crc32(0, reinterpret_cast<const Bytef*>(out.data() + crc_start),
            static_cast<uInt>(out.size() - crc_start));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const GrayImage& img, const std::filesystem::path& path) {
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw std::invalid_argument("write_png: bad image");

  std::string ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter method
  ihdr.push_back(0);  // no interlace

  // filter byte 0 per scanline
  std::string raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.append(reinterpret_cast<const char*>(img.pixels.data()) +
                   static_cast<std::size_t>(y) * img.width,
               img.width);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string zdata(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(zdata.data()), &zlen,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    throw std::runtime_error("write_png: deflate failed");
  zdata.resize(zlen);

  std::string out;
  out.append(reinterpret_cast<const char*>(kPngSignature), 8);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zdata);
  append_chunk(out, "IEND", "");

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_png: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write_png: write failed for " + path.string());
}

GrayImage read_png(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  if (data.size() < 8 || std::memcmp(p, kPngSignature, 8) != 0)
    throw std::runtime_error("not a PNG file: " + path.string());

  int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::string idat;
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 12 <= data.size() && !saw_iend) {
    const std::uint32_t len = get_u32_be(p + pos);
    if (pos + 12 + len > data.size())
      throw std::runtime_error("truncated chunk in " + path.string());
    const char* type = data.data() + pos + 4;
    const unsigned char* body = p + pos + 8;
    const std::uint32_t crc_store = get_u32_be(p + pos + 8 + len);
    const auto crc_calc = crc32(0, p + pos + 4, static_cast<uInt>(4 + len));
    if (crc_store != static_cast<std::uint32_t>(crc_calc))
      throw std::runtime_error("bad chunk crc in " + path.string());
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("bad IHDR in " + path.string());
      width = static_cast<int>(get_u32_be(body));
      height = static_cast<int>(get_u32_be(body + 4));
      bit_depth = body[8];
      color_type = body[9];
      interlace = body[12];
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.append(reinterpret_cast<const char*>(body), len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || width <= 0 || height <= 0)
    throw std::runtime_error("missing IHDR in " + path.string());
  if (bit_depth != 8 || color_type != 0)
    throw std::runtime_error("unsupported PNG (need 8-bit grayscale): " + path.string());
  if (interlace != 0)
    throw std::runtime_error("interlaced PNG not supported: " + path.string());

  const std::size_t raw_size = static_cast<std::size_t>(height) * (width + 1);
  std::vector<unsigned char> raw(raw_size);
  uLongf rlen = static_cast<uLongf>(raw_size);
  const int zret = uncompress(raw.data(), &rlen, reinterpret_cast<const Bytef*>(idat.data()),
                              static_cast<uLong>(idat.size()));
  if (zret != Z_OK || rlen != raw_size)
    throw std::runtime_error("corrupt image data in " + path.string());

  GrayImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(width) * height);
  std::vector<unsigned char> prev(width, 0);
  for (int y = 0; y < height; ++y) {
    const unsigned char filter = raw[static_cast<std::size_t>(y) * (width + 1)];
    const unsigned char* line = raw.data() + static_cast<std::size_t>(y) * (width + 1) + 1;
    unsigned char* out = img.pixels.data() + static_cast<std::size_t>(y) * width;
    for (int x = 0; x < width; ++x) {
      const int a = x > 0 ? out[x - 1] : 0;
      const int b = prev[x];
      const int c = x > 0 ? prev[x - 1] : 0;
      int v = line[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default:
          throw std::runtime_error("bad scanline filter in " + path.string());
      }
      out[x] = static_cast<unsigned char>(v & 0xFF);
    }
    std::memcpy(prev.data(), out, width);
  }
  return img;
}

std::vector<double> resize_area(const std::vector<double>& src, int src_h, int src_w,
                                int dst_h, int dst_w) {
  if (src.size() != static_cast<std::size_t>(src_h) * src_w)
    throw std::invalid_argument("resize_area: source size mismatch");
  if (src_h == dst_h && src_w == dst_w) return src;
  std::vector<double> dst(static_cast<std::size_t>(dst_h) * dst_w, 0.0);
  const double sy = static_cast<double>(src_h) / dst_h;
  const double sx = static_cast<double>(src_w) / dst_w;
  for (int ty = 0; ty < dst_h; ++ty) {
    const double y0 = ty * sy, y1 = (ty + 1) * sy;
    for (int tx = 0; tx < dst_w; ++tx) {
      const double x0 = tx * sx, x1 = (tx + 1) * sx;
      double acc = 0.0, wsum = 0.0;
      for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y1));
           ++y) {
        if (y < 0 || y >= src_h) continue;
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x1));
             ++x) {
          if (x < 0 || x >= src_w) continue;
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          acc += wy * wx * src[static_cast<std::size_t>(y) * src_w + x];
          wsum += wy * wx;
        }
      }
      dst[static_cast<std::size_t>(ty) * dst_w + tx] = wsum > 0.0 ? acc / wsum : 0.0;
    }
  }
  return dst;
}

namespace {

// deterministic traversal: sorted names at every level
std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void load_identity_tree(const std::filesystem::path& band_dir, Band band, int target_size,
                        DirectoryLoadResult& result) {
  namespace fs = std::filesystem;
  for (const fs::path& id_dir : sorted_entries(band_dir)) {
    if (!fs::is_directory(id_dir)) {
      result.errors.push_back(id_dir.string() + ": expected identity directory");
      continue;
    }
    int identity = -1;
    try {
      identity = std::stoi(id_dir.filename().string());
    } catch (...) {
      result.errors.push_back(id_dir.string() + ": identity directory is not a number");
      continue;
    }
    for (const fs::path& file : sorted_entries(id_dir)) {
      const std::string name = file.filename().string();
      if (file.extension() != ".png") {
        result.errors.push_back(file.string() + ": not a .png file");
        continue;
      }
      int session = 0, index = 0;
      if (std::sscanf(name.c_str(), "%d_%d.png", &session, &index) != 2 ||
          (session != 1 && session != 2)) {
        result.errors.push_back(file.string() +
                                ": expected <session>_<idx>.png with session 1 or 2");
        continue;
      }
      try {
        const GrayImage img = read_png(file);
        std::vector<double> values(img.pixels.size());
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
          values[i] = img.pixels[i] / 255.0;
        Sample s;
        s.identity = identity;
        s.band = band;
        s.session = session;
        s.index = index;
        s.height = target_size;
        s.width = target_size;
        s.image = resize_area(values, img.height, img.width, target_size, target_size);
        result.samples.push_back(std::move(s));
      } catch (const std::exception& e) {
        result.errors.push_back(file.string() + ": " + e.what());
      }
    }
  }
}

}  // namespace

DirectoryLoadResult load_image_directory(const std::filesystem::path& root,
                                         int target_size) {
  namespace fs = std::filesystem;
  DirectoryLoadResult result;
  if (!fs::exists(root)) return result;  // empty dataset, no error

  for (const fs::path& band_dir : sorted_entries(root)) {
    if (!fs::is_directory(band_dir)) continue;  // manifests etc. live alongside
    const auto band = parse_band(band_dir.filename().string());
    if (!band) {
      result.errors.push_back(band_dir.string() + ": unknown band directory name");
      continue;
    }
    load_identity_tree(band_dir, *band, target_size, result);
  }
  return result;
}

DirectoryLoadResult load_band_directory(const std::filesystem::path& dir, Band band,
                                        int target_size) {
  DirectoryLoadResult result;
  if (!std::filesystem::exists(dir)) return result;
  load_identity_tree(dir, band, target_size, result);
  return result;
}

void save_dataset_directory(const FederationDataset& ds,
                            const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  char idbuf[16];
  auto write_sample = [&](const Sample& s) {
    std::snprintf(idbuf, sizeof(idbuf), "%04d", s.identity);
    const fs::path dir = root / to_string(s.band) / idbuf;
    fs::create_directories(dir);
    GrayImage img;
    img.width = s.width;
    img.height = s.height;
    img.pixels.resize(s.image.size());
    for (std::size_t i = 0; i < s.image.size(); ++i)
      img.pixels[i] = static_cast<std::uint8_t>(
          std::lround(255.0 * std::min(1.0, std::max(0.0, s.image[i]))));
    const std::string name =
        std::to_string(s.session) + "_" + std::to_string(s.index) + ".png";
    write_png(img, dir / name);
  };
  for (int b = 0; b < 4; ++b) {
    for (const Sample& s : ds.train_by_band[b]) write_sample(s);
    for (const Sample& s : ds.probe_by_band[b]) write_sample(s);
  }
}

}  // namespace psfed
