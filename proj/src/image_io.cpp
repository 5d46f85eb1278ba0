#include "lfc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <regex>
#include <sstream>

#include "lfc/errors.hpp"

namespace lfc::io {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  if (!e.empty() && e[0] == '.') e.erase(0, 1);
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return e;
}

int to_level(double s, int maxval) {
  return static_cast<int>(std::lround(std::clamp(s, 0.0, 1.0) * maxval));
}

// --- PNM ------------------------------------------------------------------

std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = next_token(in);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw FormatError(path.string() + ": unsupported PNM magic '" + magic + "'");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PNM header");
  }
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
    throw FormatError(path.string() + ": bad PNM dimensions");
  }
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * channels * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw FormatError(path.string() + ": truncated PNM data");
  }
  Image img{width, height, channels, std::vector<double>(raw.size() / bytes)};
  for (int r = 0; r < height; ++r)
    for (int k = 0; k < width; ++k)
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = (static_cast<std::size_t>(r) * width + k) * channels + c;
        const int level = bytes == 2 ? (raw[2 * i] << 8) | raw[2 * i + 1] : raw[i];
        img.at(c, r, k) = static_cast<double>(level) / maxval;
      }
  return img;
}

void write_pnm(const fs::path& path, const Image& img, int bit_depth) {
  const int maxval = bit_depth == 16 ? 65535 : 255;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n"
      << img.width << " " << img.height << "\n"
      << maxval << "\n";
  std::vector<unsigned char> raw;
  raw.reserve(img.samples.size() * (bit_depth == 16 ? 2 : 1));
  for (int r = 0; r < img.height; ++r)
    for (int k = 0; k < img.width; ++k)
      for (int c = 0; c < img.channels; ++c) {
        const int level = to_level(img.at(c, r, k), maxval);
        if (bit_depth == 16) raw.push_back(static_cast<unsigned char>(level >> 8));
        raw.push_back(static_cast<unsigned char>(level & 0xFF));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// --- PNG ------------------------------------------------------------------

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

Image read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError(path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_set_swap(png);  // 16-bit samples to host little-endian order
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  img.channels = png_get_channels(png, info) >= 3 ? 3 : 1;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (int r = 0; r < img.height; ++r) rows[r] = buffer.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const int stride = img.channels;
  const double maxval = depth == 16 ? 65535.0 : 255.0;
  img.samples.assign(static_cast<std::size_t>(img.channels) * img.width * img.height, 0.0);
  for (int r = 0; r < img.height; ++r)
    for (int k = 0; k < img.width; ++k)
      for (int c = 0; c < img.channels; ++c) {
        const std::size_t i = static_cast<std::size_t>(k) * stride + c;
        const int level = depth == 16 ? rows[r][2 * i] | (rows[r][2 * i + 1] << 8) : rows[r][i];
        img.at(c, r, k) = level / maxval;
      }
  return img;
}

void write_png(const fs::path& path, const Image& img, int bit_depth) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  const int depth = bit_depth == 16 ? 16 : 8;
  const int maxval = depth == 16 ? 65535 : 255;
  const int bytes = depth / 8;
  std::vector<png_byte> buffer(static_cast<std::size_t>(img.width) * img.height * img.channels * bytes);
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r) {
    rows[r] = buffer.data() + static_cast<std::size_t>(r) * img.width * img.channels * bytes;
    for (int k = 0; k < img.width; ++k)
      for (int c = 0; c < img.channels; ++c) {
        const int level = to_level(img.at(c, r, k), maxval);
        const std::size_t i = (static_cast<std::size_t>(k) * img.channels + c) * bytes;
        if (depth == 16) {
          rows[r][i] = static_cast<png_byte>(level >> 8);
          rows[r][i + 1] = static_cast<png_byte>(level & 0xFF);
        } else {
          rows[r][i] = static_cast<png_byte>(level);
        }
      }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, bit_depth == 16 ? 16 : 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == "png") return read_png(path);
  if (ext == "pgm" || ext == "ppm" || ext == "pnm") return read_pnm(path);
  throw FormatError("unsupported image extension: " + path.string());
}

void write_image(const fs::path& path, const Image& image, int bit_depth) {
  if (image.channels != 1 && image.channels != 3) throw FormatError("images must have 1 or 3 channels");
  const std::string ext = lower_ext(path);
  if (ext == "png") return write_png(path, image, bit_depth);
  if (ext == "pgm" || ext == "ppm" || ext == "pnm") return write_pnm(path, image, bit_depth);
  throw FormatError("unsupported image extension: " + path.string());
}

LightField4D read_sai_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  static const std::regex name_re(R"(view_(\d+)_(\d+)\.(png|pgm|ppm|pnm))", std::regex::icase);
  std::map<std::pair<int, int>, fs::path> views;
  int max_u = -1, max_v = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, name_re)) continue;
    const int u = std::stoi(m[1]), v = std::stoi(m[2]);
    views[{u, v}] = entry.path();
    max_u = std::max(max_u, u);
    max_v = std::max(max_v, v);
  }
  if (views.empty()) throw FormatError("no view_{u}_{v} images in " + dir.string());
  const int U = max_u + 1, V = max_v + 1;
  if (static_cast<int>(views.size()) != U * V) {
    throw FormatError("incomplete SAI grid in " + dir.string() + ": found " +
                      std::to_string(views.size()) + " of " + std::to_string(U * V) + " views");
  }
  LightField4D lf;
  for (const auto& [uv, path] : views) {
    const Image img = read_image(path);
    if (lf.size() == 0) lf = LightField4D(img.channels, U, V, img.height, img.width);
    if (img.channels != lf.channels() || img.height != lf.H() || img.width != lf.W()) {
      throw FormatError("view " + path.filename().string() + " differs in size or channels");
    }
    for (int c = 0; c < lf.channels(); ++c)
      for (int h = 0; h < lf.H(); ++h)
        for (int w = 0; w < lf.W(); ++w) lf.at(c, uv.first, uv.second, h, w) = img.at(c, h, w);
  }
  return lf;
}

void write_sai_dir(const fs::path& dir, const LightField4D& lf, const std::string& extension,
                   int bit_depth) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const ValueRange rg = lf.range();
  for (int u = 0; u < lf.U(); ++u)
    for (int v = 0; v < lf.V(); ++v) {
      Image img{lf.W(), lf.H(), lf.channels(), {}};
      img.samples.resize(static_cast<std::size_t>(lf.channels()) * lf.H() * lf.W());
      for (int c = 0; c < lf.channels(); ++c)
        for (int h = 0; h < lf.H(); ++h)
          for (int w = 0; w < lf.W(); ++w)
            img.at(c, h, w) = (lf.at(c, u, v, h, w) - rg.lo) / (rg.hi - rg.lo);
      write_image(dir / ("view_" + std::to_string(u) + "_" + std::to_string(v) + "." + extension),
                  img, bit_depth);
    }
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  bool has_range = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "A") m.A = std::stoi(value);
      else if (key == "H") m.H = std::stoi(value);
      else if (key == "W") m.W = std::stoi(value);
      else if (key == "channels") m.channels = std::stoi(value);
      else if (key == "range") {
        const auto comma = value.find(',');
        if (comma == std::string::npos) throw FormatError("range must be lo,hi");
        m.range = {std::stod(value.substr(0, comma)), std::stod(value.substr(comma + 1))};
        has_range = true;
      }
    } catch (const std::invalid_argument&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad value for " + key);
    }
  }
  if (m.A < 1 || m.H < 1 || m.W < 1 || m.channels < 1) {
    throw FormatError(path.string() + ": manifest needs positive A, H, W, channels");
  }
  if (has_range && !(m.range.hi > m.range.lo)) throw FormatError(path.string() + ": empty range");
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  std::ostringstream range;
  range.precision(17);
  range << m.range.lo << "," << m.range.hi;
  out << "A=" << m.A << "\nH=" << m.H << "\nW=" << m.W << "\nchannels=" << m.channels
      << "\nrange=" << range.str() << "\n";
}

fs::path manifest_path_for(const fs::path& image) {
  fs::path p = image;
  p += ".manifest";
  return p;
}

MacPI read_macpi(const fs::path& image) {
  const Manifest man = read_manifest(manifest_path_for(image));
  const Image img = read_image(image);
  if (img.height != man.A * man.H || img.width != man.A * man.W || img.channels != man.channels) {
    throw FormatError(image.string() + ": image extent disagrees with its manifest");
  }
  std::vector<double> px = img.samples;
  for (double& s : px) s = man.range.lo + s * (man.range.hi - man.range.lo);
  return make_macpi(img.channels, man.A, img.height, img.width, std::move(px), man.range);
}

void write_macpi(const fs::path& image, const MacPI& m, int bit_depth) {
  const ValueRange rg = m.range();
  Image img{m.cols(), m.rows(), m.channels(), m.pixels()};
  for (double& s : img.samples) s = (s - rg.lo) / (rg.hi - rg.lo);
  write_image(image, img, bit_depth);
  write_manifest(manifest_path_for(image), {m.A(), m.H(), m.W(), m.channels(), rg});
}

}  // namespace lfc::io
