#include "image_io.hpp"

#include <png.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include <unistd.h>

namespace tdbfr::cli {

namespace fs = std::filesystem;

namespace {

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Image read_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError(path.string() + ": " + image.message);
  }
  const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = colour ? 3 : 1;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError(path.string() + ": " + msg);
  }
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  Image out(w, h, channels, ValueRange::display);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        out.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
  return out;
}

// Netpbm header tokens, skipping '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
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

Image read_netpbm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string() + ": cannot open");
  const std::string magic = next_token(is);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw IoError(path.string() + ": not a PGM/PPM file");
  }
  auto number = [&](const char* what) {
    const std::string tok = next_token(is);
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw IoError(path.string() + ": bad " + what + " '" + tok + "'");
    }
  };
  const int w = number("width"), h = number("height"), maxval = number("maxval");
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) {
    throw IoError(path.string() + ": bad header");
  }
  const int channels = magic == "P3" || magic == "P6" ? 3 : 1;
  Image out(w, h, channels, ValueRange::display);
  const bool binary = magic == "P5" || magic == "P6";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        int v;
        if (binary) {
          unsigned char b[2];
          const int n = maxval > 255 ? 2 : 1;
          if (!is.read(reinterpret_cast<char*>(b), n)) {
            throw IoError(path.string() + ": truncated pixel data");
          }
          v = n == 2 ? (b[0] << 8) | b[1] : b[0];
        } else {
          v = number("pixel");
        }
        if (v > maxval) throw IoError(path.string() + ": pixel exceeds maxval");
        out.at(c, y, x) = static_cast<double>(v) / maxval;
      }
  return out;
}

}  // namespace

bool is_image_file(const fs::path& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".pgm" || ext == ".ppm";
}

Image read_image(const fs::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm" || ext == ".ppm") return read_netpbm(path);
  throw IoError(path.string() + ": unsupported image format '" + ext + "'");
}

std::vector<unsigned char> encode_image(const Image& img, const std::string& extension) {
  if (img.empty()) throw IoError("cannot encode an empty image");
  if (img.channels() != 1 && img.channels() != 3) {
    throw IoError("cannot encode a " + std::to_string(img.channels()) + "-channel image");
  }
  const Image disp = img.range() == ValueRange::model ? to_display_range(img) : img;
  const int w = disp.width(), h = disp.height(), ch = disp.channels();
  std::vector<unsigned char> interleaved(static_cast<std::size_t>(w) * h * ch);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        interleaved[(static_cast<std::size_t>(y) * w + x) * ch + c] = quantize(disp.at(c, y, x));

  std::string ext = extension;
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = ch == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, interleaved.data(), 0, nullptr)) {
      throw IoError(std::string("png encode: ") + image.message);
    }
    std::vector<unsigned char> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, interleaved.data(), 0, nullptr)) {
      throw IoError(std::string("png encode: ") + image.message);
    }
    out.resize(size);
    return out;
  }
  if (ext == ".pgm" || ext == ".ppm") {
    if ((ext == ".pgm") != (ch == 1)) {
      throw IoError(ext + " needs " + (ext == ".pgm" ? "1" : "3") + " channel(s)");
    }
    std::ostringstream os;
    os << (ch == 1 ? "P2" : "P3") << '\n' << w << ' ' << h << "\n255\n";
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w * ch; ++x) {
        if (x) os << ' ';
        os << static_cast<int>(interleaved[static_cast<std::size_t>(y) * w * ch + x]);
      }
      os << '\n';
    }
    const std::string s = os.str();
    return {s.begin(), s.end()};
  }
  throw IoError("unsupported output format '" + extension + "'");
}

void write_image(const fs::path& path, const Image& img) {
  write_file_atomic(path, encode_image(img, path.extension().string()));
}

void write_file_atomic(const fs::path& path, const std::vector<unsigned char>& bytes) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) {
    std::error_code mk;
    fs::create_directories(path.parent_path(), mk);
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(tmp.string() + ": cannot open for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os.flush()) throw IoError(tmp.string() + ": write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(path.string() + ": rename failed");
  }
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  write_file_atomic(path, std::vector<unsigned char>(bytes.begin(), bytes.end()));
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string() + ": cannot open");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace tdbfr::cli
