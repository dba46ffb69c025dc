#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdbfr/image.hpp"

namespace tdbfr::cli {

/// Raised for unreadable files and malformed or unsupported images.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads an 8-bit PNG or a PGM/PPM (P2, P3, P5, P6) into a display-range
/// image (v / maxval). Grey+alpha and RGBA lose their alpha channel.
Image read_image(const std::filesystem::path& path);

/// Encodes a display-range image as 8-bit, clamping to [0, 1] and rounding.
/// The format follows the extension: .png, .pgm (1 channel), .ppm (3 channels).
std::vector<unsigned char> encode_image(const Image& img, const std::string& extension);

/// encode_image + write_file_atomic.
void write_image(const std::filesystem::path& path, const Image& img);

/// Writes through a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
void write_file_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

bool is_image_file(const std::filesystem::path& path);

/// Image files directly inside `dir`, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace tdbfr::cli
