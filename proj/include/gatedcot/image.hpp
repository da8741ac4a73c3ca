#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gatedcot {

// Reference to image bytes on disk. `digest` is "sha256:<hex>" of the bytes
// when they were available at load time, empty otherwise.
struct ImageRef {
  std::string id;
  std::string path;
  std::string digest;
  // Fraction of the source image this picture covers; 1 for the original.
  double area_fraction = 1.0;

  bool operator==(const ImageRef&) const = default;
};

struct ImageDimensions {
  std::int64_t width = 0;
  std::int64_t height = 0;

  bool operator==(const ImageDimensions&) const = default;
};

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

/// MIME type from magic bytes (png, jpeg, gif, webp, bmp); falls back to
/// application/octet-stream.
std::string sniff_image_mime(const std::vector<unsigned char>& bytes);

/// Decodes the header and returns pixel dimensions. Throws ProviderRejected
/// when the bytes are not a decodable image.
ImageDimensions decode_dimensions(const std::vector<unsigned char>& bytes);

/// Builds an ImageRef for a file, hashing its bytes when it exists.
ImageRef make_image_ref(std::string id, const std::filesystem::path& path,
                        double area_fraction = 1.0);

}  // namespace gatedcot
