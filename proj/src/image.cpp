#include "gatedcot/image.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "gatedcot/digest.hpp"
#include "gatedcot/error.hpp"

namespace gatedcot {

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string sniff_image_mime(const std::vector<unsigned char>& b) {
  auto starts = [&](std::initializer_list<unsigned char> magic) {
    if (b.size() < magic.size()) return false;
    return std::equal(magic.begin(), magic.end(), b.begin());
  };
  if (starts({0x89, 'P', 'N', 'G'})) return "image/png";
  if (starts({0xff, 0xd8, 0xff})) return "image/jpeg";
  if (starts({'G', 'I', 'F', '8'})) return "image/gif";
  if (starts({'B', 'M'})) return "image/bmp";
  if (b.size() >= 12 && starts({'R', 'I', 'F', 'F'}) && b[8] == 'W' &&
      b[9] == 'E' && b[10] == 'B' && b[11] == 'P') {
    return "image/webp";
  }
  return "application/octet-stream";
}

ImageDimensions decode_dimensions(const std::vector<unsigned char>& bytes) {
  if (bytes.empty()) throw ProviderRejected("empty image payload");
  const cv::Mat encoded(1, static_cast<int>(bytes.size()), CV_8UC1,
                        const_cast<unsigned char*>(bytes.data()));
  const cv::Mat decoded = cv::imdecode(encoded, cv::IMREAD_UNCHANGED);
  if (decoded.empty()) throw ProviderRejected("image bytes are not decodable");
  return {decoded.cols, decoded.rows};
}

ImageRef make_image_ref(std::string id, const std::filesystem::path& path,
                        double area_fraction) {
  ImageRef ref;
  ref.id = std::move(id);
  ref.path = path.string();
  ref.area_fraction = area_fraction;
  std::error_code ec;
  if (std::filesystem::is_regular_file(path, ec)) {
    ref.digest = "sha256:" + sha256_hex(read_file_bytes(path));
  }
  return ref;
}

}  // namespace gatedcot
