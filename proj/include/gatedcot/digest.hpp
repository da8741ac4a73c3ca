#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gatedcot {

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const unsigned char> bytes);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

}  // namespace gatedcot
