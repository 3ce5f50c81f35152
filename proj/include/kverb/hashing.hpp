#pragma once

#include <span>
#include <string>
#include <string_view>

namespace kverb {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const double> values);

}  // namespace kverb
