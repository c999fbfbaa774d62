#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace sage {

/// A decimal literal found in free text.
struct NumberToken {
    double value;
    std::size_t pos;  // byte offset of the literal, sign included
    std::string_view text;
};

/// Integer and decimal literals (optional leading minus) that are not part
/// of an identifier: "mpnet2" and "x1" contribute nothing, "15." yields 15.
std::vector<NumberToken> scan_numbers(std::string_view text);

std::string_view trim(std::string_view s);

/// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

}  // namespace sage
