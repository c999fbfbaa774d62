#include "sage/text.hpp"

#include <cctype>
#include <charconv>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "sage/error.hpp"

namespace sage {

namespace {

bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::vector<NumberToken> scan_numbers(std::string_view text) {
    std::vector<NumberToken> out;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        const bool starts_digit = digit(text[i]);
        const bool starts_dot = text[i] == '.' && i + 1 < n && digit(text[i + 1]);
        const bool starts_minus = text[i] == '-' && i + 1 < n &&
                                  (digit(text[i + 1]) || (text[i + 1] == '.' && i + 2 < n && digit(text[i + 2])));
        if (!(starts_digit || starts_dot || starts_minus)) {
            ++i;
            continue;
        }
        const bool glued = i > 0 && (ident_char(text[i - 1]) || (text[i - 1] == '.' && !starts_minus));
        // A minus glued to a word is a hyphen ("GPT-4"), not a sign.
        if (starts_minus && i > 0 && ident_char(text[i - 1])) {
            ++i;
            continue;
        }
        std::size_t j = starts_minus ? i + 1 : i;
        while (j < n && digit(text[j])) ++j;
        if (j + 1 < n && text[j] == '.' && digit(text[j + 1])) {
            ++j;
            while (j < n && digit(text[j])) ++j;
        }
        const bool tail_glued = j < n && ident_char(text[j]);
        if (glued || tail_glued) {
            // Skip the whole identifier-ish run.
            while (j < n && (ident_char(text[j]) || text[j] == '.')) ++j;
            i = j;
            continue;
        }
        const std::string_view lit = text.substr(i, j - i);
        std::string buf(lit);
        if (buf.starts_with("-.")) buf.insert(1, "0");
        if (buf.starts_with('.')) buf.insert(0, "0");
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(buf.data(), buf.data() + buf.size(), value);
        if (ec == std::errc() && ptr == buf.data() + buf.size()) out.push_back({value, i, lit});
        i = j;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

}  // namespace sage
