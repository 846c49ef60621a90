#include "tkg/text.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

namespace tkg {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(std::string_view s) {
    auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

bool starts_with_icase(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) {
        return false;
    }
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i]))) {
            return false;
        }
    }
    return true;
}

std::string normalize_object(std::string_view object) {
    std::string out;
    out.reserve(object.size());
    bool prev_sep = false;
    for (char c : object) {
        if (is_path_separator(c)) {
            if (prev_sep) {
                continue;
            }
            prev_sep = true;
            out.push_back(c);
            continue;
        }
        prev_sep = false;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    while (out.size() > 1 && is_path_separator(out.back())) {
        out.pop_back();
    }
    return out;
}

std::vector<std::string> split_segments(std::string_view path) {
    std::vector<std::string> out;
    std::string current;
    for (char c : path) {
        if (is_path_separator(c)) {
            if (!current.empty()) {
                out.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) {
        out.push_back(std::move(current));
    }
    return out;
}

std::string basename(std::string_view path) {
    auto segments = split_segments(path);
    return segments.empty() ? std::string{} : segments.back();
}

bool is_path_suffix(std::string_view shorter, std::string_view longer, std::size_t min_segments) {
    auto s = split_segments(normalize_object(shorter));
    auto l = split_segments(normalize_object(longer));
    if (s.empty() || s.size() < min_segments || s.size() > l.size()) {
        return false;
    }
    return std::equal(s.rbegin(), s.rend(), l.rbegin());
}

bool has_wildcard(std::string_view label) {
    return label.find(kWildcard) != std::string_view::npos;
}

namespace {

// Segment-wise glob: pieces between ".*" must appear in order; each ".*"
// consumes at least one character.
bool glob_match(const std::string& pattern, const std::string& text) {
    std::vector<std::string> pieces;
    std::size_t pos = 0;
    while (true) {
        auto next = pattern.find(kWildcard, pos);
        if (next == std::string::npos) {
            pieces.push_back(pattern.substr(pos));
            break;
        }
        pieces.push_back(pattern.substr(pos, next - pos));
        pos = next + kWildcard.size();
    }
    if (pieces.size() == 1) {
        return pattern == text;
    }
    // pieces.size() - 1 wildcards, each consuming >= 1 char.
    const auto& head = pieces.front();
    const auto& tail = pieces.back();
    if (text.size() < head.size() + tail.size() + (pieces.size() - 1)) {
        return false;
    }
    if (text.compare(0, head.size(), head) != 0) {
        return false;
    }
    if (text.compare(text.size() - tail.size(), tail.size(), tail) != 0) {
        return false;
    }
    std::size_t cursor = head.size();
    const std::size_t limit = text.size() - tail.size();
    for (std::size_t i = 1; i + 1 < pieces.size(); ++i) {
        // leave at least one char for the wildcard before this piece
        auto found = text.find(pieces[i], cursor + 1);
        if (found == std::string::npos || found + pieces[i].size() > limit) {
            return false;
        }
        cursor = found + pieces[i].size();
    }
    // final wildcard needs one char between cursor and tail
    return limit >= cursor + 1;
}

}  // namespace

bool wildcard_match(std::string_view pattern, std::string_view text) {
    return glob_match(normalize_object(pattern), normalize_object(text));
}

bool labels_compatible(std::string_view a, std::string_view b) {
    auto na = normalize_object(a);
    auto nb = normalize_object(b);
    if (na == nb) {
        return true;
    }
    if (has_wildcard(na) && glob_match(na, nb)) {
        return true;
    }
    return has_wildcard(nb) && glob_match(nb, na);
}

std::vector<std::string> label_tokens(std::string_view label) {
    std::vector<std::string> out;
    std::string current;
    for (char c : label) {
        if (is_path_separator(c) || c == ':' || std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                out.push_back(to_lower(current));
                current.clear();
            }
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) {
        out.push_back(to_lower(current));
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

}  // namespace tkg
