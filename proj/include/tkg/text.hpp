#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace tkg {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Comparison form of an object label: lowercase, runs of path separators
/// collapsed to one, trailing separator stripped.
std::string normalize_object(std::string_view object);

inline bool is_path_separator(char c) { return c == '\\' || c == '/'; }

/// Splits on '\' and '/', dropping empty segments.
std::vector<std::string> split_segments(std::string_view path);

/// Last path segment (the whole string when it has no separator).
std::string basename(std::string_view path);

/// True when `shorter`'s segments equal the trailing segments of `longer`
/// (compared after normalization). Requires at least `min_segments` segments.
bool is_path_suffix(std::string_view shorter, std::string_view longer, std::size_t min_segments = 1);

inline constexpr std::string_view kWildcard = ".*";

bool has_wildcard(std::string_view label);

/// Matches a generalized label against a concrete one. Each ".*" in the
/// pattern stands for one or more characters; everything else is literal.
/// Both sides are normalized first.
bool wildcard_match(std::string_view pattern, std::string_view text);

/// Equal after normalization, or one side is a generalized pattern matching
/// the other.
bool labels_compatible(std::string_view a, std::string_view b);

/// Lowercase tokens split on path separators, whitespace and ':'.
std::vector<std::string> label_tokens(std::string_view label);

/// Hex-encoded SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

}  // namespace tkg
