#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace halo::text {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
/// Splits on runs of whitespace.
std::vector<std::string> split_words(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string collapse_whitespace(std::string_view s);

/// English noun number heuristics applied to the last word of a phrase.
std::string singularize(std::string_view phrase);
std::string pluralize(std::string_view phrase);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Boundary-marked character trigrams of each word ("<wi", "win", ..., "ow>").
std::vector<std::string> char_trigrams(std::string_view phrase);

}  // namespace halo::text
