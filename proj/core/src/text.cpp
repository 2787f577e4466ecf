#include "halo/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>

namespace halo::text {

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string collapse_whitespace(std::string_view s) { return join(split_words(s), " "); }

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_vowel(char c) { return std::string_view("aeiou").find(c) != std::string_view::npos; }

// Irregular forms common in architectural vocabulary.
constexpr std::array<std::pair<std::string_view, std::string_view>, 6> kIrregular{{
    {"arch", "arches"}, {"church", "churches"}, {"apse", "apses"},
    {"niche", "niches"}, {"vertex", "vertices"}, {"fresco", "frescoes"},
}};

std::string singular_word(std::string_view w) {
  for (auto [sing, plur] : kIrregular) {
    if (w == plur) return std::string(sing);
  }
  if (w.size() <= 3 || ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) {
    return std::string(w);
  }
  if (ends_with(w, "ies") && w.size() > 4) return std::string(w.substr(0, w.size() - 3)) + "y";
  if (ends_with(w, "ches") || ends_with(w, "shes") || ends_with(w, "xes") || ends_with(w, "sses")) {
    return std::string(w.substr(0, w.size() - 2));
  }
  if (ends_with(w, "s")) return std::string(w.substr(0, w.size() - 1));
  return std::string(w);
}

std::string plural_word(std::string_view w) {
  for (auto [sing, plur] : kIrregular) {
    if (w == sing) return std::string(plur);
  }
  if (w.empty()) return {};
  if (ends_with(w, "s") && singular_word(w) != w) return std::string(w);  // already plural
  if (ends_with(w, "y") && w.size() > 1 && !is_vowel(w[w.size() - 2])) {
    return std::string(w.substr(0, w.size() - 1)) + "ies";
  }
  if (ends_with(w, "s") || ends_with(w, "x") || ends_with(w, "ch") || ends_with(w, "sh")) {
    return std::string(w) + "es";
  }
  return std::string(w) + "s";
}

template <typename Fn>
std::string map_last_word(std::string_view phrase, Fn fn) {
  auto words = split_words(phrase);
  if (words.empty()) return {};
  words.back() = fn(words.back());
  return join(words, " ");
}

}  // namespace

std::string singularize(std::string_view phrase) { return map_last_word(phrase, singular_word); }
std::string pluralize(std::string_view phrase) { return map_last_word(phrase, plural_word); }

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> char_trigrams(std::string_view phrase) {
  std::vector<std::string> grams;
  for (const auto& word : split_words(to_lower(phrase))) {
    const std::string marked = "<" + word + ">";
    for (std::size_t i = 0; i + 3 <= marked.size(); ++i) grams.push_back(marked.substr(i, 3));
  }
  return grams;
}

}  // namespace halo::text
