#include "halo/distill.hpp"

#include <spdlog/spdlog.h>

#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "halo/parallel.hpp"
#include "halo/text.hpp"

namespace halo::distill {

using nlohmann::json;

std::string to_string(LabelStatus status) {
  switch (status) {
    case LabelStatus::kValid: return "valid";
    case LabelStatus::kFilteredUnknown: return "filtered_unknown";
    case LabelStatus::kFilteredEmpty: return "filtered_empty";
  }
  return "filtered_empty";
}

LabelStatus parse_label_status(std::string_view text) {
  if (text == "valid") return LabelStatus::kValid;
  if (text == "filtered_unknown") return LabelStatus::kFilteredUnknown;
  if (text == "filtered_empty") return LabelStatus::kFilteredEmpty;
  throw InvalidArgument("unknown label status: " + std::string(text));
}

std::string TableBackend::generate(const std::string& prompt) {
  auto it = table_.find(prompt);
  return it == table_.end() ? std::string("unknown") : it->second;
}

std::string TableBackend::identity() const {
  std::uint64_t h = text::fnv1a("table");
  for (const auto& [k, v] : table_) h = text::fnv1a(v, text::fnv1a(k, h));
  return "table/" + std::to_string(h);
}

namespace {

// Multi-word entries first so "rose window" wins over "window".
const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v{
      "stained glass window", "rose window", "bell tower", "quire screen", "choir screen",
      "window", "portal", "doorway", "door", "facade", "dome", "minaret", "spire", "tower",
      "archway", "arch", "colonnade", "column", "pulpit", "altar", "apse", "nave", "choir",
      "sundial", "tympanum", "pediment", "roundel", "fresco", "mosaic", "statue", "sculpture",
      "organ", "ceiling", "vault", "courtyard", "fountain", "mihrab", "minbar", "cloister",
      "crypt", "gate", "interior", "exterior"};
  return v;
}

// Surface phrase -> canonical answer.
const std::vector<std::pair<std::string, std::string>>& synonyms() {
  static const std::vector<std::pair<std::string, std::string>> s{
      {"arched walkways", "archways"}, {"fachada", "facade"},  {"portail", "portal"},
      {"fenster", "window"},           {"cupola", "dome"},     {"kuppel", "dome"}};
  return s;
}

bool is_direction(std::string_view w) {
  static constexpr std::array<std::string_view, 8> kDirs{"north",    "south",    "east",    "west",
                                                         "northern", "southern", "eastern", "western"};
  return std::find(kDirs.begin(), kDirs.end(), w) != kDirs.end();
}

std::vector<std::string> normalize_words(std::string_view s) {
  std::string cleaned;
  for (char c : s) {
    cleaned.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : ' ');
  }
  return text::split_words(cleaned);
}

// Number of words matched at `pos`, or 0. Plural surface forms match.
std::size_t match_at(const std::vector<std::string>& words, std::size_t pos, const std::string& phrase) {
  const auto parts = text::split_words(phrase);
  if (pos + parts.size() > words.size()) return 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& w = words[pos + i];
    if (w != parts[i] && text::singularize(w) != parts[i]) return 0;
  }
  return parts.size();
}

std::string title_case(std::string s) {
  bool start = true;
  for (char& c : s) {
    if (start && std::isalpha(static_cast<unsigned char>(c))) c = static_cast<char>(std::toupper(c));
    start = c == ' ';
  }
  return s;
}

}  // namespace

RuleBackend::RuleBackend(std::uint64_t seed) : seed_(seed) {}

std::string RuleBackend::identity() const { return "rule-mock/v1/seed=" + std::to_string(seed_); }

std::string RuleBackend::generate(const std::string& prompt) {
  const auto nl = prompt.find('\n');
  const auto description = nl == std::string::npos ? std::string_view{} : std::string_view(prompt).substr(nl + 1);
  const auto words = normalize_words(description);
  for (std::size_t pos = 0; pos < words.size(); ++pos) {
    std::string answer;
    for (const auto& [surface, canonical] : synonyms()) {
      if (match_at(words, pos, surface)) {
        answer = canonical;
        break;
      }
    }
    if (answer.empty()) {
      for (const auto& term : vocabulary()) {
        if (const auto n = match_at(words, pos, term)) {
          std::vector<std::string> surface(words.begin() + static_cast<std::ptrdiff_t>(pos),
                                           words.begin() + static_cast<std::ptrdiff_t>(pos + n));
          answer = text::join(surface, " ");
          break;
        }
      }
    }
    if (answer.empty()) continue;
    if (pos > 0 && is_direction(words[pos - 1])) answer = words[pos - 1] + " " + answer;
    return title_case(answer);
  }
  return "unknown";
}

CommandBackend::CommandBackend(std::filesystem::path program, std::uint64_t seed)
    : program_(std::move(program)), seed_(seed) {}

std::string CommandBackend::identity() const {
  return "cmd:" + program_.string() + "/seed=" + std::to_string(seed_) + "/beams=" + std::to_string(beam_width());
}

std::string CommandBackend::generate(const std::string& prompt) {
  auto tmp = std::filesystem::temp_directory_path() /
             ("halo_prompt_" + std::to_string(text::fnv1a(prompt)) + ".txt");
  {
    std::ofstream out(tmp, std::ios::binary);
    out << prompt;
  }
  const std::string cmd = "'" + program_.string() + "' --seed " + std::to_string(seed_) + " --beams " +
                          std::to_string(beam_width()) + " < '" + tmp.string() + "'";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw Error("cannot start " + program_.string());
  std::string output;
  std::array<char, 256> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) output += buf.data();
  const int status = ::pclose(pipe);
  std::filesystem::remove(tmp);
  if (status != 0) throw Error(program_.string() + " exited with status " + std::to_string(status));
  const auto nl = output.find('\n');
  return text::trim(output.substr(0, nl));
}

std::unique_ptr<TextGenBackend> make_backend(std::string_view spec, std::uint64_t seed) {
  if (spec == "mock") return std::make_unique<RuleBackend>(seed);
  if (spec.starts_with("cmd:")) {
    return std::make_unique<CommandBackend>(std::filesystem::path(spec.substr(4)), seed);
  }
  throw InvalidArgument("unknown text-generation backend: " + std::string(spec));
}

std::string build_prompt(const ImageMetadata& meta, std::string_view building_name) {
  if (building_name.empty()) throw InvalidArgument("building name must be nonempty");
  std::string instruction(kInstructionTemplate);
  instruction.replace(instruction.find("{building}"), 10, building_name);
  std::vector<std::string> fields;
  if (!meta.filename.empty()) fields.push_back(meta.filename);
  if (!meta.caption.empty()) fields.push_back(meta.caption);
  for (const auto& cat : meta.wiki_categories) {
    if (!cat.empty()) fields.push_back(cat);
  }
  return instruction + "\n" + text::join(fields, "; ");
}

std::string generate_pseudolabel(const std::string& prompt, TextGenBackend& backend,
                                 std::string_view image_id) {
  try {
    return backend.generate(prompt);
  } catch (const std::exception& e) {
    throw GenerationError(std::string(image_id), e.what());
  }
}

namespace {

bool starts_with_any(std::string_view word, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& p) { return word.starts_with(p); });
}

bool is_direction_token(const std::string& word, const CleanupConfig& config) {
  auto in_list = [&](std::string_view w) {
    return std::find(config.direction_words.begin(), config.direction_words.end(), w) !=
           config.direction_words.end();
  };
  if (in_list(word)) return true;
  // Hyphenated compounds such as "north-eastern".
  const auto dash = word.find('-');
  if (dash == std::string::npos) return false;
  return in_list(std::string_view(word).substr(0, dash)) && in_list(std::string_view(word).substr(dash + 1));
}

}  // namespace

PseudoLabel clean_pseudolabel(std::string_view raw, const CleanupConfig& config) {
  PseudoLabel label;
  label.raw = std::string(raw);
  auto words = text::split_words(text::to_lower(raw));
  if (!words.empty() && starts_with_any(words.front(), config.uncertainty_prefixes)) {
    label.status = LabelStatus::kFilteredUnknown;
    return label;
  }
  std::size_t first = 0;
  while (first < words.size() && is_direction_token(words[first], config)) ++first;
  words.erase(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(first));
  if (!words.empty() && starts_with_any(words.front(), config.uncertainty_prefixes)) {
    label.status = LabelStatus::kFilteredUnknown;
    return label;
  }
  if (words.empty()) {
    label.status = LabelStatus::kFilteredEmpty;
    return label;
  }
  label.cleaned = text::join(words, " ");
  label.status = LabelStatus::kValid;
  return label;
}

DistillResult distill_scene(const SceneManifest& scene, TextGenBackend& backend, int workers,
                            const CleanupConfig& config) {
  DistillResult result;
  result.labels.resize(scene.images.size());
  const int pool = backend.concurrent_safe() ? workers : 1;
  parallel_for(scene.images.size(), pool, [&](std::size_t i) {
    const auto& rec = scene.images[i];
    const auto prompt = build_prompt(rec.metadata, scene.landmark_name);
    auto label = clean_pseudolabel(generate_pseudolabel(prompt, backend, rec.id), config);
    label.image_id = rec.id;
    result.labels[i] = std::move(label);
  });
  for (const auto& l : result.labels) {
    switch (l.status) {
      case LabelStatus::kValid: ++result.stats.valid; break;
      case LabelStatus::kFilteredUnknown: ++result.stats.filtered_unknown; break;
      case LabelStatus::kFilteredEmpty: ++result.stats.filtered_empty; break;
    }
  }
  return result;
}

void write_pseudolabels(const std::vector<PseudoLabel>& labels, const std::filesystem::path& path) {
  std::string out;
  for (const auto& l : labels) {
    out += json{{"image_id", l.image_id}, {"raw", l.raw}, {"cleaned", l.cleaned}, {"status", to_string(l.status)}}
               .dump() +
           "\n";
  }
  write_text_atomic(path, out);
}

std::vector<PseudoLabel> read_pseudolabels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<PseudoLabel> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      labels.push_back({j.at("image_id").get<std::string>(), j.at("raw").get<std::string>(),
                        j.at("cleaned").get<std::string>(), parse_label_status(j.at("status").get<std::string>())});
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return labels;
}

}  // namespace halo::distill
