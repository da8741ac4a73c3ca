#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "gatedcot/error.hpp"
#include "gatedcot/harness.hpp"

namespace gatedcot {

using nlohmann::json;

const char* to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "unknown";
}

std::vector<std::string> Sample::labels() const {
  std::vector<std::string> out;
  out.reserve(options.size());
  for (const auto& o : options) out.push_back(o.label);
  return out;
}

std::string format_question(const Sample& sample) {
  std::string out = sample.question;
  for (const auto& o : sample.options) {
    out += "\n(" + o.label + ") " + o.text;
  }
  return out;
}

namespace {

std::optional<Split> split_from_string(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val" || name == "validation" || name == "dev") return Split::Val;
  if (name == "test" || name == "minitest") return Split::Test;
  return std::nullopt;
}

std::string string_field(const json& record, const char* key,
                         std::size_t line, bool required = true) {
  const auto it = record.find(key);
  if (it == record.end() || it->is_null()) {
    if (required) {
      throw DatasetParseError(line, std::string("missing field '") + key + "'");
    }
    return {};
  }
  if (!it->is_string()) {
    throw DatasetParseError(line,
                            std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

Sample parse_sample(const json& record, std::size_t line,
                    const std::filesystem::path& base_dir) {
  if (!record.is_object()) {
    throw DatasetParseError(line, "record is not a JSON object");
  }
  Sample s;
  s.sample_id = string_field(record, "sample_id", line);
  if (s.sample_id.empty()) throw DatasetParseError(line, "empty sample_id");
  s.question = string_field(record, "question", line);
  const std::string image = string_field(record, "image_path", line);
  if (image.empty()) throw DatasetParseError(line, "empty image_path");
  s.image_path = std::filesystem::path(image).is_absolute()
                     ? std::filesystem::path(image)
                     : base_dir / image;
  s.gold_label = string_field(record, "gold_label", line);
  s.image_id = string_field(record, "image_id", line, false);
  if (s.image_id.empty()) s.image_id = s.sample_id;

  const std::string split = string_field(record, "split", line, false);
  if (!split.empty()) {
    const auto parsed = split_from_string(split);
    if (!parsed) throw DatasetParseError(line, "unknown split '" + split + "'");
    s.split = *parsed;
  }

  const auto options = record.find("options");
  if (options == record.end() || !options->is_array() || options->empty()) {
    throw DatasetParseError(line, "options must be a non-empty array");
  }
  std::set<std::string> seen;
  for (const auto& o : *options) {
    if (!o.is_object()) throw DatasetParseError(line, "option is not an object");
    AnswerOption option{string_field(o, "label", line),
                        string_field(o, "text", line)};
    if (option.label.empty()) throw DatasetParseError(line, "empty option label");
    if (!seen.insert(option.label).second) {
      throw DatasetParseError(line, "duplicate option label '" + option.label +
                                        "'");
    }
    s.options.push_back(std::move(option));
  }
  if (!seen.contains(s.gold_label)) {
    throw DatasetParseError(line, "gold_label '" + s.gold_label +
                                      "' is not an option label");
  }
  return s;
}

}  // namespace

std::vector<Sample> parse_dataset(std::istream& in,
                                  const std::filesystem::path& base_dir) {
  std::vector<Sample> samples;
  std::set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(),
                    [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    const json record = json::parse(text, nullptr, false);
    if (record.is_discarded()) throw DatasetParseError(line, "invalid JSON");
    Sample s = parse_sample(record, line, base_dir);
    if (!ids.insert(s.sample_id).second) {
      throw DuplicateId("line " + std::to_string(line) + ": sample_id '" +
                        s.sample_id + "' appears twice");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return parse_dataset(in, path.parent_path());
}

json sample_to_json(const Sample& sample) {
  json options = json::array();
  for (const auto& o : sample.options) {
    options.push_back({{"label", o.label}, {"text", o.text}});
  }
  json j = {{"sample_id", sample.sample_id},
            {"question", sample.question},
            {"image_path", sample.image_path.generic_string()},
            {"options", std::move(options)},
            {"gold_label", sample.gold_label},
            {"split", to_string(sample.split)}};
  if (sample.image_id != sample.sample_id) j["image_id"] = sample.image_id;
  return j;
}

SourceFormat source_format_from_string(std::string_view name) {
  if (name == "m3cot") return SourceFormat::M3CoT;
  if (name == "scienceqa") return SourceFormat::ScienceQA;
  if (name == "mme") return SourceFormat::MME;
  throw ConfigError("unknown source format '" + std::string(name) +
                    "' (expected m3cot, scienceqa or mme)");
}

namespace {

std::string letter(std::size_t index) {
  return std::string(1, static_cast<char>('A' + index));
}

std::vector<AnswerOption> lettered(const json& choices, std::size_t line) {
  if (!choices.is_array() || choices.empty() || choices.size() > 26) {
    throw DatasetParseError(line, "choices must be an array of 1-26 strings");
  }
  std::vector<AnswerOption> out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (!choices[i].is_string()) {
      throw DatasetParseError(line, "choice is not a string");
    }
    out.push_back({letter(i), choices[i].get<std::string>()});
  }
  return out;
}

std::string split_name(const json& record) {
  const std::string raw = record.value("split", "test");
  const auto parsed = split_from_string(raw);
  return to_string(parsed.value_or(Split::Test));
}

std::string json_id(const json& value) {
  return value.is_string() ? value.get<std::string>() : value.dump();
}

ConversionStats convert_m3cot(std::istream& in,
                              const std::filesystem::path& image_root,
                              std::ostream& out) {
  ConversionStats stats;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json r = json::parse(text, nullptr, false);
    if (!r.is_object()) throw DatasetParseError(line, "invalid JSON");
    const std::string image =
        r.contains("image_path") ? r.value("image_path", "") : r.value("image", "");
    if (image.empty()) {
      ++stats.skipped;
      continue;
    }
    const auto options = lettered(r.value("choices", json()), line);
    std::string gold;
    const json& answer = r.value("answer", json());
    if (answer.is_number_integer()) {
      gold = letter(answer.get<std::size_t>());
    } else if (answer.is_string()) {
      gold = answer.get<std::string>();
      if (gold.size() > 2 && gold.front() == '(' && gold.back() == ')') {
        gold = gold.substr(1, gold.size() - 2);
      }
    }
    if (std::none_of(options.begin(), options.end(),
                     [&](const AnswerOption& o) { return o.label == gold; })) {
      throw DatasetParseError(line, "answer is not one of the choice letters");
    }
    Sample s;
    s.sample_id = json_id(r.value("id", json(line)));
    s.question = r.value("question", "");
    s.image_path = image_root / image;
    s.options = options;
    s.gold_label = gold;
    s.image_id = s.sample_id;
    s.split = *split_from_string(split_name(r));
    out << sample_to_json(s).dump() << '\n';
    ++stats.converted;
  }
  return stats;
}

ConversionStats convert_scienceqa(std::istream& in,
                                  const std::filesystem::path& image_root,
                                  std::ostream& out) {
  const json problems = json::parse(in, nullptr, false);
  if (!problems.is_object()) {
    throw DatasetParseError(1, "expected a JSON object keyed by problem id");
  }
  ConversionStats stats;
  std::size_t index = 0;
  for (const auto& [pid, r] : problems.items()) {
    ++index;
    if (!r.is_object() || !r.contains("image") || !r["image"].is_string()) {
      ++stats.skipped;
      continue;
    }
    const auto options = lettered(r.value("choices", json()), index);
    const json& answer = r.value("answer", json());
    if (!answer.is_number_integer() ||
        answer.get<std::size_t>() >= options.size()) {
      throw DatasetParseError(index, "problem " + pid +
                                         " has an out-of-range answer index");
    }
    Sample s;
    s.sample_id = pid;
    s.question = r.value("question", "");
    s.image_path = image_root / pid / r["image"].get<std::string>();
    s.options = options;
    s.gold_label = letter(answer.get<std::size_t>());
    s.image_id = pid;
    s.split = *split_from_string(split_name(r));
    out << sample_to_json(s).dump() << '\n';
    ++stats.converted;
  }
  return stats;
}

ConversionStats convert_mme(std::istream& in,
                            const std::filesystem::path& image_root,
                            std::ostream& out) {
  ConversionStats stats;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream row(text);
    for (std::string col; std::getline(row, col, '\t');) cols.push_back(col);
    if (cols.size() != 3 && cols.size() != 4) {
      throw DatasetParseError(line, "expected 3 or 4 tab-separated columns");
    }
    const bool has_category = cols.size() == 4;
    const std::string category = has_category ? cols[0] : "";
    const std::string& image = cols[has_category ? 1 : 0];
    const std::string& question = cols[has_category ? 2 : 1];
    const std::string& answer = cols[has_category ? 3 : 2];
    std::string gold;
    if (answer == "Yes" || answer == "yes") {
      gold = "A";
    } else if (answer == "No" || answer == "no") {
      gold = "B";
    } else {
      throw DatasetParseError(line, "answer must be Yes or No");
    }
    Sample s;
    s.sample_id = "mme-" + std::to_string(line);
    s.question = question;
    s.image_path = has_category ? image_root / category / image
                                : image_root / image;
    s.options = {{"A", "Yes"}, {"B", "No"}};
    s.gold_label = gold;
    s.image_id = has_category ? category + "/" + image : image;
    s.split = Split::Test;
    out << sample_to_json(s).dump() << '\n';
    ++stats.converted;
  }
  return stats;
}

}  // namespace

ConversionStats convert_dataset(SourceFormat format,
                                const std::filesystem::path& input,
                                const std::filesystem::path& image_root,
                                std::ostream& out) {
  std::ifstream in(input);
  if (!in) throw IoError("cannot open " + input.string());
  switch (format) {
    case SourceFormat::M3CoT:
      return convert_m3cot(in, image_root, out);
    case SourceFormat::ScienceQA:
      return convert_scienceqa(in, image_root, out);
    case SourceFormat::MME:
      return convert_mme(in, image_root, out);
  }
  return {};
}

}  // namespace gatedcot
