#pragma once

// Chat-model port shared by the agent roles and the bank pipeline, with a
// script-driven mock for offline runs.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lean_refactor/detail/hash.hpp"
#include "lean_refactor/errors.hpp"

namespace lean_refactor {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

struct SamplingParams {
  double temperature = 1.0;
  std::optional<int> max_tokens;
};

class ChatModel {
 public:
  virtual ~ChatModel() = default;
  // Throws RetryableProviderError on transport failure.
  virtual std::string complete(const std::vector<ChatMessage>& messages, const SamplingParams& params) = 0;
};

// Counts calls through any model; the pipeline's judge-call assertions and
// the agent's budget accounting both read it.
class CountingChatModel : public ChatModel {
 public:
  explicit CountingChatModel(ChatModel& inner) : inner_(inner) {}

  std::string complete(const std::vector<ChatMessage>& messages, const SamplingParams& params) override {
    {
      std::lock_guard lock(mu_);
      ++calls_;
    }
    return inner_.complete(messages, params);
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  ChatModel& inner_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

// Fixture format ("format": "lean-refactor-mock-llm", "version": 1):
//
//   {
//     "by_prompt_hash": {"<sha256 of the last message>": "response"},
//     "rules": [
//       {"contains": ["needle", ...], "not_contains": [...],
//        "response": "text"}                 // or
//       {"contains": "...", "responses": ["first", "second", ...]}
//     ],
//     "responses": ["r1", {"error": "transport"}, "r3"]
//   }
//
// Lookup goes hash table, then rules in order (matched against the last
// message), then the ordered "responses" sequence. A rule with a
// "responses" list yields them in turn and then repeats the last one. An
// {"error": ...} entry raises a transport error. An exhausted sequence is a
// transport error too.
class ScriptedChatModel : public ChatModel {
 public:
  static constexpr std::string_view kFormat = "lean-refactor-mock-llm";

  explicit ScriptedChatModel(nlohmann::json script) : script_(std::move(script)) {
    if (script_.value("format", std::string{}) != kFormat || script_.value("version", 0) != 1) {
      throw SchemaError("format", 0, "not a version 1 mock LLM script");
    }
  }

  // Convenience: a pure sequence of responses.
  static ScriptedChatModel sequence(const std::vector<std::string>& responses) {
    return ScriptedChatModel({{"format", kFormat}, {"version", 1}, {"responses", responses}});
  }

  static ScriptedChatModel from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mock LLM script " + path.string());
    return ScriptedChatModel(nlohmann::json::parse(in));
  }

  std::string complete(const std::vector<ChatMessage>& messages, const SamplingParams&) override {
    std::lock_guard lock(mu_);
    const std::string prompt = messages.empty() ? std::string{} : messages.back().content;
    prompts_.push_back(prompt);

    if (script_.contains("by_prompt_hash")) {
      const auto h = detail::sha256_hex(prompt);
      if (script_["by_prompt_hash"].contains(h)) return unwrap(script_["by_prompt_hash"][h]);
    }
    if (script_.contains("rules")) {
      const auto& rules = script_["rules"];
      for (std::size_t i = 0; i < rules.size(); ++i) {
        if (!rule_matches(rules[i], prompt)) continue;
        if (rules[i].contains("responses")) {
          const auto& list = rules[i]["responses"];
          if (list.empty()) throw RetryableProviderError("mock LLM: rule has no responses", 1);
          std::size_t& used = rule_cursor_[i];
          const std::size_t at = std::min(used, list.size() - 1);
          ++used;
          return unwrap(list[at]);
        }
        return unwrap(rules[i].at("response"));
      }
    }
    if (script_.contains("responses") && cursor_ < script_["responses"].size()) {
      return unwrap(script_["responses"][cursor_++]);
    }
    throw RetryableProviderError("mock LLM: no scripted response", 1);
  }

  std::vector<std::string> prompts() const {
    std::lock_guard lock(mu_);
    return prompts_;
  }

 private:
  static bool contains_all(const nlohmann::json& needles, const std::string& hay) {
    if (needles.is_string()) return hay.find(needles.get<std::string>()) != std::string::npos;
    for (const auto& n : needles) {
      if (hay.find(n.get<std::string>()) == std::string::npos) return false;
    }
    return true;
  }

  static bool rule_matches(const nlohmann::json& rule, const std::string& prompt) {
    if (rule.contains("contains") && !contains_all(rule["contains"], prompt)) return false;
    if (rule.contains("not_contains")) {
      const auto& n = rule["not_contains"];
      if (n.is_string()) return prompt.find(n.get<std::string>()) == std::string::npos;
      for (const auto& s : n) {
        if (prompt.find(s.get<std::string>()) != std::string::npos) return false;
      }
    }
    return true;
  }

  static std::string unwrap(const nlohmann::json& entry) {
    if (entry.is_string()) return entry.get<std::string>();
    if (entry.is_object() && entry.contains("error")) {
      throw RetryableProviderError("mock LLM: scripted " + entry["error"].get<std::string>() + " error", 1);
    }
    throw SchemaError("responses", 0, "response entries must be strings or {\"error\": ...}");
  }

  nlohmann::json script_;
  mutable std::mutex mu_;
  std::size_t cursor_ = 0;
  std::map<std::size_t, std::size_t> rule_cursor_;
  std::vector<std::string> prompts_;
};

// ---------------------------------------------------------------------------
// Response parsing helpers shared by every role.

struct FencedBlock {
  std::string language;
  std::string body;
};

// All ``` fenced blocks, in order. A fence opens on a line starting with
// ``` (the rest of the line is the language tag) and closes on a line that is
// just ```. An unterminated final block is ignored.
inline std::vector<FencedBlock> fenced_blocks(std::string_view text) {
  std::vector<FencedBlock> out;
  std::optional<FencedBlock> open;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::string_view trimmed = line;
    while (!trimmed.empty() && (trimmed.front() == ' ' || trimmed.front() == '\t')) trimmed.remove_prefix(1);
    while (!trimmed.empty() && (trimmed.back() == ' ' || trimmed.back() == '\t')) trimmed.remove_suffix(1);
    if (!open) {
      if (trimmed.starts_with("```")) open = FencedBlock{std::string(trimmed.substr(3)), {}};
    } else if (trimmed == "```") {
      if (!open->body.empty()) open->body.pop_back();
      out.push_back(std::move(*open));
      open.reset();
    } else {
      open->body.append(line);
      open->body += '\n';
    }
    if (eol == text.size()) break;
    pos = eol + 1;
  }
  return out;
}

// Last block tagged lean/lean4 (or untagged), if any.
inline std::optional<std::string> last_lean_block(std::string_view text) {
  const auto blocks = fenced_blocks(text);
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    if (it->language == "lean4" || it->language == "lean" || it->language.empty()) return it->body;
  }
  return std::nullopt;
}

// Last ```json block parsed, or a bare JSON document.
inline std::optional<nlohmann::json> last_json_block(std::string_view text) {
  const auto blocks = fenced_blocks(text);
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    if (it->language != "json" && !it->language.empty()) continue;
    auto parsed = nlohmann::json::parse(it->body, nullptr, false);
    if (!parsed.is_discarded()) return parsed;
  }
  auto parsed = nlohmann::json::parse(text, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  return std::nullopt;
}

}  // namespace lean_refactor
