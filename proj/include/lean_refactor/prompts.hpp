#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "lean_refactor/detail/prompt_templates.hpp"
#include "lean_refactor/errors.hpp"

namespace lean_refactor {

// Named prompt templates with `{{ name }}` placeholders. Defaults are the
// copies embedded at build time; a directory of <name>.tmpl files overrides
// them one by one.
class PromptLibrary {
 public:
  PromptLibrary() {
    for (const auto& [name, body] : detail::kPromptTemplates) templates_.emplace(name, body);
    version_ = detail::kPromptTemplateVersion;
  }

  static PromptLibrary from_directory(const std::filesystem::path& dir) {
    PromptLibrary lib;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".tmpl") continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      lib.templates_[entry.path().stem().string()] = ss.str();
    }
    if (std::ifstream v(dir / "VERSION"); v) std::getline(v, lib.version_);
    return lib;
  }

  const std::string& get(std::string_view name) const {
    auto it = templates_.find(std::string(name));
    if (it == templates_.end()) throw ConfigError("unknown prompt template '" + std::string(name) + "'");
    return it->second;
  }

  const std::string& version() const noexcept { return version_; }
  const std::map<std::string, std::string>& all() const noexcept { return templates_; }

  // Every placeholder must be supplied; unused values are an error too, so a
  // renamed placeholder cannot silently drop content.
  std::string render(std::string_view name, const std::map<std::string, std::string>& values) const {
    return render_text(get(name), values, name);
  }

  static std::string render_text(std::string_view tmpl, const std::map<std::string, std::string>& values,
                                 std::string_view name = "<inline>") {
    std::string out;
    std::map<std::string, bool> used;
    std::size_t pos = 0;
    while (true) {
      const std::size_t open = tmpl.find("{{", pos);
      if (open == std::string_view::npos) break;
      const std::size_t close = tmpl.find("}}", open + 2);
      if (close == std::string_view::npos) break;
      std::string key(tmpl.substr(open + 2, close - open - 2));
      while (!key.empty() && key.front() == ' ') key.erase(key.begin());
      while (!key.empty() && key.back() == ' ') key.pop_back();
      auto it = values.find(key);
      if (it == values.end()) {
        throw ConfigError("prompt '" + std::string(name) + "' needs a value for '" + key + "'");
      }
      used[key] = true;
      out.append(tmpl.substr(pos, open - pos));
      out.append(it->second);
      pos = close + 2;
    }
    out.append(tmpl.substr(pos));
    for (const auto& [k, _] : values) {
      if (!used.contains(k)) throw ConfigError("prompt '" + std::string(name) + "' has no placeholder '" + k + "'");
    }
    return out;
  }

 private:
  std::map<std::string, std::string> templates_;
  std::string version_;
};

// "  1 | first line" style listing used wherever the model must cite lines.
inline std::string numbered_listing(std::string_view text) {
  std::string out;
  std::size_t line_no = 1, start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    out += std::to_string(line_no++) + " | ";
    out.append(text.substr(start, nl - start));
    out += '\n';
    start = nl + 1;
  }
  return out;
}

}  // namespace lean_refactor
