#!/usr/bin/env python3
"""Regenerates include/lean_refactor/detail/prompt_templates.hpp from prompts/*.tmpl.

The unit tests compare the embedded copies against the files, so edit the
.tmpl files and rerun this script.
"""
import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DELIM = "LRTMPL"


def main():
    pdir = os.path.join(ROOT, "prompts")
    version = open(os.path.join(pdir, "VERSION")).read().strip()
    names = sorted(f[:-5] for f in os.listdir(pdir) if f.endswith(".tmpl"))
    out = [
        "// Generated by tools/embed_prompts.py from prompts/*.tmpl. Do not edit.",
        "#pragma once",
        "",
        "#include <array>",
        "#include <string_view>",
        "#include <utility>",
        "",
        "namespace lean_refactor::detail {",
        "",
        f'inline constexpr std::string_view kPromptTemplateVersion = "{version}";',
        "",
        f"inline constexpr std::array<std::pair<std::string_view, std::string_view>, {len(names)}> kPromptTemplates{{{{",
    ]
    for n in names:
        body = open(os.path.join(pdir, n + ".tmpl"), encoding="utf-8").read()
        if f"){DELIM}\"" in body:
            sys.exit(f"template {n} contains the raw-string delimiter")
        out.append(f'    {{"{n}", R"{DELIM}({body}){DELIM}"}},')
    out += ["}};", "", "}  // namespace lean_refactor::detail", ""]
    with open(os.path.join(ROOT, "include", "lean_refactor", "detail", "prompt_templates.hpp"), "w",
              encoding="utf-8") as f:
        f.write("\n".join(out))


if __name__ == "__main__":
    main()
