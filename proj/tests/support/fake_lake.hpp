#pragma once

#include <sys/stat.h>

#include <cstdlib>

#include "lean_refactor/compiler_interface.hpp"
#include "test_support.hpp"

namespace lr_test {

// Stand-in for `lake`: `fake_lake env lean [--profile] <file>`.
inline const char* kFakeLake = R"SH(#!/bin/sh
[ "$1" = env ] && [ "$2" = lean ] || { echo "bad usage: $*"; exit 2; }
shift 2
profile=0
if [ "$1" = --profile ]; then profile=1; shift; fi
file="$1"
[ -f "$file" ] || { echo "missing $file"; exit 3; }
printf %s "$(pwd)" > last_cwd.txt
cp "$file" last_source.lean
if grep -q SLEEP "$file"; then sleep 20; fi
if grep -q FAIL "$file"; then
  echo "$file:2:4: error: unknown identifier 'foo'"
  echo "  context line"
  exit 1
fi
if grep -q count_heartbeats "$file"; then
  echo "$file:3:0: info: Used 4321 heartbeats, which is less than the current maximum of 200000"
fi
if [ $profile = 1 ]; then cat "$TRANSCRIPT"; fi
exit 0
)SH";

struct FakeToolchain {
  TempDir dir;
  std::filesystem::path lake;
  std::filesystem::path root;

  FakeToolchain() {
    lake = dir / "fake_lake";
    write_text(lake, kFakeLake);
    ::chmod(lake.c_str(), 0755);
    root = dir / "env";
    std::filesystem::create_directories(root);
    ::setenv("TRANSCRIPT", data_path("profile_transcript_a.txt").c_str(), 1);
  }

  lean_refactor::LeanCompiler compiler() const {
    lean_refactor::LeanCompiler::Options o;
    o.lake_command = lake.string();
    return lean_refactor::LeanCompiler(lean_refactor::ToolchainRegistry({{"v4.9.0", root}, {"v4.15.0", dir / "absent"}}), o);
  }
};

}  // namespace lr_test
