// Generated by tools/embed_prompts.py from prompts/*.tmpl. Do not edit.
#pragma once

#include <array>
#include <string_view>
#include <utility>

namespace lean_refactor::detail {

inline constexpr std::string_view kPromptTemplateVersion = "1";

inline constexpr std::array<std::pair<std::string_view, std::string_view>, 11> kPromptTemplates{{
    {"debugger", R"LRTMPL(The proof (Round {{ prev_round_num }}) is not correct. Below is the compilation error message; <error></error> marks the position of each error in the proof.

Proof with error positions:

```lean4
{{ marked_proof }}
```

Error message:

{{ error_message }}

Before producing the Lean 4 code that fixes the error, analyze the error message in detail. Fix the compilation errors while keeping the optimization that was already made. Do not revert to the original unoptimized proof.

You must wrap the entire Lean 4 theorem and proof in tags like:

```lean4
<your corrected proof here>
```
)LRTMPL"},
    {"distill", R"LRTMPL(You are given two verified Lean 4 proofs of the same theorem: a long proof and a short proof. Extract the refactoring strategies that turn the long proof into the short one.

Ground every strategy in the long proof: give the first and last line (1-based, as numbered below) of the component of the long proof that the strategy rewrites. A strategy that restructures the whole proof is grounded to the whole range.

## Long proof (numbered)

{{ long_proof_numbered }}

## Short proof

```lean4
{{ short_proof }}
```

## Dependencies

{{ dependencies }}

## Output Format

A single ```json ``` block holding a list of objects with these keys:

[
  {
    "title": "short name of the idea",
    "description": "the core conceptual idea",
    "when_to_apply": "the code pattern or situation that calls for it",
    "application_guide": ["step 1", "step 2"],
    "abstract_example": {"before": "generic before snippet", "after": "generic after snippet"},
    "potential_reduction": "high, medium, or low",
    "line_start": X,
    "line_end": Y
  }
]
)LRTMPL"},
    {"forward_simplify", R"LRTMPL(Rewrite the verified Lean 4 proof below into a shorter proof of the same theorem. Keep the theorem statement unchanged.

```lean4
{{ proof }}
```

Dependencies used by the proof:

{{ dependencies }}

Output the complete theorem and proof in a single ```lean4 ``` block.
)LRTMPL"},
    {"judge_correctness", R"LRTMPL(You are checking a refactoring strategy extracted from a pair of Lean 4 proofs.

Question: does the strategy correctly and logically transform the identified component of the long proof (lines {{ line_start }}-{{ line_end }}) into its counterpart in the short proof?

## Strategy

{{ strategy }}

## Long proof (numbered)

{{ long_proof_numbered }}

## Short proof

```lean4
{{ short_proof }}
```

Answer with a single ```json ``` block: {"pass": true} or {"pass": false, "reason": "..."}.
)LRTMPL"},
    {"judge_decontamination", R"LRTMPL(Decide whether the two Lean 4 theorem statements below state the same problem (up to renaming, notation, or trivial reformulation).

## Candidate statement

```lean4
{{ candidate }}
```

## Evaluation statement

```lean4
{{ eval_statement }}
```

Answer with a single ```json ``` block: {"duplicate": true} or {"duplicate": false}.
)LRTMPL"},
    {"judge_dedup", R"LRTMPL(Decide whether the new refactoring strategy is a semantic duplicate of one of the existing strategies, even if it uses different terminology or a different level of abstraction.

## New strategy

{{ strategy }}

## Existing strategies

{{ candidates }}

Answer with a single ```json ``` block: {"duplicate": true, "match": N} where N is the number of the matching existing strategy, or {"duplicate": false}.
)LRTMPL"},
    {"judge_schema", R"LRTMPL(You are checking a refactoring strategy record for schema fidelity.

Question: are all six fields (title, description, when to apply, application guide, abstract example, potential reduction) accurately and consistently filled in, with no contradictions between them (for example between the when-to-apply precondition and the abstract example)?

## Strategy

{{ strategy }}

## Source pair

Long proof:

```lean4
{{ long_proof }}
```

Short proof:

```lean4
{{ short_proof }}
```

Answer with a single ```json ``` block: {"pass": true} or {"pass": false, "reason": "..."}.
)LRTMPL"},
    {"planner", R"LRTMPL(Analyze the Lean 4 proof below and produce a structured plan for making it shorter while keeping it correct.

## Instructions

Find regions of the proof (or the proof as a whole) that can be simplified. For each opportunity:

1. **Line range**: give the first and last line (1-based, as numbered in the listing below) of the region.
2. **Title**: name the strategy in a few words.
3. **Potential reduction**: estimate the impact on proof length as high, medium, or low.
4. **Strategy**: describe concretely how the region should be rewritten.

## Inputs

1. The Lean 4 statement and proof.
2. The elaborated signature of the theorem.
3. The documentation string, when one exists.
4. Signatures of the dependencies the statement and proof use.
5. Optimization strategies retrieved from the strategy bank, each with the proof location it was retrieved for.

## Retrieved Optimization Strategies

{{ strategies }}

## History

{{ history }}

## Output Format

Output the plans using the following JSON format, wrapped in a single ```json ``` block. The output must be valid JSON.

[
  {
    "line_start": X,
    "line_end": Y,
    "title": "the strategy name",
    "reduction": "high, medium, or low",
    "description": "How the region is rewritten"
  }
]

Ordering rules:
1) Sort plans from the top of the proof to the bottom (increasing line numbers).
2) Regions may overlap. When two plans overlap, the one with the larger potential reduction comes first.
3) When two overlapping plans have the same potential reduction, keep top-to-bottom order.

Return an empty list `[]` when no further simplification is worth attempting.

Here is the proof to optimize:

```lean4
{{ proof }}
```

Numbered listing:

{{ numbered_proof }}

Theorem's elaborated signature:

{{ signature }}

Theorem's documentation:

{{ documentation }}

Dependencies used in the proof:

{{ dependencies }}

Now analyze the proof and generate your optimization plans.
)LRTMPL"},
    {"planner_reparse", R"LRTMPL(Your previous answer could not be parsed: {{ error }}

Reply again with only the list of plans as valid JSON inside a single ```json ``` block, using the keys "line_start", "line_end", "title", "reduction" and "description".
)LRTMPL"},
    {"refactor", R"LRTMPL(You are an expert Lean 4 proof optimizer. Carry out one optimization plan on the proof below, changing the targeted section and keeping the proof correct.

## Current Proof

```lean4
{{ proof }}
```

## Theorem's Elaborated Signature

{{ signature }}

## Documentation

{{ documentation }}

## Dependencies

{{ dependencies }}

## Optimization Plan

**Target Lines:**: {{ line_start }}-{{ line_end }}
**Title:**: {{ title }}
**Description:**: {{ description }}

## Instructions

1. **Focus on the targeted section**: rewrite lines {{ line_start }}-{{ line_end }}; touch the rest only where the change requires it.
2. **Preserve correctness**: the result must compile.
3. **Do NOT modify the theorem statement**: the text up to and including `:=` must stay exactly as it is.
4. **Aim for shorter proof**: the rewritten proof should use fewer tokens.
5. **Output the complete theorem and proof**: not just the changed lines.

Before providing the code, briefly explain what you are changing and why.

Then output the complete optimized Lean 4 code wrapped in tags:

```lean4
<your optimized complete theorem and proof here>
```
)LRTMPL"},
    {"reverse_complexify", R"LRTMPL(Rewrite the verified Lean 4 proof below into a longer, more explicit proof of the same theorem: spell out steps that the current proof leaves to automation, and prefer elementary tactics. Keep the theorem statement unchanged.

```lean4
{{ proof }}
```

Dependencies used by the proof:

{{ dependencies }}

Output the complete theorem and proof in a single ```lean4 ``` block.
)LRTMPL"},
}};

}  // namespace lean_refactor::detail
