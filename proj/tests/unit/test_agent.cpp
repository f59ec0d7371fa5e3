#include <gtest/gtest.h>

#include "lean_refactor/agent.hpp"
#include "agent_harness.hpp"
#include "test_support.hpp"

using namespace lean_refactor;
using namespace lr_test;

namespace {

const std::string kSmall = "theorem t (a b : Nat) (h : a = b) : b = a := by\n  skip\n  exact h.symm";

std::size_t count_kind(const SessionResult& r, std::string_view kind) { return r.trace.of_kind(kind).size(); }

}  // namespace

TEST(AgentGoldenTest, ThreePlanScenarioMatchesTrace) {
  auto h = Harness::golden();
  const auto r = h.run(golden_config(), golden_input());
  EXPECT_EQ(r.initial_length, 100u);
  EXPECT_EQ(r.final_length, 40u);
  EXPECT_DOUBLE_EQ(r.reduction(), 0.6);
  EXPECT_EQ(r.calls_used, 8u);
  EXPECT_EQ(r.termination, Termination::no_viable_plan);
  EXPECT_EQ(proof_length(r.final_proof), 40u);
  EXPECT_NE(r.final_proof.find("show b = a"), std::string::npos);

  const auto expected = lr_test::load_json(lr_test::data_path("agent_golden/expected_events.json"));
  ASSERT_EQ(r.trace.events.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = r.trace.events[i];
    EXPECT_EQ(e.kind, expected[i][0].get<std::string>()) << "event " << i;
    EXPECT_EQ(e.calls_used, expected[i][1].get<std::size_t>()) << "event " << i;
    for (const auto& [key, value] : expected[i][2].items()) {
      ASSERT_TRUE(e.detail.contains(key)) << "event " << i << " lacks " << key;
      EXPECT_EQ(nlohmann::json::parse(e.detail[key].dump()), value) << "event " << i << " field " << key;
    }
  }
  EXPECT_EQ(h.backend->calls(), 6u);
}

TEST(AgentGoldenTest, RerunIsByteIdentical) {
  auto a = Harness::golden();
  auto b = Harness::golden();
  const auto ra = a.run(golden_config(), golden_input());
  const auto rb = b.run(golden_config(), golden_input());
  EXPECT_EQ(ra.trace.to_json().dump(), rb.trace.to_json().dump());
  EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
  EXPECT_EQ(a.llm.prompts(), b.llm.prompts());
}

TEST(AgentBudgetTest, StopsMidStepWhenBudgetRunsOut) {
  auto h = Harness::golden();
  auto cfg = golden_config();
  cfg.budget = 3;
  const auto r = h.run(cfg, golden_input());
  EXPECT_EQ(r.termination, Termination::budget_exhausted);
  EXPECT_EQ(r.calls_used, 3u);
  EXPECT_EQ(r.final_length, 70u);
  EXPECT_EQ(h.llm.prompts().size(), 3u);
}

TEST(AgentBudgetTest, ZeroBudgetMakesNoCalls) {
  auto h = Harness::golden();
  auto cfg = golden_config();
  cfg.budget = 0;
  const auto r = h.run(cfg, golden_input());
  EXPECT_EQ(r.termination, Termination::budget_exhausted);
  EXPECT_EQ(r.calls_used, 0u);
  EXPECT_EQ(r.final_proof, golden_input());
}

TEST(AgentBudgetTest, TargetCheckedBeforeBudget) {
  auto h = Harness::golden();
  auto cfg = golden_config();
  cfg.budget = 0;
  cfg.target_length = 100;
  EXPECT_EQ(h.run(cfg, golden_input()).termination, Termination::target_reached);

  auto h2 = Harness::golden();
  cfg.budget = 30;
  cfg.target_length = 70;
  const auto r = h2.run(cfg, golden_input());
  EXPECT_EQ(r.termination, Termination::target_reached);
  EXPECT_EQ(r.calls_used, 2u);
}

TEST(AgentBudgetTest, TransportErrorsCostACall) {
  auto script = llm_script({{"responses", {{{"error", "connection reset"}}, "no plan here", "```json\n[]\n```"}}});
  Harness h(script, compiler_script());
  AgentConfig cfg;
  cfg.target_length = 1;
  const auto r = h.run(cfg, kSmall);
  EXPECT_EQ(r.calls_used, 3u);
  EXPECT_EQ(count_kind(r, "llm_error"), 1u);
  EXPECT_EQ(r.termination, Termination::no_viable_plan);
}

TEST(AgentDebugTest, RepairRoundsNeverExceedLimit) {
  for (int d : {0, 1, 3}) {
    const auto broken = "theorem t (a b : Nat) (h : a = b) : b = a := by\n  BROKEN\n  exact h.symm";
    Harness h(by_role(list({plan_block({step_json(2, 2)})}), list({lean_block(broken)}), list({lean_block(broken)})), compiler_script());
    AgentConfig cfg;
    cfg.target_length = 1;
    cfg.max_debug_rounds = d;
    const auto r = h.run(cfg, kSmall);
    EXPECT_EQ(r.termination, Termination::converged) << d;
    EXPECT_EQ(count_kind(r, "debug_round"), static_cast<std::size_t>(d));
    EXPECT_EQ(r.calls_used, static_cast<std::size_t>(3 + d));
    EXPECT_EQ(r.final_proof, kSmall);
    ASSERT_EQ(count_kind(r, "plan_failed"), 1u);
  }
}

TEST(AgentDebugTest, DebugPromptMarksErrorPosition) {
  const auto broken = "theorem t (a b : Nat) (h : a = b) : b = a := by\n  BROKEN\n  exact h.symm";
  const auto fixed = "theorem t (a b : Nat) (h : a = b) : b = a := by\n  exact h.symm";
  Harness h(by_role(list({plan_block({step_json(2, 2)})}), list({lean_block(broken)}), list({lean_block(fixed)})), compiler_script());
  AgentConfig cfg;
  cfg.target_length = 3;
  const auto r = h.run(cfg, kSmall);
  EXPECT_EQ(r.termination, Termination::target_reached);
  EXPECT_EQ(r.final_proof, fixed);
  const auto prompts = h.llm.prompts();
  ASSERT_EQ(prompts.size(), 3u);
  EXPECT_NE(prompts[2].find("  <error>BROKEN</error>"), std::string::npos);
  EXPECT_NE(prompts[2].find("line 2, column 2: unknown tactic"), std::string::npos);
  EXPECT_NE(prompts[2].find("(Round 1)"), std::string::npos);
}

TEST(AgentAdoptionTest, RejectsLongerAndMutatedCandidates) {
  const auto longer = "theorem t (a b : Nat) (h : a = b) : b = a := by\n  skip\n  skip\n  exact h.symm";
  const auto mutated = "theorem t (a b : Nat) (h : a = b) : a = b := by\n  exact h";
  Harness h(by_role(list({plan_block({step_json(2, 2), step_json(3, 3)})}), list({lean_block(longer), lean_block(mutated)}),
                    list({})),
            compiler_script());
  AgentConfig cfg;
  cfg.target_length = 1;
  const auto r = h.run(cfg, kSmall);
  EXPECT_EQ(r.final_proof, kSmall);
  EXPECT_EQ(count_kind(r, "adoption"), 0u);
  const auto skips = r.trace.of_kind("skip");
  ASSERT_EQ(skips.size(), 2u);
  EXPECT_EQ(skips[0]->detail["reason"], "not_shorter");
  EXPECT_EQ(skips[1]->detail["reason"], "statement_mutated");
  // initial check plus the longer candidate; the mutated one never compiles
  EXPECT_EQ(h.backend->calls(), 2u);
}

TEST(AgentAdoptionTest, FirstImprovingStepTriggersReplan) {
  const auto shorter = "theorem t (a b : Nat) (h : a = b) : b = a := by\n  exact h.symm";
  Harness h(by_role(list({plan_block({step_json(2, 2), step_json(3, 3)}), "```json\n[]\n```"}), list({lean_block(shorter)}),
                    list({})),
            compiler_script());
  AgentConfig cfg;
  cfg.target_length = 1;
  const auto r = h.run(cfg, kSmall);
  EXPECT_EQ(r.final_proof, shorter);
  EXPECT_EQ(count_kind(r, "step_attempted"), 1u);
  EXPECT_EQ(count_kind(r, "plan_issued"), 2u);
  EXPECT_EQ(r.termination, Termination::no_viable_plan);
}

TEST(AgentPlanTest, ReparseOnceThenGiveUp) {
  Harness h(llm_script({{"responses", list({"I would simplify it.", "still prose"})}}), compiler_script());
  AgentConfig cfg;
  cfg.target_length = 1;
  const auto r = h.run(cfg, kSmall);
  EXPECT_EQ(r.calls_used, 2u);
  EXPECT_EQ(r.termination, Termination::no_viable_plan);
  EXPECT_EQ(count_kind(r, "warning"), 2u);
  const auto prompts = h.llm.prompts();
  EXPECT_NE(prompts[1].find("no JSON plan list found"), std::string::npos);
}

TEST(AgentPlanTest, ReparseRecovers) {
  const auto shorter = "theorem t (a b : Nat) (h : a = b) : b = a := by\n  exact h.symm";
  Harness h(llm_script({{"responses",
                         {"```json\n{\"line_start\": 2}\n```", plan_block({step_json(2, 2)}), lean_block(shorter),
                          "```json\n[]\n```"}}}),
            compiler_script());
  AgentConfig cfg;
  cfg.target_length = 1;
  const auto r = h.run(cfg, kSmall);
  EXPECT_EQ(r.final_proof, shorter);
  EXPECT_EQ(r.calls_used, 4u);
}

TEST(AgentPlanTest, DropsInvalidStepsAndOrdersOverlaps) {
  Harness h(llm_script({{"responses", {plan_block({step_json(0, 2), step_json(2, 9), step_json(1, 2, "huge"),
                                                    step_json(3, 3, "low"), step_json(2, 3, "medium"),
                                                    step_json(1, 1, "low")}),
                                       "x", "x", "x"}}}),
            compiler_script(), false);
  AgentConfig cfg;
  RefactorAgent agent(cfg, h.bank, h.index, h.embedder, h.llm, h.compiler, h.prompts);
  const auto steps = agent.plan(kSmall, {kSmall, "", "", ""}, {}, {});
  ASSERT_EQ(steps.size(), 3u);
  EXPECT_EQ(steps[0].line_start, 1);
  EXPECT_EQ(steps[1], (PlanStep{2, 3, "t", Reduction::medium, "d"}));
  EXPECT_EQ(steps[2].line_start, 3);
}

TEST(AgentPreconditionTest, InputMustCompileAndVersionMustExist) {
  Harness h(llm_script({{"responses", nlohmann::json::array()}}), compiler_script());
  AgentConfig cfg;
  EXPECT_THROW(h.run(cfg, "theorem t : True := by\n  BROKEN"), PreconditionFailed);
  cfg.objective = ObjectiveSpec::parse("version:v9.9.9");
  EXPECT_THROW(h.run(cfg, kSmall), UnknownVersion);
  cfg.objective = ObjectiveSpec::parse("version:v4.19.0");
  RefactorAgent agent(cfg, h.bank, h.index, h.embedder, h.llm, h.compiler, h.prompts);
  EXPECT_EQ(agent.config().toolchain_version, "v4.19.0");
}

TEST(AgentRetrievalTest, MergesSegmentsWithoutDuplicates) {
  auto h = Harness::golden();
  RefactorAgent agent(golden_config(), h.bank, h.index, h.embedder, h.llm, h.compiler, h.prompts);
  const auto hits = agent.retrieve_for(golden_input());
  ASSERT_EQ(hits.size(), 3u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    EXPECT_EQ(hits[i].rank, i + 1);
    ids.insert(hits[i].strategy_id);
  }
  EXPECT_EQ(ids.size(), 3u);
}

TEST(MarkErrorsTest, WrapsFromColumnToLineEnd) {
  const std::string c = "theorem t : True := by\n  simp [foo]  \n  exact ∀x, bad";
  const std::vector<Diagnostic> d{{2, 7, "error", "unknown identifier"},
                                  {3, 12, "error", "type mismatch"},
                                  {3, 2, "warning", "unused"},
                                  {9, 0, "error", "elsewhere"}};
  EXPECT_EQ(mark_errors(c, d), "theorem t : True := by\n  simp <error>[foo]</error>  \n  exact ∀x, <error>bad</error>");
  EXPECT_EQ(mark_errors("  abc", {{1, 40, "error", "e"}}), "  <error>abc</error>");
  EXPECT_EQ(format_diagnostics(d),
            "line 2, column 7: unknown identifier\nline 3, column 12: type mismatch\nline 9, column 0: elsewhere");
  EXPECT_EQ(format_diagnostics({{0, 0, "error", "no position"}}), "no position");
}

TEST(AgentConfigTest, ValidateRejectsNonsense) {
  AgentConfig c;
  c.budget = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.chunk_sizes = {5, 0};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.target_length = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
