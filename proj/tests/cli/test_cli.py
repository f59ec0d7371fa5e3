#!/usr/bin/env python3
"""End-to-end checks of the lean-refactor binary against scripted backends.

usage: test_cli.py <lean-refactor binary> <test data dir>
"""
import json
import os
import shutil
import subprocess
import sys
import tempfile
import unittest

BIN = None
DATA = None


def run(*args, stdin=None, env=None):
    return subprocess.run([BIN, *args], input=stdin, capture_output=True, text=True, timeout=60, env=env)


def golden(name):
    return os.path.join(DATA, "agent_golden", name)


def strategy_record(title, description, pair_id="p1"):
    return {
        "title": title,
        "description": description,
        "when_to_apply": "When " + title.lower() + " applies.",
        "application_guide": ["Find the spot", "Rewrite it"],
        "abstract_example": {"before": "a\nb", "after": "b"},
        "potential_reduction": "medium",
        "line_start": 1,
        "line_end": 2,
        "pair_id": pair_id,
    }


class CliTest(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.mkdtemp(prefix="lr-cli-")

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)

    def write(self, name, content):
        p = self.path(name)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        with open(p, "w") as f:
            f.write(content if isinstance(content, str) else json.dumps(content))
        return p

    def test_usage_errors_exit_2(self):
        self.assertEqual(run().returncode, 2)
        self.assertEqual(run("tokenize", "--bogus").returncode, 2)
        self.assertEqual(run("refactor", "--config", self.path("none.json"), golden("input.lean")).returncode, 2)
        self.assertEqual(run("eval").returncode, 2)
        self.assertEqual(run("--help").returncode, 0)

    def test_tokenize(self):
        r = run("tokenize", golden("input.lean"))
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(r.stdout.strip(), "100")
        r = run("tokenize", "-", stdin="theorem t : True := by\n  exact trivial\n")
        self.assertEqual(r.stdout.strip(), "3")
        r = run("tokenize", "-", stdin="no declaration here")
        self.assertEqual(r.returncode, 1)
        self.assertEqual(r.stdout.strip(), str(10**9))

    def test_refactor_golden_scenario_and_eval(self):
        out = self.path("run")
        r = run("refactor", "--config", golden("config.json"), golden("input.lean"), "--out", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("input: 100 -> 40 tokens (60.00%), no_viable_plan, 8 calls", r.stdout)
        with open(os.path.join(out, "input", "result.json")) as f:
            result = json.load(f)
        self.assertEqual(result["status"], "ok")
        self.assertEqual(result["final_length"], 40)
        self.assertIn("show b = a", result["final_proof"])
        with open(os.path.join(out, "input", "trace.json")) as f:
            trace = f.read()
        self.assertEqual(json.loads(trace)["events"][-1]["kind"], "termination")

        again = self.path("run2")
        run("refactor", "--config", golden("config.json"), golden("input.lean"), "--out", again)
        with open(os.path.join(again, "input", "trace.json")) as f:
            self.assertEqual(f.read(), trace)

        r = run("eval", "--run", out)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("60.00", r.stdout)
        with open(os.path.join(out, "report.json")) as f:
            report = json.load(f)
        self.assertEqual(report["proofs"], 1)

    def test_refactor_budget_flag(self):
        r = run("refactor", "--config", golden("config.json"), golden("input.lean"), "--budget", "3",
                "--out", self.path("run"))
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("budget_exhausted, 3 calls", r.stdout)

    def test_refactor_precondition_failure_exit_1(self):
        src = self.write("broken.lean", "theorem b (a : Nat) : a = a := by\n  BROKEN_tactic\n  rfl\n")
        r = run("refactor", "--config", golden("config.json"), src, "--out", self.path("run"))
        self.assertEqual(r.returncode, 1)
        with open(self.path("run", "broken", "result.json")) as f:
            self.assertEqual(json.load(f)["status"], "precondition_failed")

    def test_secrets_only_through_environment(self):
        base = json.load(open(golden("config.json")))
        base["bank"] = golden("bank")
        base["toolchains"] = golden("toolchains.json")
        base["compiler"]["script"] = golden("compiler.json")
        inline = dict(base, llm={"provider": "openai", "base_url": "http://127.0.0.1:1", "model": "m",
                                  "api_key": "sk-inline"})
        cfg = self.write("inline.json", inline)
        r = run("refactor", "--config", cfg, golden("input.lean"), "--out", self.path("run"))
        self.assertEqual(r.returncode, 2)
        self.assertIn("api_key_env", r.stderr)

        missing = dict(base, llm={"provider": "openai", "base_url": "http://127.0.0.1:1", "model": "m",
                                   "api_key_env": "LR_CLI_TEST_KEY"})
        cfg = self.write("missing.json", missing)
        env = {k: v for k, v in os.environ.items() if k != "LR_CLI_TEST_KEY"}
        r = run("refactor", "--config", cfg, golden("input.lean"), "--out", self.path("run"), env=env)
        self.assertEqual(r.returncode, 2)
        self.assertIn("LR_CLI_TEST_KEY", r.stderr)
        self.assertEqual(run("refactor", "--api-key", "x", golden("input.lean")).returncode, 2)

    def test_bank_stats_retrieve_and_recheck(self):
        common = ["--bank", golden("bank"), "--toolchains", golden("toolchains.json")]
        r = run("bank", "stats", *common)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("strategies: 3", r.stdout)

        r = run("retrieve", *common, "--k", "2", "redundant have statements")
        self.assertEqual(r.returncode, 0, r.stderr)
        lines = r.stdout.strip().splitlines()
        self.assertEqual(lines[0], "objective: length")
        self.assertEqual([l.split("\t")[0] for l in lines[1:]], ["1", "2"])
        r = run("retrieve", *common, "--objective", "version:v9", "x")
        self.assertEqual(r.returncode, 2)

        bank = self.path("bank")
        shutil.copytree(golden("bank"), bank)
        r = run("bank", "recheck", "--bank", bank, "--toolchains", golden("toolchains.json"))
        self.assertEqual(r.returncode, 0, r.stdout)
        self.assertIn("0 discrepancies", r.stdout)
        with open(os.path.join(bank, "strategies.jsonl")) as f:
            rows = [json.loads(l) for l in f if l.strip()]
        rows[0]["median_compile_reduction"] = 0.25
        with open(os.path.join(bank, "strategies.jsonl"), "w") as f:
            f.write("".join(json.dumps(r) + "\n" for r in rows))
        r = run("bank", "recheck", "--bank", bank, "--toolchains", golden("toolchains.json"))
        self.assertEqual(r.returncode, 1)
        self.assertIn("median_compile_reduction", r.stdout)

    def test_bank_dedup_is_idempotent(self):
        llm = self.write("llm.json", {"format": "lean-refactor-mock-llm", "version": 1,
                                      "rules": [{"contains": "semantic duplicate",
                                                 "response": "```json\n{\"duplicate\": false}\n```"}]})
        cfg = self.write("config.json", {"schema_version": 1, "bank": "bank", "toolchains": golden("toolchains.json"),
                                         "llm": {"provider": "mock", "script": llm},
                                         "embedding": {"provider": "mock", "dimension": 32}})
        stream = [strategy_record("Merge rewrites", "Fold consecutive rewrites into one call."),
                  strategy_record("Merge rewrites", "Fold consecutive rewrites into one call.", "p2"),
                  strategy_record("Drop haves", "Remove intermediate facts that are used once.")]
        inp = self.write("stream.jsonl", "".join(json.dumps(s) + "\n" for s in stream))
        r = run("bank", "dedup", "--config", cfg, "--input", inp)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("processed 3, new 2, shortcut 1", r.stdout)
        with open(self.path("bank", "strategies.jsonl")) as f:
            first = f.read()
        r = run("bank", "dedup", "--config", cfg, "--input", inp)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("changes: 0", r.stdout)
        with open(self.path("bank", "strategies.jsonl")) as f:
            self.assertEqual(f.read(), first)


def main():
    global BIN, DATA
    if len(sys.argv) < 3:
        print(__doc__)
        return 2
    BIN, DATA = os.path.abspath(sys.argv[1]), os.path.abspath(sys.argv[2])
    suite = unittest.defaultTestLoader.loadTestsFromTestCase(CliTest)
    result = unittest.TextTestRunner(verbosity=2).run(suite)
    return 0 if result.wasSuccessful() else 1


if __name__ == "__main__":
    sys.exit(main())
