#!/usr/bin/env python3
"""Brute-force replay of the dedup cascade over a scripted fixture.

Every canonical entry is compared against every incoming item with a plain
cosine; the scripted judge answers stand in for the model.
"""
import argparse
import json
import math
import sys


def vector(item, dim):
    v = [0.0] * dim
    sq = 0.0
    for axis, w in item["axes"].items():
        v[int(axis)] = w
        sq += w * w
    v[item["private_axis"]] = math.sqrt(max(0.0, 1.0 - sq))
    return v


def cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def replay(fx):
    dim = fx["dimension"]
    threshold = fx["shortcut_threshold"]
    k = fx["candidates"]
    canon = []  # (stream index, vector)
    groups = {}
    judge_calls = 0
    shortcut_judged = []
    for i, item in enumerate(fx["items"]):
        v = vector(item, dim)
        if not canon:
            canon.append((i, v))
            groups[i] = [i]
            continue
        ranked = sorted(((cosine(v, cv), -ci, ci) for ci, cv in canon), reverse=True)
        ranked = [(s, ci) for s, _, ci in ranked[:k]]
        top_sim, top = ranked[0]
        if top_sim >= threshold:
            groups[top].append(i)
            continue
        judge_calls += 1
        answer = item["judge"]
        if answer is None:
            shortcut_judged.append(i)
            answer = {"duplicate": False}
        if answer["duplicate"]:
            groups[ranked[answer["match"] - 1][1]].append(i)
        else:
            canon.append((i, v))
            groups[i] = [i]
    partition = sorted(sorted(g) for g in groups.values())
    return partition, judge_calls, shortcut_judged


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", required=True, help="fixture with expected_partition")
    args = ap.parse_args()
    with open(args.check) as f:
        fx = json.load(f)
    partition, calls, unscripted = replay(fx)
    expected = sorted(sorted(g) for g in fx["expected_partition"])
    ok = True
    if partition != expected:
        print("partition differs from the fixture")
        print("replayed:", partition)
        print("expected:", expected)
        ok = False
    if calls != fx["expected_judge_calls"]:
        print(f"judge calls {calls}, fixture says {fx['expected_judge_calls']}")
        ok = False
    if unscripted:
        print("items reached the judge without a scripted answer:", unscripted)
        ok = False
    if len(fx["items"]) != sum(len(g) for g in expected):
        print("partition does not cover every item")
        ok = False
    if ok:
        print(f"{len(fx['items'])} items, {len(partition)} groups, {calls} judge calls: fixture agrees")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
