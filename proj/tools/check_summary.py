#!/usr/bin/env python3
"""Recompute an eval directory's summary.csv from its rankings dumps.

Each item's correctness flags are rederived from the stored similarities,
then the per-category and overall accuracies are compared exactly with
summary.csv. Exits non-zero on the first disagreement.
"""
import argparse
import csv
import json
import pathlib
import sys
from collections import defaultdict


def flags(item):
    pos, neg = item["pos_sims"], item["neg_sims"]
    single = pos[0] > max(neg)
    itt = min(pos) > max(neg)
    tot = None
    if item["pos_pos_sim"] is not None:
        tot = item["pos_pos_sim"] > max(item["pos_neg_sims"])
    return single, itt, tot


def expected_rows(suite, items):
    groups = defaultdict(list)
    for it in items:
        groups[it["category"]].append(it)
    rows = {}
    for category, members in list(sorted(groups.items())) + [("all", items)]:
        n = len(members)
        single = sum(1 for it in members if it["correct_single"])
        itt = sum(1 for it in members if it["correct_itt"])
        tots = [it["correct_tot"] for it in members]
        row = {"items": n, "acc_single": single / n, "acc_itt": None, "acc_tot": None}
        if all(t is not None for t in tots):
            row["acc_itt"] = itt / n
            row["acc_tot"] = sum(1 for t in tots if t) / n
        rows[(suite, category)] = row
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("eval_dir", type=pathlib.Path)
    args = ap.parse_args()

    expected = {}
    for path in sorted(args.eval_dir.glob("rankings-*.jsonl")):
        suite = path.stem[len("rankings-"):]
        items = [json.loads(line) for line in path.read_text().splitlines() if line]
        for it in items:
            got = (it["correct_single"], it["correct_itt"], it["correct_tot"])
            if flags(it) != got:
                sys.exit(f"{path.name} item {it['item_id']}: flags {got} but similarities give {flags(it)}")
        expected.update(expected_rows(suite, items))
    if not expected:
        sys.exit(f"no rankings-*.jsonl in {args.eval_dir}")

    with open(args.eval_dir / "summary.csv", newline="") as f:
        actual = list(csv.DictReader(f))
    if len(actual) != len(expected):
        sys.exit(f"summary.csv has {len(actual)} rows, rankings give {len(expected)}")
    for row in actual:
        key = (row["suite"], row["category"])
        want = expected.get(key)
        if want is None:
            sys.exit(f"summary.csv row {key} has no rankings")
        if int(row["items"]) != want["items"]:
            sys.exit(f"{key}: items {row['items']} != {want['items']}")
        for col in ("acc_single", "acc_itt", "acc_tot"):
            got = float(row[col]) if row[col] else None
            if got != want[col]:
                sys.exit(f"{key}: {col} {row[col]!r} != {want[col]!r}")
    print(f"summary.csv matches {len(actual)} rows recomputed from rankings")


if __name__ == "__main__":
    main()
