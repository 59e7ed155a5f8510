#!/usr/bin/env python3
# Copyright 2026 The mmfx Authors
# SPDX-License-Identifier: Apache-2.0
"""Joins per-run eval_auc.csv files into one class-by-run table.

    collect_table.py RUNS_DIR TAG [TAG ...]

Rows follow table_template.csv (14 classes, then mean); one column per tag.
"""

import csv
import pathlib
import sys


def main():
    if len(sys.argv) < 3:
        sys.exit(__doc__)
    runs = pathlib.Path(sys.argv[1])
    tags = sys.argv[2:]
    template = pathlib.Path(__file__).resolve().parent / "table_template.csv"
    with template.open() as f:
        rows = [r[0] for r in csv.reader(f)][1:]

    columns = {}
    for tag in tags:
        with (runs / tag / "eval_auc.csv").open() as f:
            header, values = list(csv.reader(f))[:2]
        columns[tag] = dict(zip(header, values))

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["Class"] + tags)
    for row in rows:
        out.writerow([row] + [columns[t].get(row, "-") for t in tags])


if __name__ == "__main__":
    main()
