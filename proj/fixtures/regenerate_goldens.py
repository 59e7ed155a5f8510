#!/usr/bin/env python3
# Copyright 2026 The mmfx Authors
# SPDX-License-Identifier: Apache-2.0
"""Writes the golden tensor tables under fixtures/goldens.

Every case is computed here with plain numpy in float64 from inputs that are
first rounded to float32, so the stored inputs are exactly what the C++ side
reads back. Outputs are stored as float32.

    python3 fixtures/regenerate_goldens.py            # rewrite fixtures/goldens
    python3 fixtures/regenerate_goldens.py --out DIR  # write elsewhere
    python3 fixtures/regenerate_goldens.py --check    # compare, exit 1 on diff
"""

import argparse
import filecmp
import json
import pathlib
import struct
import sys
import tempfile

import numpy as np

MAGIC = b"MMFX"
VERSION = 1
RMS_EPS = 1e-5
TOLERANCE = 1e-6


def encode_mmfx(config, tensors):
    doc = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(doc))
    out += doc
    for name, array in tensors:
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", array.ndim)
        out += struct.pack("<%dI" % array.ndim, *array.shape)
        out += np.ascontiguousarray(array, dtype="<f4").tobytes()
    return bytes(out)


def f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def silu(z):
    return z / (1.0 + np.exp(-z))


def rms_norm(x, gain):
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS) * gain


def attention(q, k, v):
    return softmax(q @ k.T / np.sqrt(q.shape[-1])) @ v


def multi_head(x_q, x_kv, w, heads):
    q, k, v = x_q @ w["wq"].T, x_kv @ w["wk"].T, x_kv @ w["wv"].T
    dk = q.shape[-1] // heads
    parts = [attention(q[:, h * dk:(h + 1) * dk], k[:, h * dk:(h + 1) * dk], v[:, h * dk:(h + 1) * dk])
             for h in range(heads)]
    return np.concatenate(parts, axis=-1) @ w["wo"].T


def feed_forward(x, w, form):
    a, b = x @ w["w1"].T, x @ w["w3"].T
    hidden = silu(a * b) if form == "silu_of_product" else silu(a) * b
    return hidden @ w["w2"].T


class Case:
    def __init__(self, name, covers, oracle, seed):
        self.name = name
        self.covers = covers
        self.oracle = oracle
        self.rng = np.random.default_rng(seed)
        self.params = {}
        self.tensors = []

    def normal(self, *shape, scale=1.0):
        return f32(self.rng.standard_normal(shape) * scale)

    def put(self, name, array):
        self.tensors.append((name, np.asarray(array)))
        return f32(array)


def attention_cases():
    c = Case("attention_hand", "attention", "softmax of scaled scores by exp/sum, times values", 0)
    q = c.put("q", np.array([[1.0, 0.0]]))
    k = c.put("k", np.eye(2))
    v = c.put("v", np.eye(2))
    c.put("out", attention(q, k, v))
    yield c

    c = Case("attention_random", "attention", "softmax of scaled scores by exp/sum, times values", 1)
    q = c.put("q", c.normal(3, 4))
    k = c.put("k", c.normal(5, 4))
    v = c.put("v", c.normal(5, 3))
    c.put("out", attention(q, k, v))
    yield c


def attention_weights(c, d, scale):
    return {n: c.put(n, c.normal(d, d, scale=scale)) for n in ("wq", "wk", "wv", "wo")}


def ff_weights(c, d, hidden, scale):
    return {
        "w1": c.put("w1", c.normal(hidden, d, scale=scale)),
        "w2": c.put("w2", c.normal(d, hidden, scale=scale)),
        "w3": c.put("w3", c.normal(hidden, d, scale=scale)),
    }


def multi_head_case():
    c = Case("multi_head_attention", "multi_head_attention", "per-head attention on column slices, concat, output projection", 2)
    c.params["heads"] = 2
    x_q = c.put("x_q", c.normal(4, 6))
    x_kv = c.put("x_kv", c.normal(3, 6))
    w = attention_weights(c, 6, 0.4)
    c.put("out", multi_head(x_q, x_kv, w, 2))
    return c


def feed_forward_cases():
    for seed, form in ((3, "silu_of_product"), (4, "gated")):
        c = Case("feed_forward_" + form, "feed_forward", "three matrix products with silu", seed)
        c.params["form"] = form
        x = c.put("x", c.normal(3, 4))
        w = ff_weights(c, 4, 8, 0.5)
        c.put("out", feed_forward(x, w, form))
        yield c


def residual_case():
    c = Case("attention_residual", "attention_residual", "x plus multi-head self-attention of the normalized x", 5)
    c.params["heads"] = 2
    x = c.put("x", c.normal(5, 4))
    g = c.put("norm1", 1.0 + c.normal(4, scale=0.1))
    w = attention_weights(c, 4, 0.5)
    n = rms_norm(x, g)
    c.put("out", x + multi_head(n, n, w, 2))
    return c


def layer_cases():
    c = Case("layer_self", "layer", "attention residual then feed-forward residual on the normalized sum", 6)
    c.params["heads"] = 2
    x = c.put("x", c.normal(4, 4))
    g1 = c.put("norm1", 1.0 + c.normal(4, scale=0.1))
    g2 = c.put("norm2", 1.0 + c.normal(4, scale=0.1))
    w = attention_weights(c, 4, 0.5)
    f = ff_weights(c, 4, 8, 0.5)
    n = rms_norm(x, g1)
    y = x + multi_head(n, n, w, 2)
    c.put("out", y + feed_forward(rms_norm(y, g2), f, "silu_of_product"))
    yield c

    c = Case("layer_cross", "layer", "cross layer with queries from one stream and keys/values from the other", 7)
    c.params["heads"] = 2
    x_q = c.put("x_q", c.normal(3, 4))
    x_kv = c.put("x_kv", c.normal(5, 4))
    g1 = c.put("norm1", 1.0 + c.normal(4, scale=0.1))
    g2 = c.put("norm2", 1.0 + c.normal(4, scale=0.1))
    w = attention_weights(c, 4, 0.5)
    f = ff_weights(c, 4, 8, 0.5)
    y = x_q + multi_head(rms_norm(x_q, g1), rms_norm(x_kv, g1), w, 2)
    c.put("out", y + feed_forward(rms_norm(y, g2), f, "silu_of_product"))
    yield c


def lora_case():
    c = Case("lora", "lora", "frozen product plus scaled low-rank product, and the merged matrix", 8)
    alpha, rank = 32.0, 2
    c.params["alpha"] = alpha
    c.params["rank"] = rank
    x = c.put("x", c.normal(3, 4))
    w0 = c.put("w0", c.normal(5, 4, scale=0.5))
    a = c.put("a", c.normal(rank, 4, scale=0.1))
    b = c.put("b", c.normal(5, rank, scale=0.1))
    scale = alpha / rank
    c.put("out", x @ w0.T + scale * (x @ a.T) @ b.T)
    c.put("merged", w0 + scale * b @ a)
    return c


def all_cases():
    yield from attention_cases()
    yield multi_head_case()
    yield from feed_forward_cases()
    yield residual_case()
    yield from layer_cases()
    yield lora_case()


def write_all(out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    index = []
    for case in all_cases():
        config = {"case": case.name, "tolerance": TOLERANCE, **case.params}
        (out_dir / (case.name + ".mmfx")).write_bytes(encode_mmfx(config, case.tensors))
        index.append({
            "name": case.name,
            "file": case.name + ".mmfx",
            "covers": case.covers,
            "oracle": case.oracle,
            "inputs": [n for n, _ in case.tensors if n not in ("out", "merged")],
            "outputs": [n for n, _ in case.tensors if n in ("out", "merged")],
            "tolerance": TOLERANCE,
        })
    text = json.dumps({"format": "mmfx", "version": VERSION, "cases": index}, indent=2) + "\n"
    (out_dir / "index.json").write_text(text)
    return sorted(p.name for p in out_dir.iterdir())


def main():
    here = pathlib.Path(__file__).resolve().parent
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=pathlib.Path, default=here / "goldens")
    parser.add_argument("--check", action="store_true", help="regenerate into a temp dir and diff against --out")
    args = parser.parse_args()

    if not args.check:
        for name in write_all(args.out):
            print(name)
        return 0

    with tempfile.TemporaryDirectory() as tmp:
        fresh = write_all(pathlib.Path(tmp))
        committed = sorted(p.name for p in args.out.iterdir()) if args.out.is_dir() else []
        diffs = sorted(set(fresh) ^ set(committed))
        diffs += [n for n in fresh if n in committed and not filecmp.cmp(pathlib.Path(tmp) / n, args.out / n, shallow=False)]
        for name in diffs:
            print("DIFF " + name)
        print("%d files, %d diffs" % (len(fresh), len(diffs)))
        return 1 if diffs else 0


if __name__ == "__main__":
    sys.exit(main())
