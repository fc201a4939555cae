#!/usr/bin/env python3
"""Regenerates the static fixtures under fixtures/.

The latency database is synthetic: a simple roofline (max of compute time at
a nominal peak and memory time at a nominal bandwidth, plus a fixed launch
cost) evaluated for every operator key the 32-layer transformer needs across
the 8-GPU sweep. It is only meant to look plausible, not to match hardware.

Measurement fixtures depend on predictions and are written by
`cargo run -p precast --example synth_measurements`.
"""

import json
import os

HERE = os.path.dirname(os.path.abspath(__file__))

BATCH = 8
SEQ = 2048
HIDDEN = 4096
HEADS = 32
HEAD_DIM = HIDDEN // HEADS
FFN = 14336
LAYERS = 32
GPUS = 8
LINK_BW = 4.5e11

PEAK_FLOP_PER_US = {"FP16": 4.0e8, "FP32": 6.0e7}
MEM_BYTES_PER_US = 3.0e6
LAUNCH_US = 5.0
BYTES = {"FP16": 2, "FP32": 4}


def node(nid, kind, layer, inputs, weights=()):
    return {
        "id": nid,
        "kind": kind,
        "layer_index": layer,
        "inputs": [{"shape": list(s)} for s in inputs],
        "weights": list(weights),
    }


def weight(name, shape, slice_dim=None, trainable=True):
    w = {"name": name, "shape": list(shape)}
    if slice_dim is not None:
        w["slice_dim"] = slice_dim
    w["trainable"] = trainable
    return w


def transformer_layer(i, b=BATCH):
    act = (b, SEQ, HIDDEN)
    heads = (b, HEADS, SEQ, HEAD_DIM)
    scores = (b, HEADS, SEQ, SEQ)
    p = f"l{i}"
    return [
        node(f"{p}.ln1.var", "reduction", i, [act]),
        node(f"{p}.ln1", "norm", i, [act], [weight(f"{p}.ln1.w", (HIDDEN,))]),
        node(f"{p}.qkv", "matmul", i, [act], [weight(f"{p}.qkv.w", (HIDDEN, 3 * HIDDEN), 1)]),
        node(f"{p}.scores", "matmul", i, [heads, (b, HEADS, HEAD_DIM, SEQ)]),
        node(f"{p}.softmax", "softmax", i, [scores]),
        node(f"{p}.context", "matmul", i, [scores, heads]),
        node(f"{p}.o_proj", "matmul", i, [act], [weight(f"{p}.o_proj.w", (HIDDEN, HIDDEN), 0)]),
        node(f"{p}.resid1", "elementwise", i, [act, act]),
        node(f"{p}.ln2", "norm", i, [act], [weight(f"{p}.ln2.w", (HIDDEN,))]),
        node(f"{p}.up", "matmul", i, [act], [weight(f"{p}.up.w", (HIDDEN, FFN), 1)]),
        node(f"{p}.act", "elementwise", i, [(b, SEQ, FFN)]),
        node(f"{p}.down", "matmul", i, [(b, SEQ, FFN)], [weight(f"{p}.down.w", (FFN, HIDDEN), 0)]),
        node(f"{p}.resid2", "elementwise", i, [act, act]),
    ]


def graph(name, layers, batch=BATCH):
    return {
        "format_version": "1",
        "model_name": name,
        "global_batch_size": batch,
        "layers": layers,
    }


def prod(xs):
    n = 1
    for x in xs:
        n *= x
    return n


def op_keys(op, per_gpu_batch, tp):
    """Latency-key shapes of one operator on one GPU."""
    shapes = []
    for inp in op["inputs"]:
        s = list(inp["shape"])
        s[0] = per_gpu_batch
        shapes.append(s)
    for w in op["weights"]:
        s = list(w["shape"])
        if tp > 1 and w["trainable"] and "slice_dim" in w:
            assert s[w["slice_dim"]] % tp == 0
            s[w["slice_dim"]] //= tp
        shapes.append(s)
    return shapes


def synthetic_latency(kind, shapes, precision):
    if kind == "matmul":
        if len(shapes) == 2 and len(shapes[1]) == 2:
            rows = prod(shapes[0][:-1])
            flops = 2 * rows * shapes[1][0] * shapes[1][1]
        else:
            a, b = shapes
            flops = 2 * prod(a) * b[-1]
    else:
        flops = 4 * sum(prod(s) for s in shapes)
    traffic = sum(prod(s) for s in shapes) * BYTES[precision]
    fwd = LAUNCH_US + max(flops / PEAK_FLOP_PER_US[precision], traffic / MEM_BYTES_PER_US)
    fwd = round(fwd, 3)
    return fwd, round(2.0 * fwd, 3)


def write_json(rel, obj):
    path = os.path.join(HERE, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def write_db(rel, device, records):
    path = os.path.join(HERE, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w") as f:
        f.write(json.dumps({"format_version": "1", "device": device}) + "\n")
        for r in records:
            f.write(json.dumps(r, separators=(",", ":")) + "\n")


def config(d, t, p, precision, batch=BATCH, bw=LINK_BW):
    return {
        "dp_degree": d,
        "tp_degree": t,
        "pp_degree": p,
        "precision": precision,
        "batch_size": batch,
        "link_bandwidth": bw,
        "micro_batches": 1,
    }


def main():
    # Single matmul: 100 us forward, 200 us backward at FP32.
    single = graph(
        "single-matmul",
        [[node("mm0", "matmul", 0, [(BATCH, 1024)], [weight("mm0.w", (1024, 1024))])]],
    )
    write_json("graphs/single_matmul.json", single)
    write_db(
        "db/single_matmul.jsonl",
        "synthetic",
        [{"kind": "matmul", "shapes": [[BATCH, 1024], [1024, 1024]], "precision": "FP32", "fwd_us": 100.0, "bwd_us": 200.0}],
    )
    write_json("configs/single_gpu_fp32.json", config(1, 1, 1, "FP32"))
    write_json("configs/single_gpu_fp16.json", config(1, 1, 1, "FP16"))

    layers = [transformer_layer(i) for i in range(LAYERS)]
    write_json("graphs/transformer32.json", graph("transformer-32l", layers))

    triples = [
        (d, t, GPUS // d // t)
        for d in (1, 2, 4, 8)
        for t in (1, 2, 4, 8)
        if GPUS % (d * t) == 0
    ]
    sweep = [config(d, t, p, prec) for (d, t, p) in triples for prec in ("FP32", "FP16", "MIXED")]
    write_json("configs/sweep8.json", sweep)
    write_json("configs/dp2_tp2_pp2_mixed.json", config(2, 2, 2, "MIXED"))
    write_json("configs/pp4_fp32.json", config(1, 2, 4, "FP32"))

    seen = {}
    for d in (1, 2, 4, 8):
        for t in (1, 2, 4, 8):
            for prec in ("FP32", "FP16"):
                for op in layers[0]:
                    shapes = op_keys(op, BATCH // d, t)
                    key = json.dumps([op["kind"], shapes, prec])
                    if key in seen:
                        continue
                    fwd, bwd = synthetic_latency(op["kind"], shapes, prec)
                    seen[key] = {"kind": op["kind"], "shapes": shapes, "precision": prec, "fwd_us": fwd, "bwd_us": bwd}
    write_db("db/transformer32_synthetic.jsonl", "synthetic-roofline", list(seen.values()))

    write_json(
        "rules/builtin.json",
        {"format_version": "1", "low": ["matmul", "conv"], "high": ["softmax", "reduction", "norm"], "default": "FP32"},
    )
    # A cast table as an exporter would record it, with the per-op log it was
    # derived from.
    write_json(
        "rules/recorded.json",
        {"format_version": "1", "low": ["matmul", "conv", "embedding"], "high": ["softmax", "reduction", "norm"], "default": "FP32"},
    )
    log = []
    for op in layers[0]:
        prec = {"matmul": "FP16", "conv": "FP16"}.get(op["kind"], "FP32")
        log.append({"op": op["id"], "kind": op["kind"], "precision": prec})
    log.append({"op": "tok_embed", "kind": "embedding", "precision": "FP16"})
    write_json("rules/recorded_cast_log.json", log)


if __name__ == "__main__":
    main()
