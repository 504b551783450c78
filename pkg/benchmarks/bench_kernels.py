#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Times each hot kernel on training-shaped arrays, then a full training
step through the model with each backend active. Run from the repo root:

    python benchmarks/bench_kernels.py [--steps 30] [--dtype f32]
"""

import argparse
import os
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np

import kbgen.kernels as kernels
from kbgen.kernels import pyops

try:
    from kbgen.kernels import _ops as native
except ImportError:
    native = None


def timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000


def kernel_benchmarks(dtype, repeats):
    rng = np.random.default_rng(0)
    b, t, d, h, f, v = 64, 34, 64, 4, 256, 200
    x = rng.normal(size=(b, t, d)).astype(dtype)
    xf = rng.normal(size=(b, t, f)).astype(dtype)
    scores = rng.normal(size=(b, h, t, t)).astype(dtype)
    gain = rng.normal(size=d).astype(dtype)
    bias = rng.normal(size=d).astype(dtype)
    rows = rng.normal(size=(400, v)).astype(dtype)
    targets = rng.integers(0, v, size=400)
    grad = rng.normal(size=(b, t, d)).astype(dtype)

    y_soft = pyops.softmax_fwd(scores)
    ln = pyops.layernorm_fwd(x, gain, bias, 1e-5)

    cases = {
        "gelu_fwd": lambda impl: impl.gelu_fwd(xf),
        "gelu_bwd": lambda impl: impl.gelu_bwd(xf, xf),
        "softmax_fwd": lambda impl: impl.softmax_fwd(scores),
        "softmax_bwd": lambda impl: impl.softmax_bwd(y_soft, scores),
        "layernorm_fwd": lambda impl: impl.layernorm_fwd(x, gain, bias, 1e-5),
        "layernorm_bwd": lambda impl: impl.layernorm_bwd(x, gain, ln[1], ln[2], grad),
        "cross_entropy_fwd": lambda impl: impl.cross_entropy_fwd(rows, targets),
        "cross_entropy_bwd": lambda impl: impl.cross_entropy_bwd(rows, targets, 0.01),
    }

    def adam_case(impl):
        p = x.copy()
        m = np.zeros_like(p)
        vv = np.zeros_like(p)
        impl.adam_update(p, grad, m, vv, 1, 1e-3, 0.9, 0.999, 1e-8, 0.01)

    cases["adam_update"] = adam_case

    print(f"\nkernel microbenchmarks ({np.dtype(dtype).name}, ms per call)")
    print(f"{'kernel':<20} {'python':>9} {'native':>9} {'speedup':>9}")
    for name, fn in cases.items():
        t_py = timeit(lambda: fn(pyops), repeats)
        if native is not None:
            t_nat = timeit(lambda: fn(native), repeats)
            print(f"{name:<20} {t_py:9.3f} {t_nat:9.3f} {t_py / t_nat:8.2f}x")
        else:
            print(f"{name:<20} {t_py:9.3f} {'n/a':>9} {'n/a':>9}")


def train_step_benchmark(steps):
    from kbgen import corpus, synthetic
    from kbgen import model as M
    from kbgen import training as T
    from kbgen import vocab as V
    from kbgen.autodiff import Tape, backward, zero_grads

    kb = synthetic.generate_mini_kb(0)
    schemas = corpus.atomic_schemas()
    voc = V.build_vocab(kb.split.train, schemas, extra_texts=kb.text_corpus)
    layout = V.default_layout("symbol")
    ids, mask = V.encode_tuples(voc, kb.split.train[:64], layout, schemas)
    cfg = M.ModelConfig(vocab_size=len(voc), max_seq_len=layout.total)

    backends = ["python"] + (["native"] if native is not None else [])
    print(f"\nfull training step, batch 64 x seq {layout.total} (ms per step)")
    for backend in backends:
        kernels.set_backend(backend)
        params = M.init_parameters(cfg, voc.n_specials, 0)
        state = T.OptimizerState(params)
        tcfg = T.TrainConfig()

        def step(i):
            rng = np.random.default_rng([0, 0xD0, i])
            with Tape() as tape:
                logits = M.forward(params, cfg, ids, rng=rng, training=True)
                loss = T.tuple_loss(logits, ids, mask)
            backward(tape, loss)
            T.clip_gradients(params, 1.0)
            T.adam_step(params, state, 1e-3, tcfg)
            zero_grads(params.values())

        for i in range(3):
            step(i)
        t0 = time.perf_counter()
        for i in range(steps):
            step(i + 3)
        ms = (time.perf_counter() - t0) / steps * 1000
        print(f"{backend:<10} {ms:8.1f}")
    kernels.set_backend(kernels.backend_name())


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    args = ap.parse_args()
    if native is None:
        print("note: compiled backend not available; showing numpy fallback only")
    dtype = np.float32 if args.dtype == "f32" else np.float64
    kernel_benchmarks(dtype, args.repeats)
    train_step_benchmark(args.steps)


if __name__ == "__main__":
    main()
