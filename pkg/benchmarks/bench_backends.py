"""Time the numba and numpy kernels on one full-corpus gradient.

    python benchmarks/bench_backends.py [--tools 50] [--repeat 5]

Reports the best wall time per backend (after a warm-up call that absorbs
JIT compilation) and the largest difference between the two gradients.
"""
import argparse
import time

import numpy as np

from hgembed.config import TrainConfig
from hgembed.embedder import embed_graph
from hgembed.kernels import get_backend
from hgembed.synth import CorpusSpec, gen_corpus
from hgembed.train import compile_corpus, corpus_loss, gradient, init_params


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tools", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dim", type=int, default=256)
    args = ap.parse_args()

    cfg = TrainConfig(d_v=args.dim)
    corpus = [embed_graph(g, cfg.embedder(), cfg.d_e)
              for g in gen_corpus(CorpusSpec(n_tools=args.tools))]
    plans = compile_corpus(corpus, cfg)
    p = init_params(cfg)
    n_cells = sum(pl.cells.shape[0] for pl in plans)
    print(f"{len(plans)} tools, {sum(len(pl.node_ids) for pl in plans)} nodes, "
          f"{n_cells} cells, d_v={cfg.d_v}")

    grads = {}
    for name in ("numba", "numpy"):
        be = get_backend(name)
        t0 = time.perf_counter()
        grads[name] = gradient(p, plans, cfg, be)[0].to_vector()
        warm = time.perf_counter() - t0
        fwd = best_of(lambda: corpus_loss(p, plans, cfg, be), args.repeat)
        fwd_bwd = best_of(lambda: gradient(p, plans, cfg, be), args.repeat)
        print(f"{name:6s} first call {warm:7.3f}s  forward {fwd * 1e3:8.1f} ms  "
              f"forward+backward {fwd_bwd * 1e3:8.1f} ms")
    diff = np.max(np.abs(grads["numba"] - grads["numpy"]))
    print(f"max |grad_numba - grad_numpy| = {diff:.3e}")


if __name__ == "__main__":
    main()
