"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line in ``RESULTS``; the lines are
printed in pytest's terminal summary (see conftest.py) and when the file is
run directly with ``python tests/test_acceptance.py``.
"""
import json
import math
import time

import numpy as np
import pytest

from hgembed.cli import main
from hgembed.config import TrainConfig
from hgembed.embedder import EmbedderConfig, embed_graph
from hgembed.fixture import DESCRIPTIONS, canonical_fixture
from hgembed.hgnn import EncoderParams, forward_tool
from hgembed.rng import Xoshiro256
from hgembed.store import EmbeddingRecord, VectorStore, initial_records, query_topk
from hgembed.synth import CorpusSpec, gen_corpus, paraphrase_query
from hgembed.toolgraph import (depth_partition, parse_tool_document, rename_nodes, to_document,
                               validate)
from hgembed.train import export_embeddings, gradcheck_suite, train

RESULTS: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_1_gradient_correctness():
    t0 = time.perf_counter()
    res = gradcheck_suite(n_instances=20, seed=7, eps=1e-5, rel_tol=1e-4)
    dt = time.perf_counter() - t0
    record(1, res.ok and dt < 10.0,
           f"20 instances, max rel err {res.max_rel_error:.2e} (tol 1e-4), {dt:.2f}s (< 10s)")


def test_2_zero_encoder_baseline():
    cfg = TrainConfig(propagation="initial")
    zero = EncoderParams.zeros(cfg.d_v, cfg.d_e)
    fx = embed_graph(canonical_fixture(), cfg.embedder(), cfg.d_e)
    fx_trace = forward_tool(zero, fx, cfg)
    worst = abs(fx_trace.total_loss - 4.0)
    ok = len(fx_trace.contributions) == 4
    for g in gen_corpus(CorpusSpec(n_tools=10, seed=2024)):
        g = embed_graph(g, cfg.embedder(), cfg.d_e)
        trace = forward_tool(zero, g, cfg)
        worst = max(worst, abs(trace.total_loss - len(trace.contributions)))
    record(2, ok and worst <= 1e-12,
           f"fixture loss {fx_trace.total_loss!r} (4 groups); max |loss - groups| "
           f"over fixture + 10 synthetic = {worst:.1e} (tol 1e-12)")


@pytest.fixture(scope="module")
def default_corpus():
    cfg = TrainConfig()
    spec = CorpusSpec(seed=42, n_tools=50, depth_range=(2, 3), fanout_range=(2, 4))
    return [embed_graph(g, cfg.embedder(), cfg.d_e) for g in gen_corpus(spec)]


def test_3_training_improvement(default_corpus):
    cfg = TrainConfig()
    t0 = time.perf_counter()
    rep = train(default_corpus, cfg)
    dt = time.perf_counter() - t0
    h = np.array(rep.loss_history)
    finite = bool(np.all(np.isfinite(h)))
    ratio = h[-1] / h[0]
    # trend: every 20-epoch window mean below the previous one
    windows = h.reshape(-1, 20).mean(axis=1)
    trending = bool(np.all(np.diff(windows) < 0))
    record(3, len(h) == 200 and finite and ratio <= 0.5 and trending and dt < 300,
           f"mean loss {h[0]:.3f} -> {h[-1]:.3f} (ratio {ratio:.3f} <= 0.5), "
           f"finite={finite}, window means decreasing={trending}, {dt:.1f}s (< 300s)")


def test_4_pipeline_determinism(tmp_path):
    # full CLI pipeline at reduced size so the suite stays fast
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(CorpusSpec(n_tools=12).to_dict()))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 10}))
    digests = []
    for run in ("a", "b"):
        d = tmp_path / run
        steps = [
            ["gen-corpus", str(spec), "--out", str(d / "corpus")],
            ["embed", str(d / "corpus"), "--config", str(cfg), "--out", str(d / "init.tgvs")],
            ["train", str(d / "corpus"), "--config", str(cfg), "--out", str(d / "train")],
            ["export", str(d / "corpus"), "--config", str(cfg),
             "--params", str(d / "train" / "params.bin"), "--out", str(d / "export.tgvs")],
        ]
        codes = [main(s) for s in steps]
        assert codes == [0, 0, 0, 0]
        files = ["init.tgvs", "train/params.bin", "train/report.json",
                 "train/embeddings.tgvs", "export.tgvs"]
        files += [f"corpus/{p.name}" for p in sorted((d / "corpus").glob("tool_*.json"))]
        digests.append({f: (d / f).read_bytes() for f in files})
    same = digests[0] == digests[1]
    record(4, same, f"{len(digests[0])} artifacts compared bitwise across two runs: "
                    f"{'identical' if same else 'DIFFERENT'}")


def test_5_retrieval_exactness():
    rng = np.random.default_rng(5)
    vecs = rng.normal(size=(1000, 32))
    store = VectorStore(EmbeddingRecord(f"tool{i // 10:03d}", f"n{i % 10}", v)
                        for i, v in enumerate(vecs))
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    mismatches = 0
    for _ in range(100):
        q = rng.normal(size=32)
        k = int(rng.integers(1, 21))
        sims = unit @ (q / np.linalg.norm(q))
        oracle = sorted(range(1000), key=lambda i: (-sims[i], f"tool{i // 10:03d}", i % 10))[:k]
        got = store.search(q, k).hits
        if [(h.tool_name, h.node_id) for h in got] != \
                [(f"tool{i // 10:03d}", f"n{i % 10}") for i in oracle]:
            mismatches += 1
        elif max(abs(h.similarity - sims[i]) for h, i in zip(got, oracle)) > 1e-12:
            mismatches += 1

    fx = embed_graph(canonical_fixture())
    fstore = VectorStore(initial_records(fx, with_queries=False))
    self_ok = 0
    worst = 0.0
    for nid, node in fx.nodes.items():
        top = query_topk(fstore, node.description, 1, filter="initial").hits[0]
        self_ok += top.node_id == nid
        worst = max(worst, abs(top.similarity - 1.0))
    record(5, mismatches == 0 and self_ok == 10 and worst <= 1e-9,
           f"oracle mismatches {mismatches}/100; fixture self-retrieval rank-1 "
           f"{self_ok}/10, max |sim - 1| {worst:.1e} (tol 1e-9)")


def test_6_anonymity_invariance():
    cfg = TrainConfig()
    fx = embed_graph(canonical_fixture(), cfg.embedder(), cfg.d_e)
    ids = sorted(fx.nodes)
    mapping = {old: f"node_{(7 * i + 3) % len(ids)}" for i, old in enumerate(ids)}
    renamed = rename_nodes(fx, mapping)
    p = train([fx], cfg.replace(epochs=3)).params
    changed = 0
    for mode in ("latent", "initial"):
        c = cfg.replace(propagation=mode)
        a, b = forward_tool(p, fx, c), forward_tool(p, renamed, c)
        la = {par: x for par, _, x in a.contributions}
        lb = {par: x for par, _, x in b.contributions}
        changed += a.total_loss != b.total_loss
        changed += sum(la[o] != lb[mapping[o]] for o in la)
    ea = {r.node_id: r.vector for r in export_embeddings([fx], p, cfg)}
    eb = {r.node_id: r.vector for r in export_embeddings([renamed], p, cfg)}
    changed += sum(ea[o].tobytes() != eb[mapping[o]].tobytes() for o in ids)
    record(6, changed == 0, f"renamed all {len(ids)} ids; {changed} loss values or exported "
                            f"vectors differ bitwise")


def test_7_fixture_integrity():
    g = canonical_fixture()
    back = parse_tool_document(to_document(g))
    levels = depth_partition(back)
    ok = (validate(back).ok and len(back.nodes) == 10 and len(levels) == 3
          and back.root_id == "A1" and to_document(back) == to_document(g)
          and all(back.nodes[k].description == v for k, v in DESCRIPTIONS.items()))
    record(7, ok, f"round trip valid={validate(back).ok}, nodes={len(back.nodes)}, "
                  f"levels={len(levels)}, root={back.root_id}, descriptions verbatim")


def test_8_paraphrase_retrieval(default_corpus):
    cfg = EmbedderConfig()
    store = VectorStore(r for g in default_corpus for r in initial_records(g, False))
    leaves = [(g, nid) for g in default_corpus for nid in sorted(g.nodes)
              if not any(e.to_id == nid for e in g.edges if e.kind == "child_to_parent")]
    rng = Xoshiro256.stream(42, 8)
    hits = 0
    for trial in range(200):
        g, nid = leaves[rng.below(len(leaves))]
        q = paraphrase_query(g.nodes[nid], trial, 0.7)
        top = query_topk(store, q, 3, cfg, filter="initial").hits
        hits += any((h.tool_name, h.node_id) == (g.name, nid) for h in top)
    record(8, hits >= 180, f"source leaf in top-3 for {hits}/200 trials (need >= 180)")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
