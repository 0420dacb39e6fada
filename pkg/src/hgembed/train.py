"""Gradients, finite-difference checking and batched SGD over a tool corpus."""
from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import TrainConfig
from .embedder import EmbedderConfig, encode_layer
from .hgnn import (EncoderParams, ToolPlan, check_finite, compile_plan, plan_latents,
                   run_backward, run_forward, trace_from_run, ForwardTrace)
from .rng import Xoshiro256
from .store import EmbeddingRecord, description_digest
from .toolgraph import CHILD_TO_PARENT, SIBLING, ToolEdge, ToolGraph, ToolNode

PARAMS_MAGIC = b"HGNN1"
SHUFFLE_STREAM = 1


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"DIVERGED: mean loss became non-finite at epoch {epoch}")


def init_params(cfg: TrainConfig) -> EncoderParams:
    """Uniform[-init_scale, init_scale] fill, W then U then b, row-major."""
    rng = Xoshiro256(cfg.seed)
    dh, din = cfg.d_h, cfg.d_in
    s = cfg.init_scale
    W = rng.uniform_array(dh * dh, -s, s).reshape(dh, dh)
    U = rng.uniform_array(dh * din, -s, s).reshape(dh, din)
    b = rng.uniform_array(dh, -s, s)
    return EncoderParams(W, U, b)


def compile_corpus(corpus: Sequence[ToolGraph], cfg: TrainConfig) -> list[ToolPlan]:
    return [compile_plan(g, cfg.T, cfg.propagation, cfg.d_e) for g in corpus]


def _plans(corpus, cfg) -> list[ToolPlan]:
    if corpus and isinstance(corpus[0], ToolPlan):
        return list(corpus)
    return compile_corpus(corpus, cfg)


def _reduction_order(plans: Sequence[ToolPlan]) -> list[int]:
    return sorted(range(len(plans)), key=lambda i: (plans[i].name, i))


def corpus_loss(p: EncoderParams, corpus, cfg: TrainConfig, backend=None) -> float:
    plans = _plans(corpus, cfg)
    total = 0.0
    for i in _reduction_order(plans):
        run = run_forward(p, plans[i], backend)
        check_finite(plans[i], run)
        total += float(sum(run.losses))
    return total


def gradient(p: EncoderParams, corpus, cfg: TrainConfig, backend=None
             ) -> tuple[EncoderParams, float]:
    """Exact gradient of the summed group losses over ``corpus``.

    Per-tool gradients are formed separately and reduced in (name, position)
    order, so a corpus listing the same tool twice gets exactly twice the
    gradient.
    """
    plans = _plans(corpus, cfg)
    grad = p.zeros_like()
    total = 0.0
    for i in _reduction_order(plans):
        run = run_forward(p, plans[i], backend)
        check_finite(plans[i], run)
        g = run_backward(p, plans[i], run, backend)
        grad.W += g.W
        grad.U += g.U
        grad.b += g.b
        total += float(sum(run.losses))
    return grad, total


def finite_diff_gradient(p: EncoderParams, corpus, cfg: TrainConfig, eps: float = 1e-5,
                         backend=None) -> EncoderParams:
    """Central differences, one scalar parameter at a time."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    plans = _plans(corpus, cfg)
    theta = p.to_vector()
    out = np.empty_like(theta)
    for k in range(theta.size):
        old = theta[k]
        theta[k] = old + eps
        up = corpus_loss(EncoderParams.from_vector(theta, p.d_h, p.d_in), plans, cfg, backend)
        theta[k] = old - eps
        down = corpus_loss(EncoderParams.from_vector(theta, p.d_h, p.d_in), plans, cfg, backend)
        theta[k] = old
        out[k] = (up - down) / (2 * eps)
    return EncoderParams.from_vector(out, p.d_h, p.d_in)


def global_norm(g: EncoderParams) -> float:
    return math.sqrt(float(np.sum(g.W * g.W)) + float(np.sum(g.U * g.U))
                     + float(np.sum(g.b * g.b)))


def clip_gradient(g: EncoderParams, clip_norm: float) -> float:
    """Rescale ``g`` in place to norm ``clip_norm`` if larger; returns the pre-clip norm."""
    norm = global_norm(g)
    if norm > clip_norm:
        scale = clip_norm / norm
        g.W *= scale
        g.U *= scale
        g.b *= scale
    return norm


@dataclass
class TrainReport:
    config: TrainConfig
    loss_history: list[float]
    params: EncoderParams
    wall_clock_seconds: float = 0.0
    n_tools: int = 0

    def to_json(self) -> str:
        # timing is left out so the file is reproducible byte for byte
        doc = {
            "config": self.config.to_dict(),
            "n_tools": self.n_tools,
            "epochs": len(self.loss_history),
            "loss_history": self.loss_history,
        }
        return json.dumps(doc, indent=2) + "\n"


def train(corpus: Sequence[ToolGraph], cfg: TrainConfig, params: Optional[EncoderParams] = None,
          backend=None, on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainReport:
    if not corpus:
        raise ValueError("corpus is empty")
    start = time.perf_counter()
    p = (params or init_params(cfg)).copy()
    plans = _plans(list(corpus), cfg)
    n = len(plans)
    shuffle_rng = Xoshiro256.stream(cfg.seed, SHUFFLE_STREAM)
    order = list(range(n))
    history: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng.shuffle(order)
        for lo in range(0, n, cfg.batch_size):
            batch = [plans[i] for i in order[lo:lo + cfg.batch_size]]
            try:
                g, _ = gradient(p, batch, cfg, backend)
            except FloatingPointError:
                raise TrainingDiverged(epoch) from None
            clip_gradient(g, cfg.clip_norm)
            p.W -= cfg.learning_rate * g.W
            p.U -= cfg.learning_rate * g.U
            p.b -= cfg.learning_rate * g.b
        try:
            mean = corpus_loss(p, plans, cfg, backend) / n
        except FloatingPointError:
            raise TrainingDiverged(epoch) from None
        if not math.isfinite(mean):
            raise TrainingDiverged(epoch)
        history.append(mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
    return TrainReport(cfg, history, p, time.perf_counter() - start, n)


def export_embeddings(corpus: Sequence[ToolGraph], p: EncoderParams, cfg: TrainConfig,
                      backend=None) -> list[EmbeddingRecord]:
    """One ``structural`` record per node, from a latent-mode sweep."""
    lat_cfg = cfg.replace(propagation="latent")
    records = []
    for g in corpus:
        plan = compile_plan(g, lat_cfg.T, "latent", p.d_e)
        run = run_forward(p, plan, backend)
        check_finite(plan, run)
        latents = plan_latents(plan, run)
        for nid in plan.node_ids:
            records.append(EmbeddingRecord(g.name, nid, latents[nid], "structural",
                                           description_digest(g.nodes[nid].description)))
    return records


def trace_corpus(corpus: Sequence[ToolGraph], p: EncoderParams, cfg: TrainConfig,
                 backend=None) -> list[tuple[str, ForwardTrace]]:
    out = []
    for g in corpus:
        plan = compile_plan(g, cfg.T, cfg.propagation, p.d_e)
        run = run_forward(p, plan, backend)
        check_finite(plan, run)
        out.append((g.name, trace_from_run(plan, run)))
    return out


# ---------------------------------------------------------------------------
# parameter files


def params_to_bytes(p: EncoderParams) -> bytes:
    head = PARAMS_MAGIC + struct.pack("<II", p.d_h, p.d_in)
    body = b"".join(np.asarray(a, dtype="<f8").tobytes() for a in (p.W, p.U, p.b))
    return head + body


def params_from_bytes(data: bytes) -> EncoderParams:
    if data[:5] != PARAMS_MAGIC:
        raise ValueError("bad magic: not an HGNN1 parameter file")
    if len(data) < 13:
        raise ValueError("truncated header")
    dh, din = struct.unpack("<II", data[5:13])
    n = dh * dh + dh * din + dh
    if len(data) != 13 + 8 * n:
        raise ValueError(f"expected {13 + 8 * n} bytes for d_h={dh}, d_in={din}, "
                         f"got {len(data)}")
    vec = np.frombuffer(data, dtype="<f8", offset=13).astype(np.float64)
    return EncoderParams.from_vector(vec, dh, din)


def save_params(p: EncoderParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(p))


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# gradient checking on small random instances


def random_instance(rng: Xoshiro256, n_nodes: int, d_v: int = 4, d_e: int = 2,
                    sibling_p: float = 0.5, name: str = "inst") -> ToolGraph:
    """Random layered tree (with occasional second parents) carrying random
    unit-norm features."""
    depth = {"n0": 0}
    parent_of: dict[str, list[str]] = {}
    ids = ["n0"]
    for k in range(1, n_nodes):
        nid = f"n{k}"
        par = ids[rng.below(len(ids))]
        depth[nid] = depth[par] + 1
        parent_of[nid] = [par]
        ids.append(nid)
    # extra parent one level up, when one exists
    for nid in ids[1:]:
        others = [x for x in ids if depth[x] == depth[nid] - 1 and x not in parent_of[nid]]
        if others and rng.random() < 0.25:
            parent_of[nid].append(others[rng.below(len(others))])
    edges = [ToolEdge(c, p, CHILD_TO_PARENT) for c in ids[1:] for p in parent_of[c]]
    for a in ids[1:]:
        for b in ids[1:]:
            if a < b and depth[a] == depth[b] and set(parent_of[a]) & set(parent_of[b]):
                if rng.random() < sibling_p:
                    edges.append(ToolEdge(a, b, SIBLING))
    nodes = {}
    for nid in ids:
        v = np.array([rng.uniform(-1.0, 1.0) for _ in range(d_v)])
        v /= np.linalg.norm(v)
        v.setflags(write=False)
        nodes[nid] = ToolNode(nid, f"node {nid}", depth[nid], (), v)
    max_d = max(depth.values())
    edges = [ToolEdge(e.from_id, e.to_id, e.kind, encode_layer(max_d - depth[e.to_id], d_e))
             for e in edges]
    return ToolGraph(name, nodes, tuple(edges), "n0")


@dataclass
class GradcheckResult:
    max_rel_error: float
    instances: int
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def compare_gradients(a: np.ndarray, n: np.ndarray, rel_tol: float = 1e-4,
                      abs_floor: float = 1e-8) -> tuple[float, int]:
    """Max relative error over entries whose magnitude reaches ``abs_floor``;
    smaller entries must agree absolutely within ``abs_floor``.  Returns
    ``(max_rel, n_bad)``."""
    scale = np.maximum(np.abs(a), np.abs(n))
    big = scale >= abs_floor
    rel = np.abs(a - n)[big] / scale[big]
    bad = int(np.sum(rel >= rel_tol)) + int(np.sum(np.abs(a - n)[~big] >= abs_floor))
    return (float(rel.max()) if rel.size else 0.0), bad


def gradcheck_suite(n_instances: int = 20, seed: int = 7, eps: float = 1e-5,
                    rel_tol: float = 1e-4, backend=None) -> GradcheckResult:
    """Analytic vs central-difference gradients on random small tools
    (d_v=4, d_e=2, T in {1, 2}, 3-8 nodes, both propagation modes)."""
    rng = Xoshiro256.stream(seed, 99)
    worst = 0.0
    failures = []
    for k in range(n_instances):
        n_nodes = rng.randint(3, 8)
        g = random_instance(rng, n_nodes, name=f"inst{k}")
        cfg = TrainConfig(d_v=4, d_e=2, T=1 + k % 2, seed=seed + k, init_scale=0.5,
                          propagation="latent" if k % 4 < 2 else "initial")
        p = init_params(cfg)
        ana, _ = gradient(p, [g], cfg, backend)
        num = finite_diff_gradient(p, [g], cfg, eps, backend)
        rel, bad = compare_gradients(ana.to_vector(), num.to_vector(), rel_tol)
        worst = max(worst, rel)
        if bad:
            failures.append(f"instance {k}: {bad} entries out of tolerance (max rel {rel:.3g})")
    return GradcheckResult(worst, n_instances, failures)
