"""Hierarchical message passing with a shared vanilla-RNN encoder.

Within each parent's child group, every child updates for ``T`` iterations
from its sibling neighbours plus an implicit self-edge:

    h_i^(t) = sum_j tanh(W h_j^(t-1) + U [v_i ; e_ij ; v_j] + b)

The parent state is the same sum taken over all children (with the parent's
layer encoding on the edges), and each group contributes ``||v_p - h_p||_2``
to the loss.  Groups are processed bottom-up.

Two evaluation routes exist.  The op-level functions (``rnn_cell``,
``aggregate``, ``forward_group``, ``forward_tool_reference``) follow the
equations literally over dicts of vectors.  ``forward_tool`` compiles the
graph into a flat :class:`ToolPlan` and runs it through the selected kernel
backend; training and export use that route.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from . import kernels
from .config import TrainConfig
from .embedder import encode_layer
from .toolgraph import (CHILD_TO_PARENT, SIBLING, ToolGraph, children_of,
                        depth_partition, require_valid)


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, tool: str = "", group: str = ""):
        self.tool = tool
        self.group = group
        super().__init__(message)


@dataclass
class EncoderParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        dh = self.b.shape[0]
        if self.W.shape != (dh, dh) or self.U.ndim != 2 or self.U.shape[0] != dh:
            raise ValueError(f"inconsistent shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")
        if self.U.shape[1] <= 2 * dh:
            raise ValueError("U must have 2*d_h + d_e columns with d_e >= 1")

    @property
    def d_h(self) -> int:
        return self.b.shape[0]

    @property
    def d_in(self) -> int:
        return self.U.shape[1]

    @property
    def d_e(self) -> int:
        return self.d_in - 2 * self.d_h

    @property
    def size(self) -> int:
        return self.W.size + self.U.size + self.b.size

    @classmethod
    def zeros(cls, d_v: int, d_e: int) -> "EncoderParams":
        return cls(np.zeros((d_v, d_v)), np.zeros((d_v, 2 * d_v + d_e)), np.zeros(d_v))

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(np.zeros_like(self.W), np.zeros_like(self.U), np.zeros_like(self.b))

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.W.copy(), self.U.copy(), self.b.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.U.ravel(), self.b])

    @classmethod
    def from_vector(cls, vec: np.ndarray, d_h: int, d_in: int) -> "EncoderParams":
        nw, nu = d_h * d_h, d_h * d_in
        return cls(vec[:nw].reshape(d_h, d_h), vec[nw:nw + nu].reshape(d_h, d_in),
                   vec[nw + nu:nw + nu + d_h])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.U))
                    and np.all(np.isfinite(self.b)))

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return (np.array_equal(self.W, other.W) and np.array_equal(self.U, other.U)
                and np.array_equal(self.b, other.b))


class HiddenState(NamedTuple):
    node_id: str
    t: int
    h: np.ndarray


# ---------------------------------------------------------------------------
# op-level reference


def message_input(v_i: np.ndarray, e_ij: np.ndarray, v_j: np.ndarray) -> np.ndarray:
    if len(v_i) != len(v_j):
        raise ValueError(f"node feature lengths differ: {len(v_i)} vs {len(v_j)}")
    return np.concatenate([v_i, e_ij, v_j])


def rnn_cell(p: EncoderParams, h_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    if h_prev.shape != (p.d_h,) or x.shape != (p.d_in,):
        raise ValueError(f"shape mismatch: h{h_prev.shape} x{x.shape} for "
                         f"d_h={p.d_h}, d_in={p.d_in}")
    if not (np.all(np.isfinite(h_prev)) and np.all(np.isfinite(x))):
        raise NonFiniteError("non-finite input to rnn_cell")
    return np.tanh(p.W @ h_prev + p.U @ x + p.b)


def aggregate(p: EncoderParams, i: str, neighbors: Sequence[tuple[str, np.ndarray]],
              states: Mapping[str, HiddenState], features: Mapping[str, np.ndarray]
              ) -> HiddenState:
    """Sum of ``rnn_cell`` messages from ``neighbors`` (pairs ``(j, e_ij)``) into ``i``.

    Neighbours are summed in the order given.  An empty neighbourhood gives
    the zero vector.
    """
    h = np.zeros(p.d_h)
    t = None
    for j, e_ij in neighbors:
        if j not in states:
            raise KeyError(f"missing state for neighbour {j!r} of {i!r}")
        st = states[j]
        t = st.t if t is None else t
        h = h + rnn_cell(p, st.h, message_input(features[i], e_ij, features[j]))
    if t is None:
        t = states[i].t if i in states else 0
    return HiddenState(i, t + 1, h)


def _sibling_map(g: ToolGraph, group: Sequence[str]) -> dict[str, set[str]]:
    members = set(group)
    nbrs: dict[str, set[str]] = {c: set() for c in group}
    for e in g.edges:
        if e.kind == SIBLING and e.from_id in members and e.to_id in members:
            nbrs[e.from_id].add(e.to_id)
            nbrs[e.to_id].add(e.from_id)
    return nbrs


def forward_group(p: EncoderParams, g: ToolGraph, parent: str, T: int,
                  features: Mapping[str, np.ndarray], target: Optional[np.ndarray] = None
                  ) -> tuple[HiddenState, float]:
    """One child group: ``T`` sibling iterations, then the parent aggregate.

    ``features`` holds the current feature of every node involved.  The
    regression target defaults to the parent's installed initial feature.
    """
    kids = children_of(g, parent)
    if not kids:
        raise ValueError(f"node {parent!r} has no children")
    d_e = p.d_e
    nbrs = _sibling_map(g, kids)
    states = {c: HiddenState(c, 0, np.asarray(features[c], dtype=np.float64)) for c in kids}
    for _ in range(T):
        new = {}
        for i in kids:
            e_i = encode_layer(g.layer_of(i), d_e)
            hood = [(j, e_i) for j in sorted(nbrs[i] | {i})]
            new[i] = aggregate(p, i, hood, states, features)
        states = new
    e_p = encode_layer(g.layer_of(parent), d_e)
    h_p = aggregate(p, parent, [(c, e_p) for c in kids], states, features)
    if target is None:
        target = g.nodes[parent].initial_feature
    return h_p, float(np.linalg.norm(np.asarray(target) - h_p.h))


def forward_tool_reference(p: EncoderParams, g: ToolGraph, T: int, propagation: str = "latent"
                           ) -> tuple[float, list[tuple[str, float]]]:
    """Bottom-up sweep with ``forward_group``; ids give the summation order."""
    require_valid(g)
    features = {nid: n.initial_feature for nid, n in g.nodes.items()}
    contributions = []
    for level in depth_partition(g)[1:]:
        updates = {}
        for parent in level:
            if not children_of(g, parent):
                continue
            h_p, loss = forward_group(p, g, parent, T, features)
            contributions.append((parent, loss))
            updates[parent] = h_p.h
        if propagation == "latent":
            features.update(updates)
    return sum(c for _, c in contributions), contributions


# ---------------------------------------------------------------------------
# canonical ordering


def canonical_keys(g: ToolGraph) -> dict[str, bytes]:
    """Id-free colour of every node (colour refinement over typed edges).

    Start from the initial feature bytes and depth, then repeatedly hash in
    the sorted colours of parents, children and siblings until the number of
    colour classes stops growing.  Nodes that share a key are interchangeable
    in every sum the plan performs, so ordering by key makes results
    invariant to how nodes are named.
    """
    par: dict[str, list[str]] = {n: [] for n in g.nodes}
    chi: dict[str, list[str]] = {n: [] for n in g.nodes}
    sib: dict[str, list[str]] = {n: [] for n in g.nodes}
    for e in g.edges:
        if e.kind == CHILD_TO_PARENT:
            par[e.from_id].append(e.to_id)
            chi[e.to_id].append(e.from_id)
        else:
            sib[e.from_id].append(e.to_id)
            sib[e.to_id].append(e.from_id)

    col = {}
    for nid, node in g.nodes.items():
        f = node.initial_feature
        fb = b"" if f is None else np.asarray(f, dtype="<f8").tobytes()
        col[nid] = hashlib.sha256(b"node" + fb + node.depth.to_bytes(4, "little")).digest()
    n_classes = len(set(col.values()))
    for _ in range(len(g.nodes)):
        new = {}
        for nid in g.nodes:
            h = hashlib.sha256(col[nid])
            for tag, adj in ((b"P", par), (b"C", chi), (b"S", sib)):
                h.update(tag)
                for c in sorted(col[x] for x in adj[nid]):
                    h.update(c)
            new[nid] = h.digest()
        col = new
        k = len(set(col.values()))
        if k == n_classes:
            break
        n_classes = k
    return col


# ---------------------------------------------------------------------------
# compiled plan


class GroupInfo(NamedTuple):
    parent: str
    children: tuple[str, ...]


@dataclass
class ToolPlan:
    """Flat evaluation schedule for one tool.

    Rows ``0..n_init-1`` of the row buffer are the initial node features in
    sorted-id order; later rows are computed states.  Each cell adds one
    ``tanh`` message into its target row.  Cells are grouped into stages
    whose sources are all produced by earlier stages.
    """
    name: str
    node_ids: list[str]
    n_init: int
    n_rows: int
    init_rows: np.ndarray
    E: np.ndarray
    cells: np.ndarray
    stage_ptr: np.ndarray
    loss_pairs: np.ndarray
    groups: list[GroupInfo]
    final_rows: dict[str, list[int]] = field(default_factory=dict)
    T: int = 2
    propagation: str = "latent"

    @property
    def d_v(self) -> int:
        return self.init_rows.shape[1]


def compile_plan(g: ToolGraph, T: int, propagation: str, d_e: int) -> ToolPlan:
    require_valid(g)
    if propagation not in ("latent", "initial"):
        raise ValueError(f"unknown propagation mode {propagation!r}")
    ids = sorted(g.nodes)
    if any(g.nodes[n].initial_feature is None for n in ids):
        raise ValueError(f"tool {g.name!r}: features are not installed")
    index = {n: i for i, n in enumerate(ids)}
    init_rows = np.ascontiguousarray(np.stack([g.nodes[n].initial_feature for n in ids]),
                                     dtype=np.float64)
    E = np.stack([encode_layer(layer, d_e) for layer in range(g.max_depth + 1)])
    keys = canonical_keys(g)

    def order(nodes) -> list[str]:
        return sorted(nodes, key=lambda n: (keys[n], n))

    n_rows = len(ids)
    feat_row = dict(index)
    cells: list[tuple[int, int, int, int, int]] = []
    stage_ptr = [0]
    loss_pairs: list[tuple[int, int]] = []
    groups: list[GroupInfo] = []
    final_rows: dict[str, list[int]] = {}

    partition = depth_partition(g)
    for level in partition[1:]:
        parents = order(p for p in level if children_of(g, p))
        kids_of = {p: order(children_of(g, p)) for p in parents}
        nbrs_of = {p: _sibling_map(g, kids_of[p]) for p in parents}
        state_row = {p: {c: feat_row[c] for c in kids_of[p]} for p in parents}
        for _ in range(T):
            new_state = {}
            for p in parents:
                new_state[p] = {}
                for i in kids_of[p]:
                    tgt = n_rows
                    n_rows += 1
                    layer = g.layer_of(i)
                    for j in order(nbrs_of[p][i] | {i}):
                        cells.append((state_row[p][j], feat_row[i], feat_row[j], layer, tgt))
                    new_state[p][i] = tgt
            state_row = new_state
            stage_ptr.append(len(cells))
        hp_row = {}
        for p in parents:
            tgt = n_rows
            n_rows += 1
            layer = g.layer_of(p)
            for c in kids_of[p]:
                cells.append((state_row[p][c], feat_row[p], feat_row[c], layer, tgt))
            hp_row[p] = tgt
            loss_pairs.append((index[p], tgt))
            groups.append(GroupInfo(p, tuple(kids_of[p])))
            for c in kids_of[p]:
                final_rows.setdefault(c, []).append(state_row[p][c])
        stage_ptr.append(len(cells))
        if propagation == "latent":
            feat_row.update(hp_row)
        if g.root_id in hp_row:
            final_rows[g.root_id] = [hp_row[g.root_id]]
    final_rows.setdefault(g.root_id, [index[g.root_id]])

    return ToolPlan(
        name=g.name, node_ids=ids, n_init=len(ids), n_rows=n_rows, init_rows=init_rows, E=E,
        cells=np.array(cells, dtype=np.int64).reshape(-1, 5),
        stage_ptr=np.array(stage_ptr, dtype=np.int64),
        loss_pairs=np.array(loss_pairs, dtype=np.int64).reshape(-1, 2),
        groups=groups, final_rows=final_rows, T=T, propagation=propagation)


@dataclass
class PlanRun:
    """Buffers left behind by a forward pass (consumed by the backward pass)."""
    R: np.ndarray
    outs: np.ndarray
    losses: np.ndarray


def run_forward(p: EncoderParams, plan: ToolPlan, backend=None) -> PlanRun:
    be = backend or kernels.backend
    if plan.E.shape[1] != p.d_e or plan.d_v != p.d_h:
        raise ValueError(f"plan dims (d_v={plan.d_v}, d_e={plan.E.shape[1]}) do not match "
                         f"params (d_h={p.d_h}, d_e={p.d_e})")
    R = np.zeros((plan.n_rows, p.d_h))
    R[:plan.n_init] = plan.init_rows
    outs = np.empty((plan.cells.shape[0], p.d_h))
    losses = np.empty(plan.loss_pairs.shape[0])
    be.forward(p.W, p.U, p.b, R, plan.n_init, plan.E, plan.cells, plan.stage_ptr,
               plan.loss_pairs, outs, losses)
    return PlanRun(R, outs, losses)


def run_backward(p: EncoderParams, plan: ToolPlan, run: PlanRun, backend=None
                 ) -> EncoderParams:
    be = backend or kernels.backend
    grad = p.zeros_like()
    be.backward(p.W, p.U, p.b, run.R, plan.n_init, plan.E, plan.cells, plan.stage_ptr,
                plan.loss_pairs, run.outs, grad.W, grad.U, grad.b)
    return grad


def check_finite(plan: ToolPlan, run: PlanRun) -> None:
    bad = np.flatnonzero(~np.isfinite(run.losses))
    if bad.size:
        grp = plan.groups[bad[0]].parent
        raise NonFiniteError(f"non-finite loss in tool {plan.name!r}, group {grp!r}",
                             plan.name, grp)


@dataclass
class ForwardTrace:
    latents: dict[str, np.ndarray]
    contributions: list[tuple[str, tuple[str, ...], float]]
    total_loss: float


def plan_latents(plan: ToolPlan, run: PlanRun) -> dict[str, np.ndarray]:
    """Final latent per node: the last child-iteration state (averaged over
    parent groups for shared children), or the computed parent state at the
    root."""
    out = {}
    for nid in plan.node_ids:
        rows = plan.final_rows[nid]
        v = run.R[rows[0]].copy()
        for r in rows[1:]:
            v += run.R[r]
        if len(rows) > 1:
            v /= len(rows)
        out[nid] = v
    return out


def trace_from_run(plan: ToolPlan, run: PlanRun) -> ForwardTrace:
    contributions = [(gi.parent, gi.children, float(run.losses[k]))
                     for k, gi in enumerate(plan.groups)]
    total = 0.0
    for _, _, c in contributions:
        total += c
    return ForwardTrace(plan_latents(plan, run), contributions, total)


def forward_tool(p: EncoderParams, g: ToolGraph, cfg: TrainConfig, backend=None
                 ) -> ForwardTrace:
    plan = compile_plan(g, cfg.T, cfg.propagation, p.d_e)
    run = run_forward(p, plan, backend)
    check_finite(plan, run)
    return trace_from_run(plan, run)
