"""Synthetic corpora of hierarchical tool definitions.

Each tool draws from its own xoshiro256** stream (corpus seed mixed with the
tool index).  Within a tool the draw order is fixed: depth, fanouts (BFS),
sibling edges, optional cross-links, then descriptions leaves-first.
Parents reuse a sample of each child's tokens plus some fresh ones, so a
parent's feature is predictable from its children.
"""
from __future__ import annotations

import json
import math
from fractions import Fraction
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .embedder import fnv1a64, tokenize
from .rng import Xoshiro256
from .toolgraph import (CHILD_TO_PARENT, SIBLING, ToolEdge, ToolGraph, ToolNode,
                        load_tool_file, require_valid, to_document)

_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]
MANIFEST = "manifest.json"


def vocab_word(i: int) -> str:
    n = len(_SYLLABLES)
    word = _SYLLABLES[i % n] + _SYLLABLES[(i // n) % n]
    if i >= n * n:
        word += _SYLLABLES[(i // (n * n)) % n] + str(i // (n * n * n) or "")
    return word


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 42
    n_tools: int = 50
    depth_range: tuple[int, int] = (2, 3)
    fanout_range: tuple[int, int] = (2, 4)
    vocab_size: int = 2000
    tokens_per_description: tuple[int, int] = (8, 16)
    sibling_edge_probability: float = 0.3
    child_token_fraction: float = 0.5
    cross_link_probability: float = 0.0

    def __post_init__(self):
        for name in ("depth_range", "fanout_range", "tokens_per_description"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (int(lo), int(hi)))
            if lo > hi:
                raise ValueError(f"{name} is not ordered: {lo} > {hi}")
        if self.depth_range[0] < 0 or self.fanout_range[0] < 1:
            raise ValueError("depth must be >= 0 and fanout >= 1")
        if self.tokens_per_description[0] < 1:
            raise ValueError("descriptions need at least one token")
        if self.vocab_size < 10:
            raise ValueError("vocab_size must be >= 10")
        for name in ("sibling_edge_probability", "cross_link_probability",
                     "child_token_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def gen_tool(spec: CorpusSpec, index: int) -> ToolGraph:
    rng = Xoshiro256.stream(spec.seed, index)
    depth_target = rng.randint(*spec.depth_range)

    ids = ["n000"]
    depth = {"n000": 0}
    kids: dict[str, list[str]] = {"n000": []}
    parent_of: dict[str, list[str]] = {"n000": []}
    frontier = 0
    while frontier < len(ids):
        nid = ids[frontier]
        frontier += 1
        if depth[nid] >= depth_target:
            continue
        for _ in range(rng.randint(*spec.fanout_range)):
            cid = f"n{len(ids):03d}"
            ids.append(cid)
            depth[cid] = depth[nid] + 1
            kids[cid] = []
            parent_of[cid] = [nid]
            kids[nid].append(cid)

    edges = [ToolEdge(c, parent_of[c][0], CHILD_TO_PARENT) for c in ids[1:]]
    for nid in ids:
        group = kids[nid]
        for a in range(len(group)):
            for b in range(a + 1, len(group)):
                if rng.random() < spec.sibling_edge_probability:
                    edges.append(ToolEdge(group[a], group[b], SIBLING))
    if spec.cross_link_probability > 0:
        for nid in ids:
            if depth[nid] < 2 or rng.random() >= spec.cross_link_probability:
                continue
            cands = [x for x in ids if depth[x] == depth[nid] - 1 and x not in parent_of[nid]]
            if cands:
                extra = cands[rng.below(len(cands))]
                parent_of[nid].append(extra)
                edges.append(ToolEdge(nid, extra, CHILD_TO_PARENT))

    tokens: dict[str, list[str]] = {}
    lo, hi = spec.tokens_per_description
    for nid in reversed(ids):
        if not kids[nid]:
            toks = [vocab_word(rng.below(spec.vocab_size)) for _ in range(rng.randint(lo, hi))]
        else:
            toks = []
            for c in kids[nid]:
                k = max(1, round(spec.child_token_fraction * len(tokens[c])))
                toks.extend(rng.sample(tokens[c], k))
            n_fresh = max(1, rng.randint(lo, hi) // 2)
            toks.extend(vocab_word(rng.below(spec.vocab_size)) for _ in range(n_fresh))
        tokens[nid] = toks

    nodes = {nid: ToolNode(nid, " ".join(tokens[nid]), depth[nid]) for nid in ids}
    g = ToolGraph(f"tool_{index:04d}", nodes, tuple(edges), "n000")
    require_valid(g)
    return g


def gen_corpus(spec: CorpusSpec) -> list[ToolGraph]:
    return [gen_tool(spec, i) for i in range(spec.n_tools)]


def paraphrase_query(node: ToolNode, seed: int, fraction: float = 0.5) -> str:
    """Shuffled subset of at least ``fraction`` of the description's tokens."""
    toks = tokenize(node.description)
    if not toks:
        raise ValueError(f"node {node.local_id!r} has an empty description")
    # exact rational ceil: 0.7 * 10 must give 7, not 8
    m = max(1, math.ceil(Fraction(fraction).limit_denominator(10 ** 6) * len(toks)))
    rng = Xoshiro256.stream(seed, fnv1a64(node.description.encode("utf-8")))
    return " ".join(rng.sample(toks, m))


def write_corpus(corpus: list[ToolGraph], out_dir, spec: CorpusSpec | None = None) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for g in corpus:
        fname = f"{g.name}.json"
        (out / fname).write_text(to_document(g), encoding="utf-8")
        files.append(fname)
    manifest = {"files": files, "spec": spec.to_dict() if spec else None}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return files


def corpus_files(path) -> list[Path]:
    """Tool documents in a corpus directory (manifest order when present)
    or the single file ``path``."""
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise FileNotFoundError(f"no such corpus: {path}")
    man = p / MANIFEST
    if man.exists():
        with open(man, encoding="utf-8") as fh:
            return [p / f for f in json.load(fh)["files"]]
    return sorted(f for f in p.glob("*.json")
                  if f.name != MANIFEST and not f.name.startswith("run_manifest"))


def load_corpus(path) -> list[ToolGraph]:
    return [load_tool_file(f) for f in corpus_files(path)]
