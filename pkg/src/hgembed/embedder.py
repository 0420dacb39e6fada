"""Deterministic text features and layer encodings.

Node features come from signed feature hashing of description tokens
(FNV-1a 64-bit buckets), so identical texts always give identical vectors
and no node identifier can leak into a feature.  Externally produced
vectors can be loaded instead.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from .toolgraph import ToolGraph, require_valid

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1
_SPLIT = re.compile(r"[^0-9A-Za-z]+")


class EmbeddingError(ValueError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


@dataclass(frozen=True)
class EmbedderConfig:
    dim: int = 256
    hash_seed: int = 0
    lowercase: bool = True

    def __post_init__(self):
        if self.dim < 8 or self.dim & (self.dim - 1):
            raise ValueError(f"embedding dim must be a power of two >= 8, got {self.dim}")


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Split on every non-alphanumeric character.

    >>> tokenize("What is 3 + 7 ?")
    ['what', 'is', '3', '7']
    """
    if lowercase:
        text = text.lower()
    return [t for t in _SPLIT.split(text) if t]


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """FNV-1a 64; the seed is xor-ed into the offset basis (seed 0 = plain FNV-1a)."""
    h = FNV_OFFSET ^ (seed & _MASK)
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def _bucket_counts(tokens: list[str], cfg: EmbedderConfig, signed: bool) -> np.ndarray:
    v = np.zeros(cfg.dim, dtype=np.float64)
    for tok in tokens:
        h = fnv1a64(tok.encode("utf-8"), cfg.hash_seed)
        sign = -1.0 if signed and (h >> 63) else 1.0
        v[h & (cfg.dim - 1)] += sign
    return v


def hash_embed(text: str, cfg: EmbedderConfig = EmbedderConfig()) -> np.ndarray:
    """Unit-norm signed bag-of-words hash of ``text``.

    If signed collisions cancel every bucket the unsigned counts are used
    instead, so the result is always a unit vector.
    """
    tokens = tokenize(text, cfg.lowercase)
    if not tokens:
        raise EmbeddingError("EMPTY_DESCRIPTION", f"no tokens in {text!r}")
    v = _bucket_counts(tokens, cfg, signed=True)
    sq = float(np.dot(v, v))
    if sq == 0.0:
        v = _bucket_counts(tokens, cfg, signed=False)
        sq = float(np.dot(v, v))
    return v / math.sqrt(sq)


def encode_layer(layer: int, dim: int = 16) -> np.ndarray:
    """Sinusoidal encoding: sin/cos pairs at geometric frequencies."""
    if layer < 0:
        raise ValueError("layer must be >= 0")
    out = np.empty(dim, dtype=np.float64)
    for i in range(dim):
        k2 = i - (i % 2)
        angle = layer / 10000.0 ** (k2 / dim)
        out[i] = math.sin(angle) if i % 2 == 0 else math.cos(angle)
    return out


def _frozen(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=np.float64)
    v.setflags(write=False)
    return v


def embed_graph(g: ToolGraph, cfg: EmbedderConfig = EmbedderConfig(), edge_dim: int = 16,
                external: Optional[Mapping[str, np.ndarray]] = None) -> ToolGraph:
    """Install node features and edge layer encodings.

    With ``external`` the node vectors are taken from that mapping (keys
    ``"<tool>/<id>"`` or bare ids) rather than hashed from descriptions.
    """
    require_valid(g)
    nodes = {}
    for nid, node in g.nodes.items():
        if external is not None:
            vec = external.get(f"{g.name}/{nid}", external.get(nid))
            if vec is None:
                raise EmbeddingError("MISSING_EMBEDDING", f"no vector for {g.name}/{nid}")
        else:
            try:
                vec = hash_embed(node.description, cfg)
            except EmbeddingError as exc:
                raise EmbeddingError(exc.code, f"node {nid!r}: {exc}") from None
        nodes[nid] = replace(node, initial_feature=_frozen(vec))
    edges = [replace(e, edge_feature=_frozen(encode_layer(g.layer_of(e.to_id), edge_dim)))
             for e in g.edges]
    return ToolGraph(g.name, nodes, tuple(edges), g.root_id)


def load_external_embeddings(path, known_ids=None, dim: Optional[int] = None
                             ) -> dict[str, np.ndarray]:
    """Read ``id<TAB>v1,v2,...`` lines.

    ``known_ids`` (optional) restricts accepted ids; ``dim`` (optional) fixes
    the expected length, otherwise the first row sets it.
    """
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise EmbeddingError("MALFORMED", f"line {lineno}: expected id<TAB>values")
            key, values = line.split("\t", 1)
            if known_ids is not None and key not in known_ids:
                raise EmbeddingError("UNKNOWN_NODE", f"line {lineno}: unknown node id {key!r}")
            if key in out:
                raise EmbeddingError("DUPLICATE_ID", f"line {lineno}: duplicate id {key!r}")
            try:
                vec = np.array([float(x) for x in values.split(",")], dtype=np.float64)
            except ValueError:
                raise EmbeddingError("MALFORMED", f"line {lineno} ({key}): bad number") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError("NON_FINITE", f"line {lineno} ({key}): non-finite value")
            if dim is None:
                dim = vec.shape[0]
            if vec.shape[0] != dim:
                raise EmbeddingError("DIMENSION_MISMATCH",
                                     f"line {lineno} ({key}): length {vec.shape[0]} != {dim}")
            out[key] = vec
    return out
