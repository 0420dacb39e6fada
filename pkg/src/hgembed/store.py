"""Exact cosine top-k store for node embeddings.

File layout (little-endian throughout)::

    b"TGVS1" | u32 record_count
    per record: u32 len + tool_name utf-8 | u32 len + node_id utf-8 | u8 kind
                | u64 description_digest | u32 dim | dim * f64
"""
from __future__ import annotations

import heapq
import io
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .embedder import EmbedderConfig, fnv1a64, hash_embed
from .toolgraph import ToolGraph

MAGIC = b"TGVS1"
KINDS = ("initial", "structural")


class StoreError(ValueError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


class StoreFormatError(StoreError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__("FORMAT", f"{message} at byte offset {offset}")


def description_digest(text: str) -> int:
    return fnv1a64(text.encode("utf-8"))


@dataclass(frozen=True)
class EmbeddingRecord:
    tool_name: str
    node_id: str
    vector: np.ndarray
    kind: str = "initial"
    description_digest: int = 0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.tool_name, self.node_id, self.kind)


@dataclass(frozen=True)
class QueryHit:
    tool_name: str
    node_id: str
    similarity: float


@dataclass
class QueryResult:
    hits: list[QueryHit]
    k: int

    def __len__(self):
        return len(self.hits)

    def lines(self) -> list[str]:
        return [f"{rank}\t{h.tool_name}\t{h.node_id}\t{h.similarity:.9f}"
                for rank, h in enumerate(self.hits, 1)]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) != len(b):
        raise StoreError("DIMENSION_MISMATCH", f"lengths {len(a)} and {len(b)}")
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise StoreError("ZERO_VECTOR", "cosine of a zero vector")
    return float(np.dot(a, b)) / (na * nb)


class VectorStore:
    def __init__(self, records: Iterable[EmbeddingRecord] = ()):
        self._records: list[EmbeddingRecord] = []
        self._keys: set[tuple[str, str, str]] = set()
        self._matrix: Optional[np.ndarray] = None
        for rec in records:
            self.insert(rec)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def records(self) -> list[EmbeddingRecord]:
        return list(self._records)

    def insert(self, rec: EmbeddingRecord) -> None:
        if rec.kind not in KINDS:
            raise StoreError("BAD_KIND", f"unknown record kind {rec.kind!r}")
        if rec.key in self._keys:
            raise StoreError("DUPLICATE_KEY", f"record {rec.key} already stored")
        vec = np.asarray(rec.vector, dtype=np.float64)
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise StoreError("NON_FINITE", f"record {rec.key} has a non-finite vector")
        if self._records and vec.shape[0] != self.dim:
            raise StoreError("DIMENSION_MISMATCH", f"record {rec.key} has length "
                             f"{vec.shape[0]}, store holds {self.dim}")
        vec = vec.copy()
        vec.setflags(write=False)
        self._records.append(EmbeddingRecord(rec.tool_name, rec.node_id, vec, rec.kind,
                                             rec.description_digest))
        self._keys.add(rec.key)
        self._matrix = None

    @property
    def dim(self) -> Optional[int]:
        return self._records[0].vector.shape[0] if self._records else None

    def _norms(self):
        if self._matrix is None:
            m = np.stack([r.vector for r in self._records])
            self._matrix = m
            self._row_norms = np.sqrt(np.einsum("ij,ij->i", m, m))
        return self._matrix, self._row_norms

    def similarities(self, q: np.ndarray) -> np.ndarray:
        m, norms = self._norms()
        qn = math.sqrt(float(np.dot(q, q)))
        if qn == 0.0:
            raise StoreError("ZERO_VECTOR", "query vector is zero")
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = (m @ q) / (norms * qn)
        # zero-norm records never match
        sims[norms == 0.0] = -np.inf
        return sims

    def search(self, q: np.ndarray, k: int, kind: Optional[str] = None) -> QueryResult:
        """Exact top-k over records of ``kind`` (all kinds when None)."""
        if not self._records:
            raise StoreError("EMPTY_STORE", "store is empty")
        if len(q) != self.dim:
            raise StoreError("DIMENSION_MISMATCH", f"query length {len(q)} != {self.dim}")
        if k < 0:
            raise ValueError("k must be >= 0")
        sims = self.similarities(np.asarray(q, dtype=np.float64))
        cand = [(-float(sims[i]), r.tool_name, r.node_id, i)
                for i, r in enumerate(self._records) if kind is None or r.kind == kind]
        top = heapq.nsmallest(k, cand)
        return QueryResult([QueryHit(t, n, -s) for s, t, n, _ in top], k)

    def query(self, qtext: str, k: int, cfg: EmbedderConfig = EmbedderConfig(),
              kind: Optional[str] = None) -> QueryResult:
        if not self._records:
            raise StoreError("EMPTY_STORE", "store is empty")
        return self.search(hash_embed(qtext, cfg), k, kind)

    # -- persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", len(self._records)))
        for r in self._records:
            for text in (r.tool_name, r.node_id):
                raw = text.encode("utf-8")
                buf.write(struct.pack("<I", len(raw)))
                buf.write(raw)
            buf.write(struct.pack("<BQI", KINDS.index(r.kind), r.description_digest,
                                  r.vector.shape[0]))
            buf.write(np.asarray(r.vector, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "VectorStore":
        pos = 0

        def take(n: int, what: str) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise StoreFormatError(f"truncated while reading {what}", pos)
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        if take(len(MAGIC), "magic") != MAGIC:
            raise StoreFormatError("bad magic", 0)
        (count,) = struct.unpack("<I", take(4, "record count"))
        store = cls()
        for i in range(count):
            texts = []
            for what in ("tool_name", "node_id"):
                (n,) = struct.unpack("<I", take(4, f"record {i} {what} length"))
                start = pos
                try:
                    texts.append(take(n, f"record {i} {what}").decode("utf-8"))
                except UnicodeDecodeError:
                    raise StoreFormatError(f"record {i} {what} is not utf-8", start) from None
            start = pos
            kind, digest, dim = struct.unpack("<BQI", take(13, f"record {i} header"))
            if kind >= len(KINDS):
                raise StoreFormatError(f"record {i} has unknown kind {kind}", start)
            vec = np.frombuffer(take(8 * dim, f"record {i} vector"), dtype="<f8")
            try:
                store.insert(EmbeddingRecord(texts[0], texts[1], vec.astype(np.float64),
                                             KINDS[kind], digest))
            except StoreError as exc:
                raise StoreFormatError(str(exc), start) from None
        if pos != len(data):
            raise StoreFormatError("trailing bytes after last record", pos)
        return store

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "VectorStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def query_topk(store: VectorStore, qtext: str, k: int, cfg: EmbedderConfig = EmbedderConfig(),
               filter: Optional[str] = None) -> QueryResult:
    return store.query(qtext, k, cfg, filter)


def initial_records(g: ToolGraph, with_queries: bool = True,
                    cfg: EmbedderConfig = EmbedderConfig()) -> list[EmbeddingRecord]:
    """``initial`` records of an embedded graph, plus one per query text keyed ``<id>#q<i>``."""
    recs = []
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        if node.initial_feature is None:
            raise ValueError(f"node {nid!r} has no initial feature")
        recs.append(EmbeddingRecord(g.name, nid, node.initial_feature, "initial",
                                    description_digest(node.description)))
        if with_queries:
            for qi, q in enumerate(node.queries):
                recs.append(EmbeddingRecord(g.name, f"{nid}#q{qi}", hash_embed(q, cfg),
                                            "initial", description_digest(q)))
    return recs
