"""Layered-DAG data model for hierarchically composed tools.

A tool is a graph of anonymous subtool nodes.  Edges run child -> parent
(composition) or between siblings of one parent group.  Depth counts from the
root (0) downward; the training sweep walks the layers deepest-first.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

CHILD_TO_PARENT = "child_to_parent"
SIBLING = "sibling"
EDGE_KINDS = (CHILD_TO_PARENT, SIBLING)


class ToolDocumentError(ValueError):
    """Raised when a tool-definition document cannot be turned into a graph."""

    def __init__(self, code: str, message: str, context: str = ""):
        self.code = code
        self.context = context
        super().__init__(f"{code}: {message}" + (f" (at {context})" if context else ""))


class InvalidGraphError(ValueError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        lines = [f"{v.code}:{v.subject_id}:{v.message}" for v in report.violations]
        super().__init__("invalid tool graph: " + "; ".join(lines))


@dataclass(frozen=True)
class ToolNode:
    local_id: str
    description: str
    depth: int
    queries: tuple[str, ...] = ()
    initial_feature: Optional[np.ndarray] = field(default=None, compare=False)


@dataclass(frozen=True)
class ToolEdge:
    from_id: str
    to_id: str
    kind: str = CHILD_TO_PARENT
    edge_feature: Optional[np.ndarray] = field(default=None, compare=False)


@dataclass(frozen=True)
class ToolGraph:
    name: str
    nodes: Mapping[str, ToolNode]
    edges: tuple[ToolEdge, ...]
    root_id: str

    def __post_init__(self):
        if not isinstance(self.nodes, MappingProxyType):
            object.__setattr__(self, "nodes", MappingProxyType(dict(self.nodes)))
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes.values())

    def layer_of(self, node_id: str) -> int:
        """Bottom-up layer index: 0 for the deepest layer, max_depth at the root."""
        return self.max_depth - self.nodes[node_id].depth

    def parents_of(self, node_id: str) -> list[str]:
        return sorted({e.to_id for e in self.edges
                       if e.kind == CHILD_TO_PARENT and e.from_id == node_id})

    def sibling_pairs(self) -> list[tuple[str, str]]:
        return [(e.from_id, e.to_id) for e in self.edges if e.kind == SIBLING]

    def with_nodes(self, nodes: Mapping[str, ToolNode]) -> "ToolGraph":
        return replace(self, nodes=MappingProxyType(dict(nodes)))

    def with_edges(self, edges: Iterable[ToolEdge]) -> "ToolGraph":
        return replace(self, edges=tuple(edges))


class Violation(NamedTuple):
    code: str
    message: str
    subject_id: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def add(self, code: str, message: str, subject: str) -> None:
        self.violations.append(Violation(code, message, subject))


# ---------------------------------------------------------------------------
# depths


def compute_depths(node_ids: Iterable[str], edges: Sequence[ToolEdge],
                   root_id: str) -> dict[str, int]:
    """Longest child->parent path length to the root; -1 where undefined.

    A node is undefined when it cannot reach the root without passing
    through a cycle.
    """
    ids = list(node_ids)
    cyclic = set(_find_cycle_nodes(ids, edges))
    parents: dict[str, list[str]] = {n: [] for n in ids}
    for e in edges:
        if (e.kind == CHILD_TO_PARENT and e.from_id in parents and e.to_id in parents
                and e.from_id != e.to_id and e.to_id not in cyclic):
            parents[e.from_id].append(e.to_id)

    depth: dict[str, int] = {}

    def visit(n: str) -> int:
        if n in depth:
            return depth[n]
        if n in cyclic:
            best = -1
        elif n == root_id:
            best = 0
        else:
            best = -1
            for p in parents[n]:
                d = visit(p)
                if d >= 0:
                    best = max(best, d + 1)
        depth[n] = best
        return best

    for n in ids:
        visit(n)
    return depth


def _find_cycle_nodes(node_ids: Sequence[str], edges: Sequence[ToolEdge]) -> list[str]:
    """Nodes lying on a child->parent cycle (self-loops excluded)."""
    succ: dict[str, list[str]] = {n: [] for n in node_ids}
    for e in edges:
        if (e.kind == CHILD_TO_PARENT and e.from_id in succ and e.to_id in succ
                and e.from_id != e.to_id):
            succ[e.from_id].append(e.to_id)
    # Tarjan SCC, iterative
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    stack: list[str] = []
    on: set[str] = set()
    cyclic: list[str] = []
    counter = 0
    for start in sorted(succ):
        if start in index:
            continue
        work = [(start, 0)]
        while work:
            v, i = work.pop()
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on.add(v)
            recurse = False
            nbrs = succ[v]
            while i < len(nbrs):
                w = nbrs[i]
                i += 1
                if w not in index:
                    work.append((v, i))
                    work.append((w, 0))
                    recurse = True
                    break
                if w in on:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                if len(comp) > 1:
                    cyclic.extend(comp)
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
    return sorted(cyclic)


# ---------------------------------------------------------------------------
# validation


def validate(g: ToolGraph) -> ValidationReport:
    """Collect every invariant violation of ``g``; never raises."""
    rep = ValidationReport()
    ids = sorted(g.nodes)

    feat_len = None
    for nid in ids:
        node = g.nodes[nid]
        if node.local_id != nid:
            rep.add("ID_MISMATCH", f"node stored under {nid!r} has local_id {node.local_id!r}", nid)
        if not node.description or not node.description.strip():
            rep.add("EMPTY_DESCRIPTION", "description is empty", nid)
        f = node.initial_feature
        if f is not None:
            f = np.asarray(f)
            if f.ndim != 1:
                rep.add("BAD_FEATURE", "initial feature is not a vector", nid)
            elif not np.all(np.isfinite(f)):
                rep.add("BAD_FEATURE", "initial feature has non-finite entries", nid)
            elif feat_len is None:
                feat_len = f.shape[0]
            elif f.shape[0] != feat_len:
                rep.add("BAD_FEATURE", f"feature length {f.shape[0]} != {feat_len}", nid)

    if g.root_id not in g.nodes:
        rep.add("ROOT_MISSING", f"root {g.root_id!r} is not a node", g.root_id)

    seen: set[tuple[str, str, str]] = set()
    good_edges: list[ToolEdge] = []
    for e in g.edges:
        label = f"{e.from_id}->{e.to_id}"
        if e.kind not in EDGE_KINDS:
            rep.add("BAD_EDGE_KIND", f"unknown edge kind {e.kind!r}", label)
            continue
        missing = [x for x in (e.from_id, e.to_id) if x not in g.nodes]
        if missing:
            for x in missing:
                rep.add("UNKNOWN_ENDPOINT", f"edge {label} names unknown node {x!r}", x)
            continue
        if e.from_id == e.to_id:
            rep.add("SELF_LOOP", f"self-loop on {e.from_id}", e.from_id)
            continue
        key = (e.kind, *sorted((e.from_id, e.to_id))) if e.kind == SIBLING \
            else (e.kind, e.from_id, e.to_id)
        if key in seen:
            rep.add("DUPLICATE_EDGE", f"duplicate {e.kind} edge {label}", label)
            continue
        seen.add(key)
        good_edges.append(e)

    for nid in _find_cycle_nodes(ids, good_edges):
        rep.add("CYCLE", "node lies on a child_to_parent cycle", nid)

    out_deg = {n: 0 for n in ids}
    for e in good_edges:
        if e.kind == CHILD_TO_PARENT:
            out_deg[e.from_id] += 1
    if g.root_id in g.nodes and out_deg[g.root_id]:
        rep.add("ROOT_HAS_PARENT", "root has an outgoing child_to_parent edge", g.root_id)
    for nid in ids:
        if nid != g.root_id and out_deg[nid] == 0:
            rep.add("ORPHAN", "non-root node has no parent (second root)", nid)

    computed = compute_depths(ids, good_edges, g.root_id)
    for nid in ids:
        declared = g.nodes[nid].depth
        if nid == g.root_id and declared != 0:
            rep.add("ROOT_DEPTH", f"root depth is {declared}, expected 0", nid)
        if computed[nid] < 0:
            if out_deg[nid] and nid != g.root_id:
                rep.add("UNREACHABLE", "no child_to_parent path to the root", nid)
        elif declared != computed[nid]:
            rep.add("DEPTH_MISMATCH",
                    f"declared depth {declared} != longest path {computed[nid]}", nid)

    parents: dict[str, set[str]] = {n: set() for n in ids}
    for e in good_edges:
        if e.kind == CHILD_TO_PARENT:
            parents[e.from_id].add(e.to_id)
    for e in good_edges:
        da, db = g.nodes[e.from_id].depth, g.nodes[e.to_id].depth
        label = f"{e.from_id}->{e.to_id}"
        if e.kind == CHILD_TO_PARENT:
            if da - db > 1:
                rep.add("DEPTH_SKIP", f"edge {label} spans depths {da}->{db}", e.from_id)
            elif da - db < 1:
                rep.add("DEPTH_ORDER", f"edge {label} does not point one level up "
                        f"({da}->{db})", e.from_id)
        else:
            if da != db:
                rep.add("SIBLING_DEPTH", f"sibling edge {label} joins depths {da},{db}",
                        e.from_id)
            if not parents[e.from_id] & parents[e.to_id]:
                rep.add("SIBLING_PARENT", f"sibling edge {label} shares no parent",
                        e.from_id)
    return rep


def require_valid(g: ToolGraph) -> None:
    rep = validate(g)
    if not rep.ok:
        raise InvalidGraphError(rep)


# ---------------------------------------------------------------------------
# traversal


def depth_partition(g: ToolGraph) -> list[list[str]]:
    """Node ids grouped by depth, deepest group first, ids sorted in each group."""
    require_valid(g)
    top = g.max_depth
    groups: list[list[str]] = [[] for _ in range(top + 1)]
    for nid in sorted(g.nodes):
        groups[top - g.nodes[nid].depth].append(nid)
    return groups


def children_of(g: ToolGraph, parent: str) -> list[str]:
    if parent not in g.nodes:
        raise KeyError(f"unknown node id {parent!r}")
    return sorted({e.from_id for e in g.edges
                   if e.kind == CHILD_TO_PARENT and e.to_id == parent})


# ---------------------------------------------------------------------------
# documents


def _field(obj: dict, key: str, where: str, kind: type, required: bool = True):
    if key not in obj:
        if required:
            raise ToolDocumentError("MISSING_FIELD", f"missing field {key!r}", where)
        return None
    val = obj[key]
    if kind is int and isinstance(val, bool):
        raise ToolDocumentError("BAD_FIELD", f"field {key!r} must be an integer", where)
    if not isinstance(val, kind):
        raise ToolDocumentError("BAD_FIELD",
                                f"field {key!r} must be {kind.__name__}", f"{where}.{key}")
    return val


def parse_tool_document(doc: str) -> ToolGraph:
    """Parse a tool-definition JSON document.

    Missing ``depth`` values are recomputed as longest path to the root
    (-1 when no path exists, which ``validate`` then reports).  Structural
    problems beyond referential integrity are left to ``validate``.
    """
    try:
        data = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise ToolDocumentError("MALFORMED", exc.msg, f"line {exc.lineno} column {exc.colno}")
    if not isinstance(data, dict):
        raise ToolDocumentError("MALFORMED", "top level must be an object", "document")

    name = _field(data, "name", "document", str)
    root = _field(data, "root", "document", str)
    raw_nodes = _field(data, "nodes", "document", list)
    raw_edges = _field(data, "edges", "document", list)

    nodes: dict[str, dict] = {}
    for i, rn in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        if not isinstance(rn, dict):
            raise ToolDocumentError("MALFORMED", "node entry must be an object", where)
        nid = _field(rn, "id", where, str)
        if nid in nodes:
            raise ToolDocumentError("DUPLICATE_ID", f"duplicate node id {nid!r}", f"{where}.id")
        desc = _field(rn, "description", where, str)
        depth = _field(rn, "depth", where, int, required=False)
        queries = _field(rn, "queries", where, list, required=False) or []
        for q_i, q in enumerate(queries):
            if not isinstance(q, str):
                raise ToolDocumentError("BAD_FIELD", "query must be a string",
                                        f"{where}.queries[{q_i}]")
        nodes[nid] = {"description": desc, "depth": depth, "queries": tuple(queries)}

    edges: list[ToolEdge] = []
    for i, re_ in enumerate(raw_edges):
        where = f"edges[{i}]"
        if not isinstance(re_, dict):
            raise ToolDocumentError("MALFORMED", "edge entry must be an object", where)
        src = _field(re_, "from", where, str)
        dst = _field(re_, "to", where, str)
        kind = _field(re_, "kind", where, str)
        if kind not in EDGE_KINDS:
            raise ToolDocumentError("BAD_FIELD", f"unknown edge kind {kind!r}", f"{where}.kind")
        for end, key in ((src, "from"), (dst, "to")):
            if end not in nodes:
                raise ToolDocumentError("UNKNOWN_ENDPOINT",
                                        f"edge endpoint {end!r} is not a declared node",
                                        f"{where}.{key}")
        edges.append(ToolEdge(src, dst, kind))

    if root not in nodes:
        raise ToolDocumentError("UNKNOWN_ENDPOINT", f"root {root!r} is not a declared node",
                                "document.root")

    computed = None
    if any(n["depth"] is None for n in nodes.values()):
        computed = compute_depths(list(nodes), edges, root)
    built = {
        nid: ToolNode(nid, n["description"],
                      n["depth"] if n["depth"] is not None else computed[nid],
                      n["queries"])
        for nid, n in nodes.items()
    }
    return ToolGraph(name, built, tuple(edges), root)


def to_document(g: ToolGraph) -> str:
    """Serialize to the tool-definition JSON format (features are not stored)."""
    nodes = []
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        entry = {"id": nid, "description": n.description, "depth": n.depth}
        if n.queries:
            entry["queries"] = list(n.queries)
        nodes.append(entry)
    edges = [{"from": e.from_id, "to": e.to_id, "kind": e.kind} for e in g.edges]
    return json.dumps({"name": g.name, "root": g.root_id, "nodes": nodes, "edges": edges},
                      indent=2, ensure_ascii=False) + "\n"


def load_tool_file(path) -> ToolGraph:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_tool_document(text)
    except ToolDocumentError as exc:
        raise ToolDocumentError(exc.code, str(exc), f"{path}") from None


def rename_nodes(g: ToolGraph, mapping: Mapping[str, str]) -> ToolGraph:
    """Consistently rename node ids across nodes, edges and root."""
    nodes = {mapping[nid]: replace(n, local_id=mapping[nid]) for nid, n in g.nodes.items()}
    edges = [replace(e, from_id=mapping[e.from_id], to_id=mapping[e.to_id]) for e in g.edges]
    return ToolGraph(g.name, nodes, tuple(edges), mapping[g.root_id])
