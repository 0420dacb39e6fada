import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_params
from hgembed.config import TrainConfig
from hgembed.embedder import EmbedderConfig, embed_graph, encode_layer
from hgembed.hgnn import (EncoderParams, HiddenState, NonFiniteError, aggregate,
                          compile_plan, forward_group, forward_tool, forward_tool_reference,
                          message_input, rnn_cell, run_forward)
from hgembed.kernels import get_backend
from hgembed.toolgraph import SIBLING, ToolEdge, ToolGraph, ToolNode, rename_nodes

D_E = 16


def chain(n=3, d_v=8):
    nodes = {f"c{i}": ToolNode(f"c{i}", f"word{i} extra{i}", i) for i in range(n)}
    edges = [ToolEdge(f"c{i + 1}", f"c{i}") for i in range(n - 1)]
    return embed_graph(ToolGraph("chain", nodes, edges, "c0"), EmbedderConfig(dim=d_v), 4)


def small_params(d_v, d_e, scale=0.1, seed=0):
    return random_params(d_v, d_e, seed, scale)


# -- oracle: plain loops over python lists, no shared helpers ---------------

def oracle_group(p, g, parent, T, feats):
    kids = sorted(e.from_id for e in g.edges if e.kind != SIBLING and e.to_id == parent)
    sib = {c: {c} for c in kids}
    for e in g.edges:
        if e.kind == SIBLING and e.from_id in sib and e.to_id in sib:
            sib[e.from_id].add(e.to_id)
            sib[e.to_id].add(e.from_id)
    layer = lambda n: g.max_depth - g.nodes[n].depth
    d_h = p.W.shape[0]

    def cell(h, x):
        return [math.tanh(sum(p.W[r, k] * h[k] for k in range(d_h))
                          + sum(p.U[r, k] * x[k] for k in range(len(x))) + p.b[r])
                for r in range(d_h)]

    h = {c: list(feats[c]) for c in kids}
    for _ in range(T):
        new = {}
        for i in kids:
            acc = [0.0] * d_h
            for j in sorted(sib[i]):
                x = list(feats[i]) + list(encode_layer(layer(i), p.d_e)) + list(feats[j])
                acc = [a + m for a, m in zip(acc, cell(h[j], x))]
            new[i] = acc
        h = new
    hp = [0.0] * d_h
    for c in kids:
        x = list(feats[parent]) + list(encode_layer(layer(parent), p.d_e)) + list(feats[c])
        hp = [a + m for a, m in zip(hp, cell(h[c], x))]
    target = g.nodes[parent].initial_feature
    return hp, math.sqrt(sum((t - v) ** 2 for t, v in zip(target, hp)))


class TestCell:
    def test_message_input_layout(self):
        x = message_input(np.array([1.0, 2.0]), np.array([9.0]), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(x, [1, 2, 9, 3, 4])

    def test_message_input_length_mismatch(self):
        with pytest.raises(ValueError):
            message_input(np.ones(2), np.ones(1), np.ones(3))

    def test_tanh_value(self):
        d = 2
        p = EncoderParams(np.zeros((d, d)), np.hstack([np.eye(d), np.zeros((d, d + 1))]),
                          np.zeros(d))
        out = rnn_cell(p, np.zeros(d), np.array([0.5, 0.0, 0.0, 0.0, 0.0]))
        assert out[0] == pytest.approx(0.46211715726, abs=1e-11)
        assert out[1] == 0.0

    def test_shape_and_finite_checks(self):
        p = EncoderParams.zeros(4, 2)
        with pytest.raises(ValueError):
            rnn_cell(p, np.zeros(3), np.zeros(10))
        with pytest.raises(NonFiniteError):
            rnn_cell(p, np.array([np.nan, 0, 0, 0]), np.zeros(10))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.1, 50.0))
    def test_bounded(self, seed, scale):
        p = small_params(4, 2, scale, seed)
        rng = np.random.default_rng(seed)
        out = rnn_cell(p, rng.normal(size=4) * scale, rng.normal(size=10) * scale)
        assert np.all(np.abs(out) <= 1.0)


class TestAggregate:
    def setup_method(self):
        self.p = small_params(4, 2, 0.3, 1)
        rng = np.random.default_rng(3)
        self.f = {k: rng.normal(size=4) for k in "abcd"}
        self.s = {k: HiddenState(k, 0, rng.normal(size=4)) for k in "abcd"}
        self.e = np.array([0.2, -0.1])

    def test_singleton(self):
        h = aggregate(self.p, "a", [("b", self.e)], self.s, self.f)
        expected = rnn_cell(self.p, self.s["b"].h, np.concatenate([self.f["a"], self.e,
                                                                     self.f["b"]]))
        np.testing.assert_array_equal(h.h, expected)
        assert h.t == 1 and h.node_id == "a"

    def test_repeat_doubles(self):
        one = aggregate(self.p, "a", [("b", self.e)], self.s, self.f)
        two = aggregate(self.p, "a", [("b", self.e), ("b", self.e)], self.s, self.f)
        np.testing.assert_allclose(two.h, 2 * one.h, rtol=0, atol=1e-15)

    def test_three_neighbors_bruteforce(self):
        nb = [("b", self.e), ("c", self.e), ("d", self.e)]
        h = aggregate(self.p, "a", nb, self.s, self.f)
        exp = sum(np.tanh(self.p.W @ self.s[j].h + self.p.U @ np.concatenate(
            [self.f["a"], self.e, self.f[j]]) + self.p.b) for j in "bcd")
        np.testing.assert_allclose(h.h, exp, atol=1e-14)

    def test_empty_is_zero(self):
        assert not np.any(aggregate(self.p, "a", [], self.s, self.f).h)

    def test_missing_state(self):
        with pytest.raises(KeyError):
            aggregate(self.p, "a", [("z", self.e)], self.s, self.f)


class TestForward:
    def test_zero_params_single_child_loss_is_one(self):
        g = chain(2)
        p = EncoderParams.zeros(8, 4)
        feats = {n: g.nodes[n].initial_feature for n in g.nodes}
        h, loss = forward_group(p, g, "c0", 2, feats)
        assert not np.any(h.h)
        assert loss == pytest.approx(1.0, abs=1e-15)

    def test_chain_initial_mode_zero_params(self):
        total, parts = forward_tool_reference(EncoderParams.zeros(8, 4), chain(3), 2, "initial")
        assert total == pytest.approx(2.0, abs=1e-15)
        assert [p for p, _ in parts] == ["c1", "c0"]

    def test_fixture_zero_params(self, embedded_fixture):
        trace = forward_tool(EncoderParams.zeros(256, D_E), embedded_fixture,
                             TrainConfig(propagation="initial"))
        assert trace.total_loss == pytest.approx(4.0, abs=1e-12)
        assert sorted(p for p, _, _ in trace.contributions) == ["A1", "A2", "B2", "C2"]

    def test_single_node(self):
        g = embed_graph(ToolGraph("one", {"r": ToolNode("r", "solo", 0)}, [], "r"),
                        EmbedderConfig(dim=8), 4)
        p = small_params(8, 4)
        assert forward_tool(p, g, TrainConfig(d_v=8, d_e=4)).total_loss == 0.0
        assert forward_tool_reference(p, g, 2)[0] == 0.0

    @pytest.mark.parametrize("parent", ["A2", "B2", "C2"])
    def test_group_matches_loop_oracle(self, embedded_fixture, parent):
        g = embedded_fixture
        p = small_params(256, D_E, 0.05, 11)
        feats = {n: g.nodes[n].initial_feature for n in g.nodes}
        h, loss = forward_group(p, g, parent, 2, feats)
        hp, oloss = oracle_group(p, g, parent, 2, feats)
        np.testing.assert_allclose(h.h, hp, atol=1e-12)
        assert loss == pytest.approx(oloss, abs=1e-12)

    @pytest.mark.parametrize("mode", ["latent", "initial"])
    @pytest.mark.parametrize("backend", ["numba", "numpy"])
    def test_plan_matches_reference(self, embedded_fixture, mode, backend):
        p = small_params(256, D_E, 0.05, 5)
        ref_total, ref_parts = forward_tool_reference(p, embedded_fixture, 2, mode)
        trace = forward_tool(p, embedded_fixture, TrainConfig(propagation=mode),
                             get_backend(backend))
        assert trace.total_loss == pytest.approx(ref_total, abs=1e-10)
        got = {par: c for par, _, c in trace.contributions}
        for par, c in ref_parts:
            assert got[par] == pytest.approx(c, abs=1e-10)

    def test_modes_differ(self, embedded_fixture):
        p = small_params(256, D_E, 0.05, 5)
        lat = forward_tool(p, embedded_fixture, TrainConfig(propagation="latent"))
        ini = forward_tool(p, embedded_fixture, TrainConfig(propagation="initial"))
        assert lat.total_loss != ini.total_loss

    def test_latents_bounded_and_complete(self, embedded_fixture):
        p = small_params(256, D_E, 0.5, 2)
        trace = forward_tool(p, embedded_fixture, TrainConfig())
        assert set(trace.latents) == set(embedded_fixture.nodes)
        for nid, v in trace.latents.items():
            assert v.shape == (256,) and np.all(np.isfinite(v))

    def test_backends_agree(self, embedded_fixture):
        p = small_params(256, D_E, 0.05, 9)
        plan = compile_plan(embedded_fixture, 2, "latent", D_E)
        a = run_forward(p, plan, get_backend("numba"))
        b = run_forward(p, plan, get_backend("numpy"))
        np.testing.assert_allclose(a.R, b.R, atol=1e-12)
        np.testing.assert_allclose(a.losses, b.losses, atol=1e-12)

    def test_dim_mismatch(self, embedded_fixture):
        plan = compile_plan(embedded_fixture, 2, "latent", D_E)
        with pytest.raises(ValueError):
            run_forward(small_params(8, D_E), plan)


class TestAnonymity:
    @pytest.mark.parametrize("backend", ["numba", "numpy"])
    def test_rename_is_bitwise_invariant(self, embedded_fixture, backend):
        p = small_params(256, D_E, 0.1, 4)
        ids = sorted(embedded_fixture.nodes)
        mapping = {old: f"z{len(ids) - i:02d}" for i, old in enumerate(ids)}
        renamed = rename_nodes(embedded_fixture, mapping)
        be = get_backend(backend)
        a = forward_tool(p, embedded_fixture, TrainConfig(), be)
        b = forward_tool(p, renamed, TrainConfig(), be)
        assert a.total_loss == b.total_loss
        for old, new in mapping.items():
            assert a.latents[old].tobytes() == b.latents[new].tobytes()

    def test_duplicate_subtrees_identical(self):
        nodes = {"r": ToolNode("r", "root text", 0),
                 "a": ToolNode("a", "branch", 1), "b": ToolNode("b", "branch", 1),
                 "a1": ToolNode("a1", "leaf one", 2), "b1": ToolNode("b1", "leaf one", 2),
                 "a2": ToolNode("a2", "leaf two", 2), "b2": ToolNode("b2", "leaf two", 2)}
        edges = [ToolEdge("a", "r"), ToolEdge("b", "r"), ToolEdge("a1", "a"),
                 ToolEdge("a2", "a"), ToolEdge("b1", "b"), ToolEdge("b2", "b"),
                 ToolEdge("a1", "a2", SIBLING), ToolEdge("b1", "b2", SIBLING)]
        g = embed_graph(ToolGraph("dup", nodes, edges, "r"), EmbedderConfig(dim=16), 4)
        trace = forward_tool(small_params(16, 4, 0.3), g, TrainConfig(d_v=16, d_e=4))
        loss = {par: c for par, _, c in trace.contributions}
        assert loss["a"] == loss["b"]
        for x, y in (("a", "b"), ("a1", "b1"), ("a2", "b2")):
            assert trace.latents[x].tobytes() == trace.latents[y].tobytes()
