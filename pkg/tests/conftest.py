import numpy as np
import pytest

from hgembed.config import TrainConfig
from hgembed.embedder import EmbedderConfig, embed_graph
from hgembed.fixture import canonical_fixture


@pytest.fixture(scope="session")
def fixture_graph():
    return canonical_fixture()


@pytest.fixture(scope="session")
def embedded_fixture(fixture_graph):
    return embed_graph(fixture_graph, EmbedderConfig(), 16)


def random_params(d_v, d_e, seed=0, scale=0.1):
    from hgembed.hgnn import EncoderParams
    rng = np.random.default_rng(seed)
    return EncoderParams(rng.uniform(-scale, scale, (d_v, d_v)),
                         rng.uniform(-scale, scale, (d_v, 2 * d_v + d_e)),
                         rng.uniform(-scale, scale, d_v))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
