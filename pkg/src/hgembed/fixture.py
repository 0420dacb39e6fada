"""The portfolio-optimizer tool: 1 root and 9 subtools over 3 levels.

Only the node descriptions are known verbatim; the wiring below is an
assumption that follows what each description consumes and produces.
F3 feeds both the stock-market module (B2) and the optimizer (C2).
"""
from __future__ import annotations

from .toolgraph import CHILD_TO_PARENT, SIBLING, ToolEdge, ToolGraph, ToolNode

DESCRIPTIONS = {
    "A1": (
        "An LLM powered optimal portfolio optimizer. For the given date period, it fetches "
        "public media data from the predefined sources, hourly stock market data and daily "
        "macroeconomic indicators. An LLM with specific predetermined prompt templates "
        "produces a set of KPIs related to general market sentiment. Also, the public news "
        "are scanned to detect mentions of specific stocks. Later, these intermediate KPIs "
        "are gathered and an RL based portfolio optimizer produces the output."
    ),
    "A2": (
        "An LLM powered public media analyzer. For the given period of dates and set of "
        "parameters, it fetches and normalizes the textual data using specific APIs. The "
        "voluminous data is processed in a multi-context fashion by referencing to "
        "embeddings in vector databases. First, it generates KPIs related to general market "
        "sentiment. Second, it generates a list of stocks mentioned in the media along with "
        "the KPIs related to their perceptions."
    ),
    "B2": (
        "A python module which fetches hourly stock market data and macroeconomic indicators "
        "using a set of APIs for the given time period and produces a set of intrinsic KPIs."
    ),
    "C2": (
        "A python module which takes the KPIs related to macroeconomics and stock market in "
        "a given time period and performs a portfolio optimization using reinforcement "
        "learning."
    ),
    "A3": (
        "This component fetches and normalizes textual public data coming from newspapers, "
        "social media and similar sources, and implements complex NLP processes."
    ),
    "B3": (
        "An LLM powered module which analyzes public media data, incorporates a complex "
        "transformer based NLP model which embeds voluminous data to embeddings in a vector "
        "database in chunks, then processes it with an LLM in a multicontext fashion, to "
        "generate KPIs related to overall market sentiment in given time period."
    ),
    "C3": (
        "An LLM powered module which analyzes public media data, incorporates a complex "
        "transformer based NLP model which embeds voluminous data to embeddings in a vector "
        "database in chunks, then processes it with an LLM in a multicontext fashion, to "
        "generate list of KPIs related to stocks mentioned in the news as key-value pairs in "
        "given time period."
    ),
    "D3": (
        "A component which takes a list of key-value pairs indicating public sentiment of "
        "multiple stocks and processes their stock market data purposefully, to generate new "
        "intermediate KPIs."
    ),
    "E3": (
        "A component which fetches hourly open-close-low-high candlestick stock market data "
        "using APIs and generates intermediate KPIs for portfolio optimization algorithm."
    ),
    "F3": (
        "A module that acquires intermediate KPIs related to general stock market data and "
        "highlighted specific stocks to generate further intrinsic features to feed the "
        "portfolio optimizer."
    ),
}

# illustrative user intention for the top-level tool
ROOT_QUERY = "Optimize my stock portfolio for the given date period with these criteria"

GROUPS = {
    "A1": ("A2", "B2", "C2"),
    "A2": ("A3", "B3", "C3"),
    "B2": ("D3", "E3", "F3"),
    "C2": ("F3",),
}


def canonical_fixture() -> ToolGraph:
    nodes = {}
    for nid, desc in DESCRIPTIONS.items():
        depth = int(nid[1]) - 1
        queries = (ROOT_QUERY,) if nid == "A1" else ()
        nodes[nid] = ToolNode(nid, desc, depth, queries)
    edges = []
    for parent, kids in GROUPS.items():
        edges.extend(ToolEdge(k, parent, CHILD_TO_PARENT) for k in kids)
    for parent, kids in GROUPS.items():
        edges.extend(ToolEdge(a, b, SIBLING) for a, b in zip(kids, kids[1:]))
    return ToolGraph("portfolio_optimizer", nodes, tuple(edges), "A1")
