"""Structural embeddings of hierarchical tool definitions.

Tools are layered DAGs of textual subtool descriptions.  A shared recurrent
encoder is trained to predict each parent's description embedding from
messages passed among its children, bottom-up; the resulting node latents
back an exact cosine-similarity retrieval store.
"""
__version__ = "0.1.0"

from .config import TrainConfig
from .embedder import (EmbedderConfig, embed_graph, encode_layer, hash_embed,
                       load_external_embeddings, tokenize)
from .fixture import canonical_fixture
from .hgnn import (EncoderParams, ForwardTrace, HiddenState, aggregate, forward_group,
                   forward_tool, message_input, rnn_cell)
from .store import EmbeddingRecord, QueryResult, VectorStore, cosine, query_topk
from .synth import CorpusSpec, gen_corpus, paraphrase_query
from .toolgraph import (ToolEdge, ToolGraph, ToolNode, ValidationReport, children_of,
                        depth_partition, parse_tool_document, to_document, validate)
from .train import (TrainReport, export_embeddings, finite_diff_gradient, gradient,
                    init_params, train)
