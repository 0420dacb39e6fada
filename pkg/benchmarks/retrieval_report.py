"""Compare retrieval from description vectors against trained structural vectors.

    python benchmarks/retrieval_report.py [--epochs 50] [--trials 200]

For seeded paraphrase queries of random nodes, prints how often the source
node lands in the top-k of the ``initial`` records and of the
``structural`` records.  Informational only.
"""
import argparse

from hgembed.config import TrainConfig
from hgembed.embedder import embed_graph
from hgembed.rng import Xoshiro256
from hgembed.store import VectorStore, initial_records
from hgembed.synth import CorpusSpec, gen_corpus, paraphrase_query
from hgembed.train import export_embeddings, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--fraction", type=float, default=0.7)
    args = ap.parse_args()

    cfg = TrainConfig(epochs=args.epochs)
    corpus = [embed_graph(g, cfg.embedder(), cfg.d_e) for g in gen_corpus(CorpusSpec())]
    rep = train(corpus, cfg)
    store = VectorStore(r for g in corpus for r in initial_records(g, with_queries=False))
    for r in export_embeddings(corpus, rep.params, cfg):
        store.insert(r)

    nodes = [(g, nid) for g in corpus for nid in sorted(g.nodes)]
    rng = Xoshiro256.stream(cfg.seed, 77)
    hits = {"initial": 0, "structural": 0}
    for trial in range(args.trials):
        g, nid = nodes[rng.below(len(nodes))]
        q = paraphrase_query(g.nodes[nid], trial, args.fraction)
        for kind in hits:
            top = store.query(q, args.k, cfg.embedder(), kind).hits
            hits[kind] += any((h.tool_name, h.node_id) == (g.name, nid) for h in top)
    print(f"{len(corpus)} tools, {len(nodes)} nodes, {args.epochs} epochs, "
          f"final mean loss {rep.loss_history[-1]:.3f}" if rep.loss_history else "")
    for kind, n in hits.items():
        print(f"{kind:10s} top-{args.k}: {n}/{args.trials} ({100 * n / args.trials:.1f}%)")


if __name__ == "__main__":
    main()
