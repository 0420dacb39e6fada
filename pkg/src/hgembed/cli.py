"""``hgembed`` command line.

Exit codes: 0 success, 1 domain violation, 2 I/O failure, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .config import TrainConfig
from .embedder import EmbedderConfig, EmbeddingError, embed_graph, load_external_embeddings
from .store import StoreError, VectorStore, initial_records
from .synth import CorpusSpec, corpus_files, gen_corpus, write_corpus
from .toolgraph import InvalidGraphError, ToolDocumentError, load_tool_file, validate
from .train import (TrainingDiverged, export_embeddings, gradcheck_suite, init_params,
                    load_params, save_params, trace_corpus, train)

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3
DOMAIN_ERRORS = (ToolDocumentError, InvalidGraphError, EmbeddingError, StoreError, ValueError)


def _resolve_config(args) -> TrainConfig:
    cfg = TrainConfig.from_json_file(args.config) if getattr(args, "config", None) \
        else TrainConfig()
    return cfg.replace(seed=getattr(args, "seed", None), propagation=getattr(args, "mode", None),
                       epochs=getattr(args, "epochs", None))


def _write_run_manifest(path: Path, command: str, cfg: dict | None, inputs, outputs,
                        status: int, started: float) -> None:
    doc = {
        "command": command,
        "config": cfg,
        "inputs": [str(x) for x in inputs],
        "outputs": [str(x) for x in outputs],
        "exit_status": status,
        "seconds": round(time.perf_counter() - started, 6),
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _load_embedded_corpus(path, cfg: TrainConfig, embeddings=None):
    graphs = [load_tool_file(f) for f in corpus_files(path)]
    external = load_external_embeddings(embeddings, dim=cfg.d_v) if embeddings else None
    return [embed_graph(g, cfg.embedder(), cfg.d_e, external) for g in graphs]


# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    status = EXIT_OK
    for raw in args.paths:
        try:
            files = corpus_files(raw)
        except FileNotFoundError as exc:
            print(f"{raw}:IO::{exc}", file=sys.stderr)
            return EXIT_IO
        for f in files:
            try:
                g = load_tool_file(f)
            except OSError as exc:
                print(f"{f}:IO::{exc}", file=sys.stderr)
                return EXIT_IO
            except ToolDocumentError as exc:
                print(f"{f}:{exc.code}:{exc.context}:{exc}")
                status = EXIT_DOMAIN
                continue
            for v in validate(g).violations:
                print(f"{f}:{v.code}:{v.subject_id}:{v.message}")
                status = EXIT_DOMAIN
    return status


def cmd_gen_corpus(args) -> int:
    started = time.perf_counter()
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec = CorpusSpec.from_dict(json.load(fh))
    else:
        spec = CorpusSpec()
    if args.seed is not None:
        spec = CorpusSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = Path(args.out)
    files = write_corpus(gen_corpus(spec), out, spec)
    _write_run_manifest(out / "run_manifest.json", "gen-corpus", spec.to_dict(),
                        [args.spec] if args.spec else [], files, EXIT_OK, started)
    print(f"wrote {len(files)} tools to {out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    started = time.perf_counter()
    cfg = _resolve_config(args)
    corpus = _load_embedded_corpus(args.corpus, cfg, args.embeddings)
    store = VectorStore()
    for g in corpus:
        for rec in initial_records(g, with_queries=not args.no_queries, cfg=cfg.embedder()):
            store.insert(rec)
    out = Path(args.out)
    store.save(out)
    _write_run_manifest(Path(str(out) + ".run_manifest.json"), "embed", cfg.to_dict(),
                        [args.corpus], [out], EXIT_OK, started)
    print(f"wrote {len(store)} records to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg = _resolve_config(args)
    corpus = _load_embedded_corpus(args.corpus, cfg, args.embeddings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(epoch, mean):
        if args.verbose:
            print(f"epoch {epoch}\tmean loss {mean:.9f}", file=sys.stderr)

    try:
        report = train(corpus, cfg, on_epoch=progress)
    except TrainingDiverged as exc:
        print(f"DIVERGED at epoch {exc.epoch}", file=sys.stderr)
        _write_run_manifest(out / "run_manifest.json", "train", cfg.to_dict(), [args.corpus],
                            [], EXIT_DIVERGED, started)
        return EXIT_DIVERGED
    save_params(report.params, out / "params.bin")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    VectorStore(export_embeddings(corpus, report.params, cfg)).save(out / "embeddings.tgvs")
    outputs = ["params.bin", "report.json", "embeddings.tgvs"]
    _write_run_manifest(out / "run_manifest.json", "train", cfg.to_dict(), [args.corpus],
                        outputs, EXIT_OK, started)
    if report.loss_history:
        print(f"trained {len(corpus)} tools for {cfg.epochs} epochs; "
              f"mean loss {report.loss_history[0]:.6f} -> {report.loss_history[-1]:.6f}")
    else:
        print("epochs=0: wrote initial parameters")
    return EXIT_OK


def cmd_export(args) -> int:
    started = time.perf_counter()
    cfg = _resolve_config(args)
    corpus = _load_embedded_corpus(args.corpus, cfg, args.embeddings)
    params = load_params(args.params) if args.params else init_params(cfg)
    if params.d_h != cfg.d_v or params.d_e != cfg.d_e:
        raise ValueError(f"parameter file dims (d_h={params.d_h}, d_e={params.d_e}) do not "
                         f"match config (d_v={cfg.d_v}, d_e={cfg.d_e})")
    out = Path(args.out)
    VectorStore(export_embeddings(corpus, params, cfg)).save(out)
    outputs = [out]
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for name, trace in trace_corpus(corpus, params, cfg):
                for parent, kids, loss in trace.contributions:
                    fh.write(f"{name}\t{parent}\t{','.join(kids)}\t{loss!r}\n")
        outputs.append(args.trace)
    _write_run_manifest(Path(str(out) + ".run_manifest.json"), "export", cfg.to_dict(),
                        [args.corpus, args.params or "<init>"], outputs, EXIT_OK, started)
    print(f"wrote structural embeddings to {out}")
    return EXIT_OK


def cmd_query(args) -> int:
    store = VectorStore.load(args.store)
    if len(store) == 0:
        print("store is empty", file=sys.stderr)
        return EXIT_DOMAIN
    base = TrainConfig.from_json_file(args.config) if args.config else TrainConfig()
    emb = EmbedderConfig(store.dim, base.hash_seed, base.lowercase)
    for line in store.query(args.text, args.k, emb, args.filter).lines():
        print(line)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    res = gradcheck_suite(args.instances, args.seed, args.eps, args.tol)
    for msg in res.failures:
        print(msg)
    print(f"max relative error: {res.max_rel_error:.3e} over {res.instances} instances")
    return EXIT_OK if res.ok else EXIT_DOMAIN


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hgembed", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mode=True):
        p.add_argument("--config", help="JSON training/embedder config")
        p.add_argument("--seed", type=int)
        p.add_argument("--embeddings", help="external vectors, id<TAB>v1,v2,...")
        if mode:
            p.add_argument("--mode", choices=("latent", "initial"))

    p = sub.add_parser("validate", help="parse and validate tool documents")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-corpus", help="write a synthetic corpus")
    p.add_argument("spec", nargs="?", help="JSON corpus spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("embed", help="store initial (description) embeddings")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--no-queries", action="store_true", help="skip query-text records")
    common(p, mode=False)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train the shared encoder")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="store structural embeddings for a corpus")
    p.add_argument("corpus")
    p.add_argument("--params", help="params.bin (default: seeded initial parameters)")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="also write per-group losses here")
    common(p)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("query", help="top-k cosine search")
    p.add_argument("store")
    p.add_argument("text")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--filter", choices=("initial", "structural"))
    p.add_argument("--config")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"DIVERGED at epoch {exc.epoch}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
