"""Operator entry points: serve the API, chat on stdin, train models,
generate corpora, score parsing backends, benchmark explanations.

Settings resolve in documented precedence order: built-in defaults, then
the config file, then command-line flags, then the environment (TTM_CONFIG
picks the config file even when --config is given; TTM_PORT wins the
port). Data artifacts go to --out paths or stdout; diagnostics go to
stderr. Exit codes: 0 on success, 2 for bad flags, 1 for runtime failures.

The REPL and the HTTP service answer turns through the same ChatService
method, so a transcript replays identically through either.
"""
import argparse
import csv
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import TtmError
from .service import (
    build_corpus,
    create_app,
    load_config,
    load_service,
    load_split,
    locate_path,
    obtain_model,
    resolve_settings,
    sample_budget,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttm",
        description="Talk to a tabular model: serve, chat, train, and benchmark.",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")

    def common(p):
        p.add_argument("--config", help="path to a key/value config file")
        p.add_argument("--seed", type=int, help="override the configured seed")

    p = sub.add_parser("serve", help="run the HTTP conversation service")
    common(p)
    p.add_argument("--port", type=int, help="override the configured port")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--persist-dir", help="override the session log directory")

    p = sub.add_parser("repl", help="line-oriented conversation on stdin/stdout")
    common(p)

    p = sub.add_parser("train-model", help="train the model and write it to disk")
    common(p)
    p.add_argument("--out", required=True, help="where to write the model file")

    p = sub.add_parser("gen-data", help="expand the template pack into a corpus")
    common(p)
    p.add_argument("--out", required=True, help="where to write the corpus TSV")

    p = sub.add_parser("eval-parses", help="score a parsing backend on a gold file")
    common(p)
    p.add_argument("--gold", required=True, help="tab-separated utterance/parse file")
    p.add_argument("--backend", choices=("nn", "external"), default="nn")
    p.add_argument("--endpoint", help="completion endpoint for --backend external")
    p.add_argument("--out", help="report CSV path (default: stdout)")
    p.add_argument("--failures", help="also write per-miss rows to this CSV")

    p = sub.add_parser(
        "bench-explanations", help="PGI/PGU of every explanation method"
    )
    common(p)
    p.add_argument("--rows", type=int, default=20, help="test rows to sample")
    p.add_argument("--out", help="benchmark CSV path (default: stdout)")

    return parser


def _resolved(args, env, extra: Optional[dict] = None):
    """Settings plus the config file's directory for path resolution."""
    config_path = env.get("TTM_CONFIG") or getattr(args, "config", None)
    values = load_config(config_path) if config_path else {}
    overrides = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    settings = resolve_settings(values, overrides, env)
    base_dir = str(Path(config_path).resolve().parent) if config_path else None
    return settings, base_dir


def _emit_csv(write, out: Optional[str], stdout) -> None:
    """Write a CSV artifact to a path, or through a temp file to stdout."""
    if out:
        write(out)
        return
    with tempfile.NamedTemporaryFile("r", suffix=".csv", delete=True) as tmp:
        write(tmp.name)
        stdout.write(Path(tmp.name).read_text())


# ---------------------------------------------------------------------------
# verbs


def _cmd_serve(args, env, stdin, stdout, stderr) -> int:
    import uvicorn

    extra = {"port": args.port}
    if args.persist_dir is not None:
        extra["persist_dir"] = args.persist_dir
    settings, base_dir = _resolved(args, env, extra)
    service = load_service(settings, base_dir)
    app = create_app(service)
    print(
        f"serving {settings.dataset} on {args.host}:{settings.port}",
        file=stderr,
    )
    uvicorn.run(app, host=args.host, port=settings.port, log_level="warning")
    return 0


def _cmd_repl(args, env, stdin, stdout, stderr) -> int:
    settings, base_dir = _resolved(args, env)
    # the REPL is ephemeral; only the served API persists sessions
    settings = replace(settings, persist_dir="")
    service = load_service(settings, base_dir)
    session_id = service.create_session(settings.dataset)
    interactive = hasattr(stdin, "isatty") and stdin.isatty()
    if interactive:
        print("Ask about the data or the model; exit with 'quit'.", file=stderr)
    while True:
        if interactive:
            stderr.write("> ")
            stderr.flush()
        line = stdin.readline()
        if not line:
            break
        text = line.strip()
        if not text:
            continue
        if text in ("exit", "quit"):
            break
        doc = service.post_message(session_id, text)
        print(doc["response"], file=stdout)
        print(f"[parse] {doc['parse'] or '(none)'}", file=stdout)
    return 0


def _cmd_train_model(args, env, stdin, stdout, stderr) -> int:
    from .models import save_model, train_gbt

    settings, base_dir = _resolved(args, env)
    train = load_split(settings, "train", base_dir)
    model = train_gbt(train)
    save_model(model, args.out)
    print(f"trained on {len(train.ids)} instances; wrote {args.out}", file=stderr)
    return 0


def _cmd_gen_data(args, env, stdin, stdout, stderr) -> int:
    from .datagen import write_corpus

    settings, base_dir = _resolved(args, env)
    train = load_split(settings, "train", base_dir)
    pairs = build_corpus(train.schema, train)
    write_corpus(pairs, args.out)
    print(f"wrote {len(pairs)} pairs to {args.out}", file=stderr)
    return 0


def _cmd_eval_parses(args, env, stdin, stdout, stderr) -> int:
    from .dialogue import ExternalBackend, ExternalBackendConfig, NearestNeighborBackend
    from .evalharness import (
        evaluate_backend, read_gold, split_gold, write_failures, write_report,
    )

    settings, base_dir = _resolved(args, env)
    train = load_split(settings, "train", base_dir)
    corpus = build_corpus(train.schema, train)
    backend = NearestNeighborBackend(corpus, train.schema)
    if args.backend == "external":
        endpoint = args.endpoint or settings.external_endpoint
        if not endpoint:
            raise TtmError("--backend external requires --endpoint")
        backend = ExternalBackend(
            ExternalBackendConfig(endpoint), corpus, train.schema,
            index=backend.index,
        )

    gold = read_gold(locate_path(args.gold, base_dir))
    if any(pair.split is None for pair in gold):
        gold = split_gold(gold, (p.parse for p in corpus), backend.grammar)
    report = evaluate_backend(backend, gold, name=args.backend)

    _emit_csv(lambda path: write_report(report, path), args.out, stdout)
    if args.failures:
        write_failures(report, args.failures)
    overall = report.rows[0]
    print(f"scored {overall[1]} pairs, overall accuracy {overall[2]:.4f}", file=stderr)
    return 0


def _cmd_bench_explanations(args, env, stdin, stdout, stderr) -> int:
    from .engine import Engine
    from .explain import (
        SURROGATE_WIDTHS, default_candidates, pgi_pgu, select_explanation,
    )

    settings, base_dir = _resolved(args, env)
    train = load_split(settings, "train", base_dir)
    test = load_split(settings, "test", base_dir)
    model = obtain_model(settings, train, base_dir)
    engine = Engine(
        model, train, test,
        mode=settings.mode, seed=settings.seed,
        n_samples=sample_budget(settings),
    )

    labels = [f"surrogate-linear width {w:g}" for w in SURROGATE_WIDTHS]
    labels += ["kernel-shapley", "selected"]
    candidates = default_candidates(engine.background)

    rng = np.random.default_rng(settings.seed)
    k = min(args.rows, len(test.ids))
    picked = np.sort(rng.choice(len(test.ids), size=k, replace=False))

    gaps: dict = {label: [] for label in labels}
    for i in picked:
        x = test.row(int(i))
        # zip stops at the 5 candidates; "selected" is scored separately
        for label, cand in zip(labels, candidates):
            res = cand(model, x, engine.space, engine.cfg)
            gaps[label].append(pgi_pgu(res.phi, model, x, engine.space, engine.cfg))
        chosen = select_explanation(model, x, candidates, engine.space, engine.cfg)
        gaps["selected"].append(
            pgi_pgu(chosen.phi, model, x, engine.space, engine.cfg)
        )

    def write(path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "pgi", "pgu", "n"])
            for label in labels:
                pgis = [g[0] for g in gaps[label]]
                pgus = [g[1] for g in gaps[label]]
                writer.writerow([
                    label,
                    f"{float(np.mean(pgis)):.4f}",
                    f"{float(np.mean(pgus)):.4f}",
                    len(gaps[label]),
                ])

    _emit_csv(write, args.out, stdout)
    print(f"benchmarked {k} rows at {engine.cfg.n_samples} samples", file=stderr)
    return 0


_HANDLERS = {
    "serve": _cmd_serve,
    "repl": _cmd_repl,
    "train-model": _cmd_train_model,
    "gen-data": _cmd_gen_data,
    "eval-parses": _cmd_eval_parses,
    "bench-explanations": _cmd_bench_explanations,
}


def main(argv=None, env=None, stdin=None, stdout=None, stderr=None) -> int:
    env = os.environ if env is None else env
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr

    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.verb](args, env, stdin, stdout, stderr)
    except TtmError as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
