"""Command-line entry point: ``affrec <command> ...``.

Usage errors exit with status 2, runtime errors with status 1; both print a
one-line diagnostic on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import urllib.error
import urllib.request

from .cot_engine import AblationFlags

log = logging.getLogger("affrec")


class UsageError(Exception):
    """A flag value argparse accepted but the command cannot use."""


def _parse(what: str, fn, *a):
    try:
        return fn(*a)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid {what}: {exc}") from None


def _corpus(args):
    from .data_eval import Corpus, load_corpus
    from .synth import generate_synthetic_corpus

    if getattr(args, "data", None):
        return load_corpus(args.data)
    return Corpus.from_synthetic(generate_synthetic_corpus(args.seed, args.users, args.pois, args.checkins))


def _add_source(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data source (a corpus directory, or a synthetic corpus)")
    g.add_argument("--data", metavar="DIR", help="directory with pois/reviews/checkins .jsonl")
    g.add_argument("--seed", type=int, default=0, help="synthetic corpus seed (default 0)")
    g.add_argument("--users", type=int, default=50, help="synthetic users (default 50)")
    g.add_argument("--pois", type=int, default=200, help="synthetic POIs (default 200)")
    g.add_argument("--checkins", type=int, default=5000, help="synthetic check-ins (default 5000)")


def cmd_ingest(args) -> int:
    from .data_eval import load_corpus, ten_core_filter

    corpus = load_corpus(args.dir)
    kept = ten_core_filter(corpus.checkins)
    print(json.dumps({
        "pois": len(corpus.pois),
        "reviews": sum(len(p.content.reviews) for p in corpus.pois.values()),
        "checkins": len(corpus.checkins),
        "users": len({c.user_id for c in corpus.checkins}),
        "checkins_after_10core": len(kept),
        "users_after_10core": len({c.user_id for c in kept}),
        "pois_after_10core": len({c.poi_id for c in kept}),
    }, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    from .data_eval import Corpus, save_corpus
    from .synth import generate_synthetic_corpus

    s = generate_synthetic_corpus(args.seed, args.users, args.pois, args.checkins)
    save_corpus(Corpus.from_synthetic(s), args.out)
    print(json.dumps({"out": args.out, "pois": len(s.pois), "checkins": len(s.checkins),
                      "users": args.users, "seed": args.seed}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    from .data_eval import format_table, prepare_split, run_baseline, run_eval

    _parse("--alpha", _check_alpha, args.alpha)
    corpus = _corpus(args)
    split = prepare_split(corpus, args.split, args.split_seed)
    # prepare_split has already asserted the configuration's invariants
    flags = _parse("--ablation", AblationFlags.parse, args.ablation)
    reports = [run_eval(corpus, args.split, flags, args.alpha, split=split)]
    if args.baseline:
        reports.append(run_baseline(corpus, args.split, split=split))
    if args.format == "table":
        print(format_table(reports))
    else:
        out = reports[0].to_dict()
        out["split_invariants"] = "ok"
        if args.baseline:
            out["baseline"] = reports[1].to_dict()
        print(json.dumps(out, sort_keys=True))
    return 0


def cmd_sweep_alpha(args) -> int:
    from .data_eval import ALPHA_SWEEP, reports_csv, sweep_alpha

    reports = sweep_alpha(_corpus(args), args.split, ALPHA_SWEEP)
    sys.stdout.write(reports_csv(reports, key="alpha"))
    return 0


def cmd_ablation_grid(args) -> int:
    from .data_eval import ABLATION_SETS, ablation_grid, reports_csv

    sets = args.sets.split(";") if args.sets else ABLATION_SETS
    for f in sets:
        _parse("--sets", AblationFlags.parse, f)
    sys.stdout.write(reports_csv(ablation_grid(_corpus(args), args.split, sets, args.alpha)))
    return 0


def _check_alpha(a: float) -> None:
    if not 0.0 < a <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")


def _service_config(args):
    from .pipeline import ServiceConfig

    overrides = {k: getattr(args, k, None) for k in ("k", "alpha", "backend", "backend_url", "fail_mode",
                                                      "data_dir", "listen_addr", "ablation", "cache_capacity",
                                                      "prefetch_workers")}
    return _parse("configuration", ServiceConfig.load, getattr(args, "config", None), None, overrides)


def _add_service_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="key=value config file")
    p.add_argument("--k", type=int, help="queries per context (default 5)")
    p.add_argument("--alpha", type=float, help="uncertainty discount (default 0.5)")
    p.add_argument("--backend", choices=("rule", "remote"), help="reasoner backend (default rule)")
    p.add_argument("--backend-url", dest="backend_url", help="completion endpoint for the remote backend")
    p.add_argument("--fail-mode", dest="fail_mode", choices=("open", "closed"), help="backend failure policy")
    p.add_argument("--data-dir", dest="data_dir", help="corpus directory (synthetic seed 0 when unset)")
    p.add_argument("--ablation", help="ablation flags, e.g. A1,A3")
    p.add_argument("--cache-capacity", dest="cache_capacity", type=int, help="LRU capacity (default 1e6)")
    p.add_argument("--prefetch-workers", dest="prefetch_workers", type=int, help="prefetch threads (default 4)")


def _recommender(cfg, start_prefetch=True):
    from .data_eval import Corpus, load_corpus
    from .pipeline import recommender_from_corpus
    from .synth import generate_synthetic_corpus

    if cfg.data_dir:
        corpus = load_corpus(cfg.data_dir)
    else:
        log.info("no data_dir configured; serving the seed-0 synthetic corpus")
        corpus = Corpus.from_synthetic(generate_synthetic_corpus(0))
    return recommender_from_corpus(corpus, cfg, start_prefetch=start_prefetch)


def cmd_recommend(args) -> int:
    from .domain import Context

    cfg = _service_config(args)
    ctx = _parse("--context-json", lambda t: Context.from_dict(json.loads(t)), args.context_json)
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    rec = _recommender(cfg, start_prefetch=False)
    cands = args.candidates.split(",") if args.candidates else None
    out = rec.recommend(args.user, ctx, cands, args.n).to_dict()
    if not args.explain:
        for r in out["ranked"]:
            r.pop("explanation")
    print(json.dumps(out, sort_keys=True, indent=None if args.compact else 2))
    return 0


def cmd_demo_impossibility(args) -> int:
    from .ranking import demonstrate_impossibility, remark_identity_error

    if args.dim < 2:
        raise UsageError("--dim must be >= 2")
    rep = demonstrate_impossibility(args.dim)
    print(rep.to_json())
    print(f"loss {rep.compromise_loss:.10f}")
    print(f"remark identity max error {remark_identity_error():.3e}")
    return 0


def cmd_cache_stats(args) -> int:
    try:
        with urllib.request.urlopen(args.url.rstrip("/") + "/metrics", timeout=args.timeout) as resp:
            print(json.dumps(json.loads(resp.read()), sort_keys=True))
    except (urllib.error.URLError, OSError) as exc:
        raise RuntimeError(f"cannot reach service at {args.url}: {exc}") from None
    return 0


def cmd_serve(args) -> int:
    from .service import serve_forever

    cfg = _service_config(args)
    rec = _recommender(cfg)
    serve_forever(rec, cfg.listen_addr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affrec", description="Context-conditioned affordance POI recommender.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("ingest", help="load and validate a JSONL corpus, report 10-core statistics")
    s.add_argument("dir", help="directory with pois.jsonl, reviews.jsonl, checkins.jsonl")
    s.set_defaults(fn=cmd_ingest)

    s = sub.add_parser("synth", help="write a synthetic corpus with planted affordances")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--users", type=int, default=50)
    s.add_argument("--pois", type=int, default=200)
    s.add_argument("--checkins", type=int, default=5000)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("eval", help="evaluate on one split against the full catalog")
    s.add_argument("--split", choices=("standard", "cold-start", "context-shift"), default="standard")
    s.add_argument("--ablation", default="", help="comma-separated flags (A1..A8, A11); empty for full")
    s.add_argument("--alpha", type=float, default=0.5, help="uncertainty discount (default 0.5)")
    s.add_argument("--split-seed", dest="split_seed", type=int, default=0, help="cold-POI sampling seed")
    s.add_argument("--baseline", action="store_true", help="also run the static bilinear baseline")
    s.add_argument("--format", choices=("json", "table"), default="json")
    _add_source(s)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("sweep-alpha", help="CSV of metrics for alpha in {0.1,0.25,0.5,0.75,1.0}")
    s.add_argument("--split", choices=("standard", "cold-start", "context-shift"), default="standard")
    _add_source(s)
    s.set_defaults(fn=cmd_sweep_alpha)

    s = sub.add_parser("ablation-grid", help="CSV of metrics for each ablation flag set")
    s.add_argument("--split", choices=("standard", "cold-start", "context-shift"), default="standard")
    s.add_argument("--sets", help="semicolon-separated flag sets (default: full and each flag alone)")
    s.add_argument("--alpha", type=float, default=0.5)
    _add_source(s)
    s.set_defaults(fn=cmd_ablation_grid)

    s = sub.add_parser("recommend", help="rank POIs for one user and context")
    s.add_argument("--user", required=True)
    s.add_argument("--context-json", dest="context_json", required=True,
                   help='e.g. {"timestamp": 1704483000, "social_situation": "friends"}')
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--candidates", help="comma-separated POI ids (default: whole catalog)")
    s.add_argument("--explain", action="store_true", help="include rendered explanations")
    s.add_argument("--compact", action="store_true", help="single-line JSON")
    _add_service_flags(s)
    s.set_defaults(fn=cmd_recommend)

    s = sub.add_parser("demo-impossibility", help="static-embedding compromise loss for two conflicting contexts")
    s.add_argument("--dim", type=int, required=True, help="embedding dimension d >= 2")
    s.set_defaults(fn=cmd_demo_impossibility)

    s = sub.add_parser("cache-stats", help="print a running service's cache metrics")
    s.add_argument("--url", default="http://127.0.0.1:8080")
    s.add_argument("--timeout", type=float, default=5.0)
    s.set_defaults(fn=cmd_cache_stats)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--listen", dest="listen_addr", help="host:port (default 127.0.0.1:8080)")
    _add_service_flags(s)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except UsageError as exc:
        print(f"affrec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"affrec {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
