"""Command-line entry point.

Term thresholds on the command line and in summaries are 1-based, matching
the term IDs of the bag-of-words files: ``--tth t`` puts terms ``1..t-1`` in
Region 1. The library itself works with 0-based IDs (``t_th = t - 1``).

Exit codes: 0 success, 1 configuration error, 2 IO or parse error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics
from ._parallel import default_workers
from .cluster import ALGORITHMS, ConfigError, InvariantViolation, RunConfig, RunResult, run
from .corpus import CorpusError, build_features, file_sha256, read_bag_of_words, read_cache, write_bag_of_words, write_cache
from .index import build_inverted_index
from .synth import generate_raw

log = logging.getLogger("esicp")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _parse_grid(text):
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"--vth-grid expects lo:hi:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise ConfigError("--vth-grid needs step > 0 and hi >= lo")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(float(v) for v in lo + step * np.arange(n))


def _load(args):
    """Corpus from --cache or --input; returns (corpus, path, sha256, raw or None)."""
    if getattr(args, "cache", None) and Path(args.cache).exists() and not getattr(args, "input", None):
        return read_cache(args.cache), args.cache, file_sha256(args.cache), None
    if getattr(args, "input", None):
        raw = read_bag_of_words(args.input)
        return build_features(raw), args.input, file_sha256(args.input), raw
    if getattr(args, "cache", None):
        return read_cache(args.cache), args.cache, file_sha256(args.cache), None
    raise ConfigError("need --input or --cache")


def _config(args, algorithm=None) -> RunConfig:
    if args.k is None:
        raise ConfigError("--k is required")
    algo = algorithm or args.algorithm
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}")
    if args.tth is not None and args.tth_frac is not None:
        raise ConfigError("--tth and --tth-frac are mutually exclusive")
    if args.tth is not None and args.tth < 1:
        raise ConfigError("--tth must be a 1-based term ID")
    policy = None
    if args.estimate_params:
        policy = "estimate"
    elif args.tth is not None or args.tth_frac is not None or args.vth is not None:
        policy = "fixed"
    return RunConfig(
        k=args.k,
        seed=args.seed,
        algorithm=algo,
        max_iters=args.max_iters,
        param_policy=policy if algo not in ("mivi", "divi", "icp") else None,
        t_th=None if args.tth is None else args.tth - 1,
        v_th=args.vth,
        tth_frac=args.tth_frac,
        vth_grid=None if args.vth_grid is None else _parse_grid(args.vth_grid),
        smin_frac=args.smin_frac,
        workers=args.threads if args.threads is not None else default_workers(),
    )


def _record_rows(result: RunResult, n, k):
    rows = []
    for rec in result.iterations:
        rows.append(
            {
                "iteration": rec.iteration,
                "mult": rec.mult,
                "mult_region1": rec.mult_region1,
                "mult_region2": rec.mult_region2,
                "mult_region3": rec.mult_region3,
                "mult_bound": rec.mult_bound,
                "sqrt": rec.sqrt,
                "candidates": rec.candidates,
                "cpr": repr(rec.cpr(n, k)),
                "changes": rec.changes,
                "n_moving": rec.n_moving,
                "objective": repr(rec.objective),
                "t_th": "" if rec.t_th is None else rec.t_th + 1,
                "v_th": "" if rec.v_th is None else repr(rec.v_th),
                "assign_seconds": f"{rec.assign_seconds:.6f}",
                "update_seconds": f"{rec.update_seconds:.6f}",
            }
        )
    return rows


def metrics_text(result: RunResult, n, k, timing=True):
    """Per-iteration CSV; ``timing=False`` drops the wall-time columns."""
    rows = _record_rows(result, n, k)
    if not timing:
        for r in rows:
            del r["assign_seconds"], r["update_seconds"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def write_metrics_csv(result: RunResult, path, n, k):
    Path(path).write_text(metrics_text(result, n, k))


def assignments_text(result: RunResult, corpus):
    return "".join(f"{doc} {a + 1}\n" for doc, a in zip(corpus.doc_ids.tolist(), result.assign.tolist()))


def write_assignments(result: RunResult, corpus, path):
    Path(path).write_text(assignments_text(result, corpus))


def summary_text(summary):
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def summary_dict(result: RunResult, corpus, input_path, input_hash, flags):
    cfg = result.config
    tot = {
        key: int(sum(getattr(r, key) for r in result.iterations))
        for key in ("mult_region1", "mult_region2", "mult_region3", "mult_bound", "sqrt", "candidates", "changes")
    }
    tot["mult"] = int(result.total_mult)
    return {
        "input": {"path": str(input_path), "sha256": input_hash},
        "flags": flags,
        "seed": cfg.seed,
        "algorithm": cfg.algorithm,
        "k": cfg.k,
        "n_docs": corpus.n_docs,
        "n_terms": corpus.n_terms,
        "params": None if result.params is None else {"t_th": result.params.t_th + 1, "v_th": result.params.v_th},
        "estimates": [
            {"iteration": it, "t_th": est.params.t_th + 1, "v_th": est.params.v_th, "objective": est.objective}
            for it, est in result.estimates
        ],
        "iterations": len(result.iterations),
        "converged": result.converged,
        "objective": result.objective,
        "totals": tot,
    }


# Flags that cannot change the result stay out of summaries so that summaries
# are byte-identical across worker counts and output locations.
_NEUTRAL_FLAGS = ("func", "threads", "verbose", "summary_out", "metrics_out", "assignments_out", "jgrid_out", "out_dir")


def _flags(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NEUTRAL_FLAGS}


def _write_jgrid(est, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_th", "v_th", "J"])
        s_lo = est.grid.s_min
        for h, v in enumerate(est.grid.v_candidates):
            for c in range(est.J.shape[1]):
                w.writerow([s_lo + c + 1, repr(float(v)), repr(float(est.J[h, c]))])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args):
    if not args.input or not args.cache:
        raise ConfigError("ingest needs --input and --cache")
    raw = read_bag_of_words(args.input)
    corpus = build_features(raw)
    try:
        write_cache(corpus, args.cache)
    except OSError as exc:
        raise CorpusError(f"cannot write {args.cache}: {exc}") from exc
    print(f"N={corpus.n_docs} D={corpus.n_terms} avg_terms={corpus.avg_terms:.4f} "
          f"density={corpus.avg_terms / corpus.n_terms:.6g} removed_docs={len(corpus.removed_docs)}")
    return EXIT_OK


def _check_tth(args, corpus):
    if getattr(args, "tth", None) is not None and args.tth > corpus.n_terms:
        raise ConfigError(f"--tth {args.tth} exceeds D={corpus.n_terms}")


def cmd_cluster(args):
    corpus, path, digest, _ = _load(args)
    _check_tth(args, corpus)
    cfg = _config(args)
    t0 = time.perf_counter()
    result = run(corpus, cfg)
    elapsed = time.perf_counter() - t0
    if args.assignments_out:
        write_assignments(result, corpus, args.assignments_out)
    if args.metrics_out:
        write_metrics_csv(result, args.metrics_out, corpus.n_docs, cfg.k)
    summary = summary_dict(result, corpus, path, digest, _flags(args))
    if args.summary_out:
        Path(args.summary_out).write_text(summary_text(summary))
    p = summary["params"]
    print(f"{cfg.algorithm}: iterations={summary['iterations']} converged={result.converged} "
          f"mult={result.total_mult} objective={result.objective:.6f}"
          + (f" t_th={p['t_th']} v_th={p['v_th']:.6g}" if p else "")
          + f" seconds={elapsed:.3f}")
    return EXIT_OK


def cmd_estimate(args):
    corpus, path, digest, _ = _load(args)
    _check_tth(args, corpus)
    cfg = _config(args)
    if cfg.algorithm not in ("es-icp", "es", "thv", "tht", "ta-icp", "cs-icp"):
        raise ConfigError("estimate needs an algorithm with structural parameters")
    cfg.param_policy = "estimate"
    cfg.max_iters = max(cfg.estimate_iters)
    result = run(corpus, cfg)
    if not result.estimates:
        raise ConfigError("run converged before the estimator ran")
    it, est = result.estimates[-1]
    if args.jgrid_out:
        _write_jgrid(est, args.jgrid_out)
    out = {
        "input": {"path": str(path), "sha256": digest},
        "flags": _flags(args),
        "iteration": it,
        "t_th": est.params.t_th + 1,
        "v_th": est.params.v_th,
        "objective": est.objective,
    }
    if args.summary_out:
        Path(args.summary_out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    print(f"t_th={out['t_th']} v_th={out['v_th']:.6g} J={est.objective:.6g}")
    return EXIT_OK


def cmd_profile(args):
    corpus, path, digest, raw = _load(args)
    _check_tth(args, corpus)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fits = {}

    def rank_csv(name, freqs):
        ranks, f = metrics.rank_frequency(freqs)
        with open(out / f"rank_frequency_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "frequency"])
            w.writerows(zip(ranks.tolist(), np.asarray(f).tolist()))
        fit = metrics.zipf_fit(freqs)
        fits[name] = {"alpha": fit.alpha, "rank_lo": fit.lo, "rank_hi": fit.hi, "degenerate": fit.degenerate}

    if raw is not None:
        rank_csv("tf", raw.tf)
    rank_csv("df", corpus.df)

    cfg = _config(args)
    result = run(corpus, cfg)
    means = result.means.means
    index = build_inverted_index(means)
    rank_csv("mf", index.mf)
    keys, mfbar = metrics.df_mf_scatter(corpus.df, index.mf)
    with open(out / "df_mf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["df", "mean_mf"])
        w.writerows(zip(keys.tolist(), mfbar.tolist()))
    prof = metrics.cps_profile(corpus, result.assign, means)
    with open(out / "cps.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["normalized_rank", "cps_mean", "cps_std"])
        w.writerows(zip(prof.nr.tolist(), prof.mean.tolist(), prof.std.tolist()))
    index.dump_csv(out / "index_structure.csv")
    if result.estimates:
        _write_jgrid(result.estimates[-1][1], out / "jgrid.csv")
    summary = {
        "input": {"path": str(path), "sha256": digest},
        "flags": _flags(args),
        "zipf": fits,
        "cps_excluded": int(len(prof.excluded)),
        "n_docs": corpus.n_docs,
        "n_terms": corpus.n_terms,
    }
    (out / "profile.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, fit in fits.items():
        print(f"{name}: alpha={fit['alpha']:.4f} over ranks {fit['rank_lo']}..{fit['rank_hi']}")
    return EXIT_OK


def cmd_compare(args):
    corpus, path, digest, _ = _load(args)
    _check_tth(args, corpus)
    algos = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    if not algos:
        raise ConfigError("--algorithms is empty")
    results = {}
    for algo in algos:
        results[algo] = run(corpus, _config(args, algo))
    ref = results[algos[0]]
    base = results["mivi"].total_mult if "mivi" in results else ref.total_mult
    identical = all(
        len(r.history) == len(ref.history) and all(np.array_equal(a, b) for a, b in zip(r.history, ref.history))
        for r in results.values()
    )
    n, k = corpus.n_docs, args.k
    print(f"{'algorithm':<10} {'iters':>5} {'mult':>14} {'ratio':>8} {'avg_cpr':>8} {'seconds':>8}")
    rows = []
    for algo, r in results.items():
        secs = sum(x.assign_seconds + x.update_seconds for x in r.iterations)
        avg_cpr = float(np.mean([x.cpr(n, k) for x in r.iterations]))
        ratio = base / r.total_mult if r.total_mult else float("inf")
        rows.append({"algorithm": algo, "iterations": len(r.iterations), "mult": r.total_mult,
                     "mult_ratio": ratio, "avg_cpr": avg_cpr, "seconds": secs,
                     "cpr": [x.cpr(n, k) for x in r.iterations]})
        print(f"{algo:<10} {len(r.iterations):>5} {r.total_mult:>14} {ratio:>8.3f} {avg_cpr:>8.4f} {secs:>8.3f}")
    print(f"assignments identical: {str(identical).lower()}")
    if args.summary_out:
        Path(args.summary_out).write_text(json.dumps(
            {"input": {"path": str(path), "sha256": digest}, "flags": _flags(args), "rows": rows,
             "identical": identical}, indent=2, sort_keys=True) + "\n")
    if not identical:
        raise InvariantViolation("assignment histories differ between algorithms")
    return EXIT_OK


def cmd_synth(args):
    if args.n is None or args.d is None:
        raise ConfigError("synth needs --n and --d")
    try:
        raw = generate_raw(args.n, args.d, n_topics=args.topics, alpha=args.alpha, seed=args.seed, doc_len=args.doc_len)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        write_bag_of_words(raw, args.output)
    except OSError as exc:
        raise CorpusError(f"cannot write {args.output}: {exc}") from exc
    print(f"wrote {args.output}: N={raw.n_docs} D={raw.n_terms} NNZ={raw.nnz}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _run_flags(p, need_k=True):
    p.add_argument("--input", help="bag-of-words file")
    p.add_argument("--cache", help="binary corpus cache")
    p.add_argument("--k", type=int, required=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algorithm", default="es-icp", choices=ALGORITHMS)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--estimate-params", action="store_true")
    p.add_argument("--tth", type=int, help="1-based threshold term ID")
    p.add_argument("--vth", type=float)
    p.add_argument("--tth-frac", type=float)
    p.add_argument("--vth-grid", help="lo:hi:step value-threshold candidates")
    p.add_argument("--smin-frac", type=float, default=0.85)
    p.add_argument("--threads", type=int)
    p.add_argument("--summary-out")


def build_parser():
    parser = _Parser(prog="esicp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a bag-of-words file and write the binary cache")
    p.add_argument("--input", required=True)
    p.add_argument("--cache", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster", help="run one clustering")
    _run_flags(p)
    p.add_argument("--metrics-out")
    p.add_argument("--assignments-out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("estimate", help="estimate structural parameters and dump the cost grid")
    _run_flags(p)
    p.add_argument("--jgrid-out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("profile", help="write corpus and clustering profile curves as CSV")
    _run_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("compare", help="run several algorithms from the same seeds")
    _run_flags(p)
    p.add_argument("--algorithms", default="mivi,icp,es-icp")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate a synthetic bag-of-words file")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--topics", type=int)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--doc-len", type=int, default=60)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if not getattr(args, "func", None):
            raise ConfigError("missing subcommand")
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
