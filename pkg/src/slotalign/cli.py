"""Command-line front end: ``slotalign {align,perturb,eval,bench}``.

Exit codes: 0 success, 2 bad configuration or usage, 3 unreadable or invalid
input, 4 alignment stopped at ``k_max`` (results are still written).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .aligner import AlignConfig, ConfigError, run, write_trace
from .graph import (
    GraphFormatError,
    load_anchors,
    load_graph,
    normalize_rows,
    read_matrix,
    save_anchors,
    save_graph,
    write_matrix,
)
from .matching import (
    DEFAULT_KS,
    extract_one_to_one,
    format_metrics,
    hit_at_k,
    knn_align,
    summarize,
    write_results,
)
from .perturb import FeatureOp, PerturbError, PerturbSpec, apply_spec
from .solvers import SinkhornSettings

logger = logging.getLogger("slotalign")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 2, 3, 4
DEFAULT_LEVELS = "0,10,20,30,40,50,60,70"


class InputError(Exception):
    pass


# -- manifest ----------------------------------------------------------------

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):  # enums
        return str(value.value)
    return "" if value is None else str(value)


def write_manifest(path, items: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items.items():
            fh.write(f"{key} = {_fmt(value)}\n")


def read_manifest(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            out[key] = value
    return out


def config_items(cfg: AlignConfig) -> dict:
    items = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, SinkhornSettings):
            for g in dataclasses.fields(value):
                items[f"config.sinkhorn.{g.name}"] = getattr(value, g.name)
        else:
            items[f"config.{f.name}"] = value
    return items


def _parse_like(default, text: str):
    if isinstance(default, bool):
        if text not in ("True", "False"):
            raise ConfigError(f"not a boolean: {text!r}")
        return text == "True"
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def config_from_items(items: dict) -> AlignConfig:
    base = AlignConfig()
    kwargs, sk = {}, {}
    try:
        for f in dataclasses.fields(SinkhornSettings):
            key = f"config.sinkhorn.{f.name}"
            if key in items:
                sk[f.name] = _parse_like(getattr(base.sinkhorn, f.name), items[key])
        for f in dataclasses.fields(AlignConfig):
            key = f"config.{f.name}"
            if key in items:
                kwargs[f.name] = _parse_like(getattr(base, f.name), items[key])
    except ValueError as exc:
        raise ConfigError(f"bad manifest value: {exc}") from None
    return AlignConfig(**kwargs, sinkhorn=SinkhornSettings(**sk))


# -- shared arguments --------------------------------------------------------

def add_align_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("alignment")
    g.add_argument("--preset", choices=("real", "semi"), default="real",
                   help="defaults to start from: real (K=4, tau=1) or semi (K=2, tau=0.1)")
    g.add_argument("-K", type=int, help="number of structure bases")
    g.add_argument("--tau", type=float, help="step size for the basis weights")
    g.add_argument("--eta", type=float, help="entropic weight of the plan update")
    g.add_argument("--kmax", type=int, help="maximum outer iterations")
    g.add_argument("--eps1", type=float, help="stopping threshold on the weight step")
    g.add_argument("--eps2", type=float, help="stopping threshold on the plan step")
    g.add_argument("--init", choices=("uniform", "featsim"))
    g.add_argument("--freeze-weights", action="store_true", help="keep basis weights uniform")
    g.add_argument("--no-normalize", action="store_true", help="skip row normalization of features")
    g.add_argument("--sinkhorn-iter", type=int)
    g.add_argument("--sinkhorn-tol", type=float)
    g.add_argument("--method", choices=("slotalign", "knn"), default="slotalign")
    g.add_argument("--direction", choices=("target->source", "source->target"), default="target->source")
    g.add_argument("--topk", type=int, default=max(DEFAULT_KS), help="candidates kept per node")


def config_from_args(args) -> AlignConfig:
    cfg = AlignConfig.semi_synthetic() if args.preset == "semi" else AlignConfig()
    changes = {
        "K": args.K, "tau": args.tau, "eta": args.eta, "k_max": args.kmax,
        "eps1": args.eps1, "eps2": args.eps2, "init": args.init,
    }
    changes = {k: v for k, v in changes.items() if v is not None}
    if args.freeze_weights:
        changes["freeze_weights"] = True
    if args.no_normalize:
        changes["normalize_features"] = False
    sk = {k: v for k, v in (("max_iter", args.sinkhorn_iter), ("tol", args.sinkhorn_tol)) if v is not None}
    if sk:
        try:
            changes["sinkhorn"] = dataclasses.replace(cfg.sinkhorn, **sk)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg.replace(**changes)


def _inputs(items: dict, **paths) -> None:
    for name, path in paths.items():
        items[name] = "" if path is None else str(Path(path).resolve())
        items[f"{name}.sha256"] = "" if path is None else sha256(path)


# -- align -------------------------------------------------------------------

def _align_from_manifest(args):
    items = read_manifest(args.manifest)
    if items.get("command") != "align":
        raise InputError(f"{args.manifest}: not an align manifest")
    for name in ("source_edges", "source_feats", "target_edges", "target_feats", "anchors"):
        path = items.get(name, "")
        if path and sha256(path) != items.get(f"{name}.sha256"):
            raise InputError(f"{path}: contents changed since the recorded run")
    def opt(key):
        return items.get(key) or None

    try:
        ns = argparse.Namespace(
            source_edges=opt("source_edges"), source_feats=opt("source_feats"),
            target_edges=opt("target_edges"), target_feats=opt("target_feats"),
            anchors=opt("anchors"), out_dir=args.out_dir or items["out_dir"],
            method=items["method"], direction=items["direction"], topk=int(items["topk"]),
            dump_coupling=items["dump_coupling"] == "True", one_to_one=items["one_to_one"],
            seed=int(items["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise InputError(f"{args.manifest}: incomplete manifest ({exc})") from None
    return ns, config_from_items(items)


def cmd_align(args, parser) -> int:
    if args.manifest:
        args, cfg = _align_from_manifest(args)
    else:
        missing = [f for f in ("source_edges", "target_edges", "out_dir") if getattr(args, f) is None]
        if missing:
            parser.error("missing " + ", ".join("--" + m.replace("_", "-") for m in missing))
        cfg = config_from_args(args)
    g_s = load_graph(args.source_edges, args.source_feats)
    g_t = load_graph(args.target_edges, args.target_feats)
    anchors = load_anchors(args.anchors, g_s.n, g_t.n) if args.anchors else None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    state = None
    if args.method == "knn":
        result = knn_align(g_s, g_t, args.topk, anchors, DEFAULT_KS, args.direction)
        if args.one_to_one != "none":
            sim = normalize_rows(g_s.features) @ normalize_rows(g_t.features).T
            result.one_to_one = extract_one_to_one(sim, exact=args.one_to_one == "exact")
    else:
        state = run(g_s, g_t, cfg)
        result = summarize(state.coupling, args.topk, anchors, DEFAULT_KS, args.direction)
        if args.one_to_one != "none":
            result.one_to_one = extract_one_to_one(state.coupling, exact=args.one_to_one == "exact")
        write_trace(state, out / "trace.csv")
        if args.dump_coupling:
            write_matrix(out / "coupling.txt", state.plan)
    seconds = time.perf_counter() - start

    write_results(result, out / "matches.csv")
    (out / "metrics.txt").write_text(format_metrics(result.hits), encoding="utf-8")
    if result.one_to_one is not None:
        with open(out / "pairs.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_index", "target_index"])
            writer.writerows(result.one_to_one)

    items = {"command": "align", "version": __version__}
    _inputs(items, source_edges=args.source_edges, source_feats=args.source_feats,
            target_edges=args.target_edges, target_feats=args.target_feats, anchors=args.anchors)
    items.update({
        "out_dir": str(out.resolve()), "method": args.method, "direction": args.direction,
        "topk": args.topk, "dump_coupling": bool(args.dump_coupling), "one_to_one": args.one_to_one,
        "seed": args.seed, "mode": cfg.mode if state else "knn",
    })
    items.update(config_items(cfg))
    if state is not None:
        items.update({
            "status": state.status, "iterations": state.iteration,
            "final_objective": state.objective_trace[-1],
            "final_alpha_step": state.alpha_steps[-1], "final_pi_step": state.pi_steps[-1],
            "sinkhorn_failures": state.sinkhorn_failures, "refinements": state.refinements,
        })
    items["wall_time"] = round(seconds, 3)
    for k, v in sorted(result.hits.items()):
        items[f"metric.Hit@{k}"] = f"{v:.2f}"
    write_manifest(out / "manifest.txt", items)

    for k, v in sorted(result.hits.items()):
        print(f"Hit@{k}: {v:.2f}")
    if state is not None and not state.converged:
        print(f"stopped at k_max={cfg.k_max} (weight step {state.alpha_steps[-1]:.2e}, "
              f"plan step {state.pi_steps[-1]:.2e})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# -- perturb -----------------------------------------------------------------

def cmd_perturb(args, parser) -> int:
    g = load_graph(args.edges, args.feats)
    spec = PerturbSpec(args.seed, args.edge_ratio, args.feature_op, args.feature_ratio)
    target, anchors = apply_spec(g, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    feats = out / "target.feats" if g.d or args.feats else None
    save_graph(target, out / "target.edges", feats)
    save_anchors(anchors, out / "anchors.txt")
    items = {"command": "perturb", "version": __version__}
    _inputs(items, edges=args.edges, feats=args.feats)
    items.update({f"spec.{k}": v for k, v in spec.manifest().items()})
    items["rng"] = "PCG64"
    for name in ("target.edges", "target.feats", "anchors.txt"):
        if (out / name).exists():
            items[f"output.{name}.sha256"] = sha256(out / name)
    write_manifest(out / "manifest.txt", items)
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def cmd_eval(args, parser) -> int:
    plan = read_matrix(args.coupling)
    anchors = load_anchors(args.anchors, plan.shape[0], plan.shape[1])
    ks = tuple(int(k) for k in args.ks.split(","))
    if min(ks) < 1:
        raise ConfigError("k must be >= 1")
    text = format_metrics(hit_at_k(plan, anchors, ks, args.direction))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- bench -------------------------------------------------------------------

def parse_levels(text: str) -> list:
    try:
        levels = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad level list {text!r}") from None
    if not levels or any(not 0 <= v <= 100 for v in levels):
        raise ConfigError("levels are percentages in [0, 100]")
    return levels


def bench_spec(sweep: str, level: float, fixed_edge: float, seed: int) -> PerturbSpec:
    if sweep == "edge":
        return PerturbSpec(seed, level / 100)
    return PerturbSpec(seed, fixed_edge / 100, FeatureOp(sweep), level / 100)


def _bench_job(job):
    g, spec, cfg, method, direction = job
    start = time.perf_counter()
    target, anchors = apply_spec(g, spec)
    if method == "knn":
        hits = knn_align(g, target, 1, anchors, DEFAULT_KS, direction).hits
        status = "n/a"
    else:
        state = run(g, target, cfg)
        hits, status = hit_at_k(state.coupling, anchors, DEFAULT_KS, direction), state.status
    return hits, time.perf_counter() - start, status


def cmd_bench(args, parser) -> int:
    cfg = config_from_args(args)
    levels = parse_levels(args.levels)
    if args.seeds < 1 or args.jobs < 1:
        raise ConfigError("--seeds and --jobs must be >= 1")
    fixed = args.fixed_edge_ratio
    if not 0 <= fixed <= 100:
        raise ConfigError("--fixed-edge-ratio is a percentage in [0, 100]")
    g = load_graph(args.edges, args.feats)
    seeds = [args.seed + s for s in range(args.seeds)]
    jobs = [(g, bench_spec(args.sweep, lv, fixed, s), cfg, args.method, args.direction)
            for lv in levels for s in seeds]
    # generation is cheap; fail fast on impossible specs before any alignment runs
    for lv in levels:
        apply_spec(g, bench_spec(args.sweep, lv, fixed, seeds[0]))
    start = time.perf_counter()
    if args.jobs == 1:
        results = [_bench_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_job, jobs))
    wall = time.perf_counter() - start

    rows = []
    for i, lv in enumerate(levels):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        row = {"level": lv}
        for k in DEFAULT_KS:
            row[f"Hit@{k}"] = float(np.mean([h[k] for h, _, _ in chunk]))
        row["seconds"] = float(np.mean([s for _, s, _ in chunk]))
        row["not_converged"] = sum(st == "max_iter" for _, _, st in chunk)
        rows.append(row)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.2f}" if k.startswith("Hit") else v) for k, v in row.items()})
    items = {"command": "bench", "version": __version__}
    _inputs(items, edges=args.edges, feats=args.feats)
    items.update({
        "sweep": args.sweep, "levels": ",".join(f"{v:g}" for v in levels),
        "fixed_edge_ratio": fixed if args.sweep != "edge" else "", "seeds": ",".join(map(str, seeds)),
        "method": args.method, "direction": args.direction, "mode": cfg.mode if args.method != "knn" else "knn",
        "rng": "PCG64", "jobs": args.jobs,
    })
    items.update(config_items(cfg))
    items["wall_time"] = round(wall, 3)
    for row in rows:
        items[f"metric.{row['level']:g}.Hit@1"] = f"{row['Hit@1']:.2f}"
    write_manifest(out / "manifest.txt", items)
    for row in rows:
        print(f"{row['level']:6g}  Hit@1 {row['Hit@1']:6.2f}  Hit@10 {row['Hit@10']:6.2f}  {row['seconds']:.2f}s")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slotalign", description="Unsupervised attributed graph alignment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="align two graphs")
    p.add_argument("--source-edges")
    p.add_argument("--target-edges")
    p.add_argument("--source-feats")
    p.add_argument("--target-feats")
    p.add_argument("--anchors", help="ground-truth pairs 'source target' for Hit@k")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; the solver is deterministic")
    p.add_argument("--dump-coupling", action="store_true")
    p.add_argument("--one-to-one", choices=("none", "greedy", "exact"), default="none")
    p.add_argument("--manifest", help="repeat the run recorded in this manifest")
    add_align_args(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("perturb", help="generate a semi-synthetic target graph")
    p.add_argument("--edges", required=True)
    p.add_argument("--feats")
    p.add_argument("--edge-ratio", type=float, default=0.0)
    p.add_argument("--feature-op", choices=[op.value for op in FeatureOp], default="none")
    p.add_argument("--feature-ratio", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("eval", help="score a saved coupling against anchors")
    p.add_argument("--coupling", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--ks", default=",".join(map(str, DEFAULT_KS)))
    p.add_argument("--direction", choices=("target->source", "source->target"), default="target->source")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="robustness sweep on one graph")
    p.add_argument("--edges", required=True)
    p.add_argument("--feats")
    p.add_argument("--sweep", choices=("edge", "permute", "truncate", "compress"), required=True)
    p.add_argument("--levels", default=DEFAULT_LEVELS, help="comma-separated percentages")
    p.add_argument("--fixed-edge-ratio", type=float, default=25.0,
                   help="edge perturbation (percent) held fixed during feature sweeps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds averaged per level")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    add_align_args(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, parser)
    except (GraphFormatError, InputError, OSError) as exc:
        print(f"slotalign: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, PerturbError, ValueError) as exc:
        print(f"slotalign: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
