"""Command-line entry point: ``reflowedit <experiment> --config run.ini --out results/``.

Every command writes CSV files whose bodies depend only on the config
(seeds included). Run metadata and the wall-clock timestamp go into
leading ``#`` comment lines.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import __version__
from .attnmask import pipeline
from .config import EXPERIMENTS, RunConfig, Variant, empty_config, load_config
from .errors import ConfigError, DegenerateFit, ReflowError
from .flowcore import (
    ConstantField,
    GaussianMarginalField,
    TimeGrid,
    exact_gaussian_trajectory,
    make_rng,
    sample_endpoint,
    standard_normal,
)
from .guidance import LqrProblem, lqr_limit_ladder, verify_proposition1
from .io import fmt, fmt_short, read_stack, write_map_csv, write_stack
from .multiturn import EditSession, drift_report, run_session
from .solvers import convergence_order, endpoint_errors, matched_steps

Output = dict[str, tuple[list[str], str]]
"""file name -> (metadata comment lines, CSV body)."""


def worker_count() -> int:
    raw = os.environ.get("REFLOW_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"REFLOW_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return os.cpu_count() or 1


def fan_out(fn: Callable, items: Iterable) -> list:
    """Map ``fn`` over ``items`` on a thread pool; results keep input order."""
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _start_state(cfg: RunConfig) -> np.ndarray:
    return cfg.x0 if cfg.x0 is not None else np.ones(cfg.dim)


def _source_for_seed(cfg: RunConfig, fld, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = make_rng(seed)
    if isinstance(fld, GaussianMarginalField):
        return sample_endpoint(fld.endpoints, "source", rng), sample_endpoint(fld.endpoints, "noise", rng)
    source = cfg.x0 if cfg.x0 is not None else standard_normal(rng, cfg.dim)
    return source, standard_normal(rng, cfg.dim)


def cmd_order(cfg: RunConfig) -> Output:
    fld = cfg.make_field()
    x0 = _start_state(cfg)
    if isinstance(fld, GaussianMarginalField):
        exact = exact_gaussian_trajectory(x0, 1.0, fld.endpoints)
    else:
        exact = x0 + fld.velocity

    def one(solver):
        rows = endpoint_errors(fld, x0, exact, solver, cfg.n_list)
        try:
            slope = fmt(convergence_order(fld, x0, exact, solver, cfg.n_list))
        except DegenerateFit:
            slope = "exact"
        return [f"{solver.value},{n},{fmt(err)},{evals},{slope}" for n, err, evals in rows]

    body = ["solver,N,error,field_evals,slope"]
    for rows in fan_out(one, cfg.solvers):
        body.extend(rows)
    meta = [f"field={fld.kind} dim={cfg.dim} n_list={','.join(map(str, cfg.n_list))}"]
    return {"order.csv": (meta, "\n".join(body) + "\n")}


def _session(cfg: RunConfig, variant: Variant, seed: int, fld) -> EditSession:
    source, anchor = _source_for_seed(cfg, fld, seed)
    return EditSession(
        source=source,
        field=fld,
        grid=TimeGrid.uniform_grid(variant.steps),
        solver=variant.solver,
        guidance=variant.guidance,
        seed=seed,
        name=f"{variant.name}@{seed}",
        noise_anchor=anchor,
        edit_offset=cfg.edit_offset,
    )


def _variant_meta(v: Variant) -> str:
    g = v.guidance
    return (
        f"config={v.name} solver={v.solver.value} steps={v.steps} eta={g.eta} lambda_mix={g.lambda_mix} "
        f"guided_steps={g.guided_steps} inversion_eta={g.inversion_eta}"
    )


def cmd_roundtrip(cfg: RunConfig) -> Output:
    fld = cfg.make_field()
    variants = [
        Variant(s.value, s, matched_steps(s, cfg.budget) if cfg.budget else cfg.steps, cfg.guidance)
        for s in cfg.solvers
    ]
    jobs = [(v, seed) for v in variants for seed in cfg.seeds]

    def one(job):
        v, seed = job
        session = _session(cfg, v, seed, fld)
        (rec,) = run_session(session, 1)
        return f"{v.solver.value},{v.steps},{seed},{fmt(rec.drift_to_source)},{rec.field_evals}"

    body = ["solver,N,seed,drift_to_source,field_evals", *fan_out(one, jobs)]
    return {"roundtrip.csv": ([_variant_meta(v) for v in variants], "\n".join(body) + "\n")}


def cmd_multiturn(cfg: RunConfig) -> Output:
    if cfg.rounds < 1:
        raise ConfigError("[run] rounds must be >= 1")
    fld = cfg.make_field()
    jobs = [(v, seed) for v in cfg.variants for seed in cfg.seeds]

    def one(job):
        v, seed = job
        session = _session(cfg, v, seed, fld)
        run_session(session, cfg.rounds)
        return session

    sessions = fan_out(one, jobs)
    summary = ["config,seeds,mean_final_drift,mean_field_evals"]
    for v in cfg.variants:
        mine = [s for (vv, _), s in zip(jobs, sessions) if vv is v]
        finals = [s.rounds[-1].drift_to_source for s in mine]
        evals = [s.rounds[-1].field_evals for s in mine]
        summary.append(f"{v.name},{len(mine)},{fmt_short(np.mean(finals))},{fmt_short(np.mean(evals))}")
    meta = [f"rounds={cfg.rounds} field={fld.kind} dim={cfg.dim}", *(_variant_meta(v) for v in cfg.variants)]
    return {
        "multiturn.csv": (meta, drift_report(sessions)),
        "multiturn_summary.csv": (meta, "\n".join(summary) + "\n"),
    }


def cmd_prop1(cfg: RunConfig) -> Output:
    grid = TimeGrid.uniform_grid(cfg.steps)
    lo, hi = cfg.weight_range
    body = ["seed,n_targets,total_weight,gap"]
    for seed in cfg.seeds:
        for n in (1, *cfg.n_targets):
            rng = make_rng(seed * 1000 + n)
            z0 = standard_normal(rng, cfg.dim)
            targets = [(standard_normal(rng, cfg.dim), float(rng.uniform(lo, hi))) for _ in range(n)]
            report = verify_proposition1(LqrProblem(z0, tuple(targets), grid))
            body.append(f"{seed},{n},{fmt(report.total_weight)},{fmt(report.gap)}")
    return {"prop1.csv": ([f"steps={cfg.steps} dim={cfg.dim}"], "\n".join(body) + "\n")}


def cmd_lqr_limit(cfg: RunConfig) -> Output:
    rng = make_rng(cfg.seeds[0])
    z = standard_normal(rng, cfg.dim)
    target = standard_normal(rng, cfg.dim)
    rows, slope = lqr_limit_ladder(z, cfg.lqr_t, target, cfg.lambdas)
    body = ["lambda,error,slope", *(f"{fmt(lam)},{fmt(err)},{fmt(slope)}" for lam, err in rows)]
    return {"lqr_limit.csv": ([f"t={cfg.lqr_t} dim={cfg.dim} seed={cfg.seeds[0]}"], "\n".join(body) + "\n")}


def cmd_mask(cfg: RunConfig, out_dir: Path) -> Output:
    if cfg.manifest is None:
        raise ConfigError("[mask] manifest is required")
    stack = read_stack(cfg.manifest)
    next_stack = read_stack(cfg.next_manifest) if cfg.next_manifest else stack
    result = pipeline(stack, cfg.mask, next_stack)
    mask_path = out_dir / "mask.csv"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_map_csv(mask_path, result.mask)
    write_stack(out_dir / "modulated", result.modulated, prefix="modulated")
    n = result.mask.size
    selected = " ".join(str(int(k) + 1) for k in result.selected)
    body = f"h_count,r_count,selected_blocks\n{result.h_count},{n - result.h_count},{selected}\n"
    p = cfg.mask
    meta = [f"i={p.i} j={p.j} tau={p.tau} h_factor={p.h_factor} r_factor={p.r_factor} sort_on={p.sort_on}"]
    return {"mask_summary.csv": (meta, body)}


def write_outputs(out_dir: Path, command: str, outputs: Output) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    written = []
    for name, (meta, body) in outputs.items():
        head = [f"# reflowedit {__version__} {command} generated={stamp}", *(f"# {m}" for m in meta)]
        path = out_dir / name
        path.write_text("\n".join(head) + "\n" + body, encoding="ascii", newline="\n")
        written.append(path)
    return written


def run_command(command: str, cfg: RunConfig, out_dir: Path) -> list[Path]:
    if command == "mask":
        outputs = cmd_mask(cfg, out_dir)
    else:
        outputs = {
            "order": cmd_order,
            "roundtrip": cmd_roundtrip,
            "multiturn": cmd_multiturn,
            "prop1": cmd_prop1,
            "lqr-limit": cmd_lqr_limit,
        }[command](cfg)
    return write_outputs(out_dir, command, outputs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reflowedit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI-style run configuration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--seed-override", type=int, help="replace the configured seed list with this seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else empty_config()
        if args.seed_override is not None:
            cfg = cfg.with_seed(args.seed_override)
        for path in run_command(args.command, cfg, args.out):
            print(path)
    except ReflowError as exc:
        print(f"error {exc.category}: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error io: {exc}".replace("\n", " "), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
