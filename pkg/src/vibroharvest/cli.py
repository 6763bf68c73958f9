"""Command-line front end: ``vibroharvest {simulate,solve,sweep,critical,energy}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .atlas import (Branch, BifurcationPoint, NoBracket, NotApplicable, SweepPoint, continue_branch,
                    find_crossing_sliding, find_fold, find_grazing_gamma, find_grazing_sliding, find_pd,
                    find_switching_sliding, sweep_numeric, write_bifurcations_csv, write_diagram_csv)
from .config import BranchConfig, ConfigError, RunConfig, load_config
from .energy import EnergyParams, metrics_from_records, orbit_metrics, write_energy_csv
from .flow import SimulationError, initial_state, simulate, write_events_csv, write_trajectory_csv
from .model import NondimParams, ParameterError, forcing_eval, nondimensionalize
from .orbits import (Itinerary, NoConvergence, OrbitSolution, UnknownItinerary, find_orbits,
                     write_orbits_csv)
from .stability import SingularDenominator, stability, write_stability_csv

log = logging.getLogger("vibroharvest")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

FINDERS: Dict[str, Callable[[Branch], BifurcationPoint]] = {
    "pd": find_pd,
    "fold": find_fold,
    "grazing_sliding": find_grazing_sliding,
    "switching_sliding": find_switching_sliding,
    "crossing_sliding": find_crossing_sliding,
    "gamma_plus": lambda b: find_grazing_gamma(b, "bottom"),
    "gamma_minus": lambda b: find_grazing_gamma(b, "top"),
}


class NumericalFailure(RuntimeError):
    """A pipeline step produced no usable result."""


def _tag(mu: float, direction: Optional[str] = None) -> str:
    tag = f"mu{mu:g}"
    return f"{tag}_{direction}" if direction else tag


def _map(fn, items: Sequence, threads: int) -> List:
    """Ordered map, fanned out to worker processes when ``threads > 1``."""
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


# -------------------------------------------------------------- simulate

def write_forcing_csv(path: Path, times: Sequence[float], params: NondimParams) -> None:
    """Forcing ``f(t)`` next to the constant loads it competes with."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "f", "L_plus", "L_minus"])
        for t in times:
            f, _, _ = forcing_eval(float(t), params.phi)
            w.writerow([repr(float(t)), repr(float(f)), repr(params.L_plus), repr(params.L_minus)])


def _simulate_one(cfg: RunConfig, params: NondimParams, out: Path, suffix: str) -> List[Path]:
    sc = cfg.simulate
    state = initial_state(sc.t0, sc.Z0, sc.Zdot0, params)
    if sc.transient > 0:
        pre = simulate(params, state, sc.transient * params.T, record_trajectory=False,
                       wall_rest=sc.wall_rest)
        state = pre.final
    res = simulate(params, state, sc.horizon, samples_per_period=sc.samples_per_period,
                   wall_rest=sc.wall_rest)
    paths = [out / f"trajectory{suffix}.csv", out / f"events{suffix}.csv", out / f"forcing{suffix}.csv"]
    write_trajectory_csv(paths[0], res)
    write_events_csv(paths[1], res.events)
    write_forcing_csv(paths[2], res.trajectory[0], params)
    return paths


def cmd_simulate(cfg: RunConfig, out: Path, threads: int = 1, seed_from: Optional[str] = None) -> List[Path]:
    if not cfg.simulate.A_values:
        return _simulate_one(cfg, nondimensionalize(cfg.physical), out, "")
    paths = []
    for A in cfg.simulate.A_values:
        params = nondimensionalize(replace(cfg.physical, A=A))
        paths.extend(_simulate_one(cfg, params, out, f"_A{A:g}"))
    return paths


# ----------------------------------------------------------------- solve

def _reports(sols: Sequence[OrbitSolution]):
    reps = []
    for s in sols:
        try:
            reps.append(stability(s))
        except SingularDenominator as exc:
            log.warning("no monodromy for %s at d=%.6g: %s", s.label, s.d, exc)
    return reps


def cmd_solve(cfg: RunConfig, out: Path, threads: int = 1, seed_from: Optional[str] = None) -> List[Path]:
    how = seed_from or cfg.solver.seed_from
    itins = [Itinerary.from_label(lab) for lab in cfg.solver.itineraries]
    sols: List[OrbitSolution] = []
    for d in cfg.solve_points():
        params = cfg.family()(d)
        for itin in itins:
            found = find_orbits(itin, params, how)
            if not found:
                log.warning("no %s orbit found at d=%.6g", itin.label, params.d)
            sols.extend(found)
    paths = [out / "orbits.csv", out / "stability.csv"]
    write_orbits_csv(paths[0], sols)
    write_stability_csv(paths[1], _reports(sols))
    if not sols:
        raise NumericalFailure("no periodic orbit converged")
    return paths


# -------------------------------------------------------------- branches

def _seed_branch(cfg: RunConfig, bc: BranchConfig, mu: float, how: str) -> OrbitSolution:
    fam = cfg.family(mu)
    itin = Itinerary.from_label(bc.itinerary)
    d0 = bc.seed_d if bc.seed_d is not None else bc.start
    roots = find_orbits(itin, fam(d0), how)
    if not roots:
        raise NumericalFailure(f"no {itin.label} orbit to start the branch at d={d0:.6g}")
    roots.sort(key=lambda s: (not s.physical, s.residual_norm))
    seed = roots[0]
    if d0 != bc.start:
        lead = continue_branch(itin, fam, d0, bc.start, step=bc.step, seed=seed, through_pd=True,
                               through_fold=True)
        if not lead.points or abs(lead.points[-1].d - bc.start) > 1e-12:
            raise NumericalFailure(f"{itin.label} branch from d={d0:.6g} does not reach d={bc.start:.6g}")
        seed = lead.points[-1].sol
    return seed


def run_branch(cfg: RunConfig, bc: BranchConfig, mu: float, how: str) -> Tuple[Branch, List[BifurcationPoint], List[str]]:
    """Continue one configured branch and locate its requested critical points."""
    seed = _seed_branch(cfg, bc, mu, how)
    branch = continue_branch(bc.itinerary, cfg.family(mu), bc.start, bc.stop, step=bc.step, seed=seed,
                             through_pd=bc.through_pd, through_fold=bc.through_fold)
    found, missing = [], []
    for kind in bc.kinds:
        try:
            found.append(FINDERS[kind](branch))
        except NotApplicable as exc:
            log.info("%s on %s (mu=%g) cannot occur: %s", kind, bc.itinerary, mu, exc)
        except (NoBracket, NoConvergence, SingularDenominator) as exc:
            log.warning("%s on %s (mu=%g): %s", kind, bc.itinerary, mu, exc)
            missing.append(f"{bc.name}:{kind}")
    return branch, found, missing


def _branch_job(args):
    cfg, bc, mu, how = args
    return run_branch(cfg, bc, mu, how)


def _critical(cfg: RunConfig, out: Path, threads: int, how: str) -> Tuple[List[Path], List[str]]:
    jobs = [(cfg, bc, mu, how) for bc in cfg.branches for mu in (bc.mu_values or cfg.mu_values())]
    results = _map(_branch_job, jobs, threads)
    points: List[BifurcationPoint] = []
    missing: List[str] = []
    paths = []
    for (_, bc, mu, _), (branch, found, miss) in zip(jobs, results):
        p = out / f"branch_{bc.name}_{_tag(mu)}.csv"
        write_orbits_csv(p, [pt.sol for pt in branch.points])
        q = out / f"branch_{bc.name}_{_tag(mu)}_stability.csv"
        write_stability_csv(q, [pt.report for pt in branch.points if pt.report is not None])
        paths.extend([p, q])
        points.extend(found)
        missing.extend(f"{m}@{_tag(mu)}" for m in miss)
    p = out / "bifurcations.csv"
    write_bifurcations_csv(p, points)
    paths.append(p)
    return paths, missing


def cmd_critical(cfg: RunConfig, out: Path, threads: int = 1, seed_from: Optional[str] = None) -> List[Path]:
    if not cfg.branches:
        raise ConfigError(f"{cfg.source}: critical needs at least one [branch.*] section")
    paths, missing = _critical(cfg, out, threads, seed_from or cfg.solver.seed_from)
    if missing:
        raise NumericalFailure("critical points not found: " + ", ".join(missing))
    return paths


# ----------------------------------------------------------------- sweeps

def _sweep_job(args) -> List[SweepPoint]:
    cfg, mu, ds = args
    sw = cfg.sweep
    return sweep_numeric(cfg.family(mu), ds, sw.transient, sw.record, carry=sw.carry, wall_rest=sw.wall_rest)


def run_sweeps(cfg: RunConfig, threads: int = 1) -> List[Tuple[float, str, List[SweepPoint]]]:
    """Numeric sweeps for every friction value and direction, in config order.

    Continued sweeps run as one work item each; restarted sweeps split into
    one item per point since their points are independent.
    """
    if cfg.sweep is None:
        raise ConfigError(f"{cfg.source}: missing [sweep] section")
    keys, jobs = [], []
    for mu in cfg.mu_values():
        for direction in cfg.directions():
            ds = cfg.sweep_d_values(direction)
            chunks = [ds] if cfg.sweep.carry else [[d] for d in ds]
            for c in chunks:
                keys.append((mu, direction))
                jobs.append((cfg, mu, list(c)))
    results = _map(_sweep_job, jobs, threads)
    merged: Dict[Tuple[float, str], List[SweepPoint]] = {}
    for k, pts in zip(keys, results):
        merged.setdefault(k, []).extend(pts)
    return [(mu, direction, pts) for (mu, direction), pts in merged.items()]


def _energy_rows(cfg: RunConfig, mu: float, pts: Sequence[SweepPoint], ep: EnergyParams):
    fam = cfg.family(mu)
    rows = []
    for pt in pts:
        if pt.window[1] > pt.window[0]:
            rows.append((pt.d, mu, metrics_from_records(pt.impacts, pt.window, fam.physical(pt.d), ep)))
    return rows


def _write_energy(cfg: RunConfig, out: Path, sweeps, ep: EnergyParams) -> List[Path]:
    paths = []
    for direction in cfg.directions():
        rows = []
        for mu, dr, pts in sweeps:
            if dr == direction:
                rows.extend(_energy_rows(cfg, mu, pts, ep))
        p = out / f"energy_{direction}.csv"
        write_energy_csv(p, rows)
        paths.append(p)
    return paths


def _write_labels(path: Path, sweeps) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mu_k", "direction", "d", "label", "error"])
        for mu, direction, pts in sweeps:
            for pt in pts:
                w.writerow([repr(float(mu)), direction, repr(pt.d), pt.label, pt.error])


def cmd_sweep(cfg: RunConfig, out: Path, threads: int = 1, seed_from: Optional[str] = None) -> List[Path]:
    sweeps = run_sweeps(cfg, threads)
    paths = []
    for mu, direction, pts in sweeps:
        p = out / f"diagram_{_tag(mu, direction)}.csv"
        write_diagram_csv(p, pts)
        paths.append(p)
    p = out / "labels.csv"
    _write_labels(p, sweeps)
    paths.append(p)
    missing: List[str] = []
    if cfg.branches:
        more, missing = _critical(cfg, out, threads, seed_from or cfg.solver.seed_from)
        paths.extend(more)
    if cfg.energy is not None:
        paths.extend(_write_energy(cfg, out, sweeps, cfg.energy))
    if missing:
        raise NumericalFailure("critical points not found: " + ", ".join(missing))
    return paths


def cmd_energy(cfg: RunConfig, out: Path, threads: int = 1, seed_from: Optional[str] = None) -> List[Path]:
    ep = cfg.energy if cfg.energy is not None else EnergyParams(m=cfg.physical.m)
    paths: List[Path] = []
    if cfg.sweep is not None:
        paths.extend(_write_energy(cfg, out, run_sweeps(cfg, threads), ep))
    how = seed_from or cfg.solver.seed_from
    for bc in cfg.branches:
        for mu in bc.mu_values or cfg.mu_values():
            seed = _seed_branch(cfg, bc, mu, how)
            branch = continue_branch(bc.itinerary, cfg.family(mu), bc.start, bc.stop, step=bc.step,
                                     seed=seed, through_pd=bc.through_pd, through_fold=bc.through_fold)
            fam = cfg.family(mu)
            rows = [(pt.d, mu, orbit_metrics(pt.sol, fam.physical(pt.d), ep)) for pt in branch.points]
            p = out / f"energy_branch_{bc.name}_{_tag(mu)}.csv"
            write_energy_csv(p, rows)
            paths.append(p)
    if not paths:
        raise ConfigError(f"{cfg.source}: energy needs a [sweep] or [branch.*] section")
    return paths


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "critical": cmd_critical,
    "energy": cmd_energy,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vibroharvest",
                                 description="Simulate and analyse the inclined vibro-impact harvester.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI run configuration")
        sp.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for independent items")
        sp.add_argument("--seed-from", choices=("simulate", "grid"), default=None,
                        help="initial guesses for the orbit solver")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        out = Path(args.out if args.out is not None else cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = COMMANDS[args.command](cfg, out, args.threads, args.seed_from)
    except (ConfigError, ParameterError, UnknownItinerary) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, NoConvergence, SimulationError, NoBracket, NotApplicable,
            SingularDenominator) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
