"""Command-line experiment runner.

    fallingballs [--config FILE] [--set KEY=VALUE ...] SUBCOMMAND

Every subcommand writes its files plus ``<subcommand>_report.json`` into the
output directory. Reports embed the resolved config, its hash and the
library version, and contain no timestamps, so identical (config, seed)
pairs give identical files.

Exit codes: 0 success, 1 invariant violation, 2 configuration error,
3 singular-branching abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, alignment, checks, cones, wedge
from .dynamics import DEFAULT_EPS_SING, EventKind, MassTriple, random_orbit, random_state
from .errors import ConfigError, FallingBallsError, InvariantViolation, SingularEncounter

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_SINGULAR = 0, 1, 2, 3

SUBCOMMANDS = ("simulate", "lyapunov", "sigma", "unbounded", "lambda", "alignment", "wedge", "classify", "selftest")


@dataclasses.dataclass
class RunConfig:
    """Resolved run parameters.

    Masses come either as an explicit triple (m1, m2, m3) or as m1, m3 alone,
    in which case m2 is solved from the wide-wedge relation.
    """

    m1: float = 4.0
    m2: float | None = None
    m3: float = 1.0
    energy: float = 10.0
    seed: int = 0
    orbits: int = 10
    events: int = 2000
    samples: int = 10_000
    segments: int = 100_000
    vectors: int = 20
    iterate: int = 1000
    steps: int = 200
    eps_sing: float = DEFAULT_EPS_SING
    fd_step: float = 1e-6
    cone_tol: float = 1e-12
    sigma_cap: float = 10.0
    sufficient: float = cones.SUFFICIENT_EXPANSION
    threshold: float = 1e3
    fd: bool = False
    quick: bool = True
    only: str = ""
    workers: int = 1
    out: str = "out"

    @property
    def masses(self) -> MassTriple:
        if self.m2 is None:
            return MassTriple(self.m1, wedge.solve_wide_m2(self.m1, self.m3), self.m3)
        return MassTriple(self.m1, self.m2, self.m3)

    def validate(self) -> "RunConfig":
        for name in ("energy", "eps_sing", "fd_step", "cone_tol", "sigma_cap", "sufficient", "threshold"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        for name in ("orbits", "events", "samples", "segments", "vectors", "steps", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.seed < 0 or self.iterate < 0:
            raise ConfigError("seed and iterate must be non-negative")
        try:
            self.masses
        except (ValueError, FallingBallsError) as exc:
            raise ConfigError(f"invalid masses: {exc}") from exc
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        # reports stay identical wherever they are written and however
        # many workers produced them
        d.pop("out")
        d.pop("workers")
        d["masses"] = self.masses.to_dict()
        return d

    def digest(self) -> str:
        d = dataclasses.asdict(self)
        d.pop("out")
        d.pop("workers")  # results do not depend on the worker count
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    if key == "masses":
        raise ConfigError("use m1, m2, m3")
    if isinstance(value, str):
        text = value.strip()
        if key == "m2" and text.lower() in ("", "none", "wide", "solve"):
            return None
        if key in ("out", "only"):
            return text
        if key in ("fd", "quick"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        value = text
    try:
        if key in ("fd", "quick"):
            return bool(value)
        if key == "m2" and value is None:
            return None
        default = _FIELDS[key].default
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def parse_config_text(text: str) -> dict:
    """JSON object, or ``key = value`` lines with ``#`` comments."""
    s = text.strip()
    if s.startswith("{"):
        try:
            d = json.loads(s)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if "masses" in d:
            m = d.pop("masses")
            if isinstance(m, dict):
                d.update(m)
            else:
                d["m1"], d["m2"], d["m3"] = m
        return d
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            raw.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        raw[k.strip()] = v
    kw = {k: _coerce(k, v) for k, v in raw.items()}
    return RunConfig(**kw).validate()


# --- report plumbing ---------------------------------------------------------


_VOLATILE = {"elapsed", "runtime"}


def _strip(x):
    if isinstance(x, dict):
        return {k: _strip(v) for k, v in x.items() if k not in _VOLATILE}
    if isinstance(x, list):
        return [_strip(v) for v in x]
    return x


def write_report(cfg: RunConfig, sub: str, results: dict, status: str = "ok") -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rep = {
        "subcommand": sub,
        "status": status,
        "version": __version__,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "results": _strip(checks._plain(results)),
    }
    path = out / f"{sub}_report.json"
    path.write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    return path


def _pool_map(fn, items, workers: int):
    items = list(items)
    if workers <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --- subcommands ---------------------------------------------------------------


def _orbit(cfg: RunConfig, seed: int):
    return random_orbit(cfg.masses, cfg.events, seed, cfg.energy, eps_sing=cfg.eps_sing)


def _simulate_one(args):
    cfg, seed = args
    log = _orbit(cfg, seed)
    out = Path(cfg.out)
    log.to_csv(out / f"orbit_{seed:06d}.csv")
    log.write_manifest(out / f"orbit_{seed:06d}.json", seed=seed, config_hash=cfg.digest())
    drift = float(np.max(np.abs(log.energies() - log.energy)) / log.energy)
    counts = np.bincount(log.kind.astype(int), minlength=3)
    return {
        "seed": seed,
        "events": len(log),
        "relative_energy_drift": drift,
        "counts": {EventKind(k).name: int(counts[k]) for k in range(3)},
        "alternation_violations": log.alternation_violations(),
        "min_margin": float(log.margin.min()),
    }


def cmd_simulate(cfg: RunConfig) -> dict:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    per = _pool_map(_simulate_one, [(cfg, s) for s in _seeds(cfg)], cfg.workers)
    per.sort(key=lambda r: r["seed"])
    bad = [r["seed"] for r in per if r["relative_energy_drift"] > 1e-8 or r["alternation_violations"]]
    if bad:
        raise InvariantViolation(f"energy drift or alternation failure in orbits {bad}")
    return {"orbits": per}


def _lyapunov_one(args):
    cfg, seed = args
    log = _orbit(cfg, seed)
    d = {"seed": seed, "analytic": cones.lyapunov_spectrum(log).to_dict()}
    if cfg.fd:
        d["finite_difference"] = cones.fd_lyapunov_spectrum(log, cfg.fd_step).to_dict()
    return d


def cmd_lyapunov(cfg: RunConfig) -> dict:
    per = _pool_map(_lyapunov_one, [(cfg, s) for s in _seeds(cfg)], cfg.workers)
    per.sort(key=lambda r: r["seed"])
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    (Path(cfg.out) / "spectra.json").write_text(json.dumps(_strip(per), indent=2, sort_keys=True) + "\n")
    return {"spectra": per}


def _sigma_one(args):
    cfg, seed = args
    log = _orbit(cfg, seed)
    tr = cones.sigma_trace(log, cap=cfg.sigma_cap)
    return seed, tr, log.kind[: len(tr)].copy()


def cmd_sigma(cfg: RunConfig) -> dict:
    res = sorted(_pool_map(_sigma_one, [(cfg, s) for s in _seeds(cfg)], cfg.workers), key=lambda r: r[0])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    passages = {}
    with open(out / "sigma_traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["orbit", "n", "value", "event_kind"])
        for seed, tr, kinds in res:
            for n, (v, k) in enumerate(zip(tr, kinds), start=1):
                w.writerow([seed, n, repr(float(v)), EventKind(int(k)).name])
            passages[seed] = cones.first_passage(tr, cfg.sufficient)
            if np.any(np.diff(tr) < -1e-9 * tr[1:]):
                raise InvariantViolation(f"sigma trace of orbit {seed} decreases")
    reached = [p for p in passages.values() if p is not None]
    hist = {}
    for p in reached:
        hist[p] = hist.get(p, 0) + 1
    return {
        "level": cfg.sufficient,
        "first_passage": passages,
        "reached": f"{len(reached)}/{len(passages)}",
        "histogram": dict(sorted(hist.items())),
    }


def cmd_unbounded(cfg: RunConfig) -> dict:
    vecs = cones.closure_vectors(cfg.vectors, cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    with open(out / "qtraces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["orbit", "vector", "n", "value", "event_kind"])
        for seed in _seeds(cfg):
            x = random_state(cfg.masses, cfg.energy, seed)
            for j, v in enumerate(vecs):
                thr = cfg.threshold * max(float(v[:3] @ v[3:]), float(v @ v))
                tr = cones.unboundedness_trace(x, v, cfg.events, cfg.masses, stop_above=thr, eps_sing=cfg.eps_sing)
                for n, val, kind in tr.rows():
                    w.writerow([seed, j, n, repr(val), kind])
                if not tr.is_nondecreasing():
                    raise InvariantViolation(f"Q trace decreases (orbit {seed}, vector {j})")
                summary.append({"orbit": seed, "vector": j, "crossing": tr.crossing(thr)})
    return {"vectors": vecs, "traces": summary, "not_crossed": sum(s["crossing"] is None for s in summary)}


def cmd_lambda(cfg: RunConfig) -> dict:
    logs = [_orbit(cfg, s) for s in _seeds(cfg)]
    est = cones.lambda_estimate(logs)
    if not est.value > 0:
        raise InvariantViolation(f"Lambda estimate is not positive: {est.value}")
    return {"lambda": est.value, "per_orbit": est.per_orbit, "windows": est.window_counts, "n_windows": est.n_windows}


def cmd_alignment(cfg: RunConfig) -> dict:
    rows, hist = alignment.alignment_scan(
        cfg.masses, cfg.energy, cfg.seed, cfg.samples, cfg.iterate, cfg.steps, cfg.fd_step, cfg.eps_sing
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    alignment.write_scan_csv(out / "alignment_scan.csv", rows)
    counts = {}
    for r in rows:
        key = f"{r[5]} {'Q>=0' if r[4] >= 0 else 'Q<0'}"
        counts[key] = counts.get(key, 0) + 1
    flags = {}
    for r in rows:
        if r[8]:
            flags[r[8]] = flags.get(r[8], 0) + 1
    if flags.get("not_monotone"):
        raise InvariantViolation(f"{flags['not_monotone']} transported Q sequences decreased")
    return {"samples": len(rows), "class_counts": dict(sorted(counts.items())), "crossing_histogram": hist, "flags": flags}


def cmd_wedge(cfg: RunConfig) -> dict:
    m = cfg.masses
    frame = wedge.generators(m)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "generator_frame.json").write_text(frame.to_json() + "\n")
    res = wedge.mass_relation_residual(m)
    rep = {
        "masses": m.to_dict(),
        "angles": dict(zip(("alpha1", "alpha2", "beta1", "beta2"), wedge.wedge_angles(m))),
        "angle_relation_residual": wedge.angle_relation_residual(m),
        "mass_relation_residual": res,
        "subspace_angle": wedge.subspace_angle(m),
        "subspace_angle_over_pi": wedge.subspace_angle(m) / math.pi,
        "triangle_side_angles_deg": wedge.triangle_side_angles(m),
        "rotated_frame_is_wide": wedge.is_wide(*wedge.rotated_frame(m)),
    }
    if res <= wedge.RELATION_TOL:
        log = _orbit(cfg, cfg.seed)
        wedge.write_polylines(out / "triangle_polylines.csv", wedge.polylines(log))
        rep["triangle_vertices"] = wedge.triangle_vertices(m)
        conj = wedge.conjugacy_check(log)
        rep["conjugacy"] = vars(conj)
        if not conj.within(1e-9):
            raise InvariantViolation("wide-wedge engine disagrees with the folded orbit")
    return rep


def cmd_classify(cfg: RunConfig) -> dict:
    n = int(cfg.segments * 2.6) + 1000
    log = random_orbit(cfg.masses, n, cfg.seed, cfg.energy, eps_sing=cfg.eps_sing)
    while sum(1 for _ in log.segments()) < cfg.segments:
        n *= 2
        log = random_orbit(cfg.masses, n, cfg.seed, cfg.energy, eps_sing=cfg.eps_sing)
    counts, bad = wedge.census(log, cfg.segments)
    if bad:
        raise InvariantViolation(f"{bad} segments violate ball-ball alternation")
    return {"segments": cfg.segments, "counts": counts, "alternation_violations": bad}


def cmd_selftest(cfg: RunConfig) -> dict:
    sizes = checks.QUICK if cfg.quick else checks.FULL
    numbers = [int(x) for x in cfg.only.split(",") if x.strip()] if cfg.only else None
    if numbers and any(n not in checks.CHECKS for n in numbers):
        raise ConfigError(f"only= must list criteria 1-12, got {cfg.only!r}")
    results = checks.run_all(sizes, cfg.masses, cfg.energy, cfg.seed, numbers)
    for r in results:
        print(("PASS" if r.passed else "FAIL") + f" criterion {r.number:2d} {r.title}")
    return {"checks": [r.to_dict() for r in results], "failed": [r.number for r in results if not r.passed]}


COMMANDS = {
    "simulate": cmd_simulate,
    "lyapunov": cmd_lyapunov,
    "sigma": cmd_sigma,
    "unbounded": cmd_unbounded,
    "lambda": cmd_lambda,
    "alignment": cmd_alignment,
    "wedge": cmd_wedge,
    "classify": cmd_classify,
    "selftest": cmd_selftest,
}


HELP = {
    "simulate": "orbit logs (CSV + JSON manifest per orbit)",
    "lyapunov": "Lyapunov spectra (set fd=true for the finite-difference cross-check)",
    "sigma": "sigma traces and the first passage over the sufficient-expansion level",
    "unbounded": "Q traces for a menu of closed-cone vectors",
    "lambda": "uniform gain estimate over designated collision windows",
    "alignment": "triple-collision scan: characteristic lines, Q signs, Mom classes",
    "wedge": "generator frame, angles, mass relation, triangle polylines",
    "classify": "floor-to-floor segment census",
    "selftest": "the acceptance checks (quick=false for full scale)",
}


def _seeds(cfg: RunConfig):
    return range(cfg.seed, cfg.seed + cfg.orbits)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fallingballs", description="Three falling balls: simulation and diagnostics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="JSON or key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", help="output directory (same as --set out=DIR)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--workers", type=int, help="worker processes for orbit ensembles")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, help=HELP[name])
    return p


def _error(cfg_out, sub, kind, exc, code):
    report = {"subcommand": sub, "status": "error", "error": kind, "message": str(exc), "exit_code": code}
    print(json.dumps(report), file=sys.stderr)
    if cfg_out is not None:
        try:
            Path(cfg_out).mkdir(parents=True, exist_ok=True)
            (Path(cfg_out) / "error.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    for key in ("out", "seed", "workers"):
        if getattr(args, key) is not None:
            overrides.append(f"{key}={getattr(args, key)}")
    out = None
    try:
        cfg = load_config(args.config, overrides)
        out = cfg.out
        results = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        return _error(out, args.command, "ConfigError", exc, EXIT_CONFIG)
    except SingularEncounter as exc:
        return _error(out, args.command, "SingularEncounter", exc, EXIT_SINGULAR)
    except InvariantViolation as exc:
        return _error(out, args.command, type(exc).__name__, exc, EXIT_INVARIANT)
    failed = results.get("failed") if args.command == "selftest" else None
    status = "failed" if failed else "ok"
    path = write_report(cfg, args.command, results, status)
    print(f"report: {path}")
    return EXIT_INVARIANT if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
