"""Experiment runner: ``pdextra --preset l1-accel --out runs/``.

Every run writes one CSV per (configuration, replicate).  Files start with
``#``-prefixed ``key=value`` lines describing the run, followed by the
columns ``iter,J_gamma,tau,sigma,omega,primal_change,feasibility,wall_time_ms``.
Replicated configurations also get a ``*_mean.csv`` with the per-iteration
mean of every column.  A ``summary.csv``/``summary.txt`` pair closes the
output directory.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .engine import IterationError, StepSchedule, run
from .fem1d import build_mesh
from .problems import DEFAULTS, RNG_METHOD, NoiseConfig, lipschitz_estimate, make_problem

log = logging.getLogger("pdextra")

COLUMNS = ("iter", "J_gamma", "tau", "sigma", "omega", "primal_change", "feasibility", "wall_time_ms")
FULL_ACCEL = 1 - 1e-16


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "l1"
    n: int = 1000
    gamma: float = 1e-12
    mu: float = 0.0
    alpha: float | None = None
    delta: float | None = None
    nbins: int = 11
    cbound: float = 0.68
    iters: int = 1000
    accel_iters: int | None = None
    seed: int = 0
    replicates: int = 1
    noise: bool = True

    def validate(self):
        problems = tuple(DEFAULTS)
        if self.problem not in problems:
            raise ValueError(f"--problem must be one of {', '.join(problems)}")
        if self.n < 2:
            raise ValueError("--n must be at least 2")
        if self.gamma < 0:
            raise ValueError("--gamma must be non-negative")
        if self.mu < 0:
            raise ValueError("--mu must be non-negative")
        if self.iters < 1:
            raise ValueError("--iters must be at least 1")
        if self.accel_iters is not None and self.accel_iters < 0:
            raise ValueError("--accel-iters must be non-negative")
        if self.replicates < 1:
            raise ValueError("--replicates must be at least 1")
        if self.nbins < 2:
            raise ValueError("--nbins must be at least 2")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("--alpha must be positive")
        if self.delta is not None and self.delta < 0:
            raise ValueError("--delta must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("--seed must fit in 64 bits")
        return self

    @property
    def label(self) -> str:
        mu = "0" if self.mu == 0 else ("1" if self.mu == FULL_ACCEL else f"{self.mu:g}")
        return f"{self.problem}_n{self.n}_g{self.gamma:g}_mu{mu}"


def _sweep(base, key, values):
    return [replace(base, **{key: v}) for v in values]


def _accel_pair(base):
    return _sweep(base, "mu", [0.0, FULL_ACCEL])


def _preset_base(problem):
    iters = 1000 if problem == "l1" else 10000
    return ExperimentConfig(problem=problem, n=1000, gamma=1e-12, iters=iters)


def expand_preset(name: str) -> list[ExperimentConfig]:
    """Configurations of a named experiment, e.g. ``linf-gamma``."""
    try:
        problem, kind = name.split("-")
    except ValueError:
        problem = kind = None
    if problem not in DEFAULTS or kind not in ("accel", "mesh", "gamma"):
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    base = _preset_base(problem)
    if kind == "accel":
        return _accel_pair(base)
    if kind == "mesh":
        base = replace(base, mu=FULL_ACCEL, replicates=10 if problem == "l1" else 1)
        return _sweep(base, "n", [100, 1000, 10000])
    return [c for g in (1e-1, 1e-3, 1e-6) for c in _accel_pair(replace(base, gamma=g))]


PRESETS = [f"{p}-{k}" for p in DEFAULTS for k in ("accel", "mesh", "gamma")]


def build_problem(cfg: ExperimentConfig, replicate: int = 0):
    mesh = build_mesh(cfg.n)
    kw = {"gamma": cfg.gamma, "alpha": cfg.alpha}
    if cfg.problem == "l1":
        noise_level = DEFAULTS["l1"]["noise_delta"] if cfg.delta is None else cfg.delta
        noise = NoiseConfig("impulsive", r=DEFAULTS["l1"]["noise_r"], delta=noise_level, seed=cfg.seed, replicate=replicate)
        kw["noise"] = noise if cfg.noise else NoiseConfig("none")
    elif cfg.problem == "linf":
        kw.update(delta=cfg.delta, nbins=cfg.nbins)
        if not cfg.noise:
            kw["noise"] = NoiseConfig("none", n_b=cfg.nbins)
    else:
        kw["c"] = cfg.cbound
    return make_problem(cfg.problem, mesh, **kw)


def run_single(cfg: ExperimentConfig, replicate: int = 0):
    """Run one replicate; returns ``(header dict, records)``."""
    problem = build_problem(cfg, replicate)
    u0 = np.ones(cfg.n)
    p0 = np.zeros(cfg.n + 1)
    L, sigma0, tau0 = lipschitz_estimate(problem, u0)
    sched = StepSchedule(tau=tau0, sigma=sigma0, mu=cfg.mu, mode="accel-G")
    result = run(problem, sched, u0, p0, cfg.iters, n_accel=cfg.accel_iters)
    prm = problem.params
    header = {k: v for k, v in asdict(cfg).items()}
    header.update(
        replicate=replicate,
        alpha_used=prm.alpha,
        delta_used=prm.delta if cfg.problem == "linf" else None,
        L_tilde=L,
        sigma0=sigma0,
        tau0=tau0,
        J0=result.J0,
        rng=RNG_METHOD,
        version=__version__,
    )
    header.update({k: v for k, v in problem.info.items()})
    return header, result.records


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(header: dict, rows) -> str:
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def record_rows(records):
    return [
        (r.i, r.J_gamma, r.tau, r.sigma, r.omega, r.primal_change, r.feasibility, r.wall_time_ms)
        for r in records
    ]


def write_csv(path: Path, header: dict, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(render_csv(header, rows))


def mean_rows(row_sets):
    arr = np.mean(np.array([[list(r) for r in rows] for rows in row_sets], dtype=float), axis=0)
    return [(int(row[0]),) + tuple(float(x) for x in row[1:]) for row in arr]


def _run_job(args):
    cfg, rep = args
    return run_single(cfg, rep)


def run_experiment(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> list[Path]:
    """Run all replicates of ``cfg`` and write their CSVs into ``out``."""
    cfg.validate()
    out = Path(out)
    tasks = [(cfg, k) for k in range(cfg.replicates)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_job, tasks))
    else:
        results = [_run_job(t) for t in tasks]
    paths = []
    row_sets = []
    for (header, records), (_, k) in zip(results, tasks):
        rows = record_rows(records)
        row_sets.append(rows)
        path = out / f"{cfg.label}_seed{cfg.seed}_rep{k}.csv"
        write_csv(path, header, rows)
        paths.append(path)
    if cfg.replicates > 1:
        header = dict(results[0][0])
        header["replicate"] = f"mean of {cfg.replicates}"
        for key in ("J0", "corrupted_nodes"):
            header.pop(key, None)
        path = out / f"{cfg.label}_seed{cfg.seed}_mean.csv"
        write_csv(path, header, mean_rows(row_sets))
        paths.append(path)
    return paths


# summaries


class CSVFormatError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass(frozen=True)
class RunLog:
    path: str
    header: dict
    data: np.ndarray

    def column(self, name):
        return self.data[:, COLUMNS.index(name)]


def read_csv(path) -> RunLog:
    header = {}
    rows = []
    seen_columns = False
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line.startswith("#"):
                if seen_columns:
                    raise CSVFormatError(path, lineno, "metadata line after the data started")
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise CSVFormatError(path, lineno, "metadata line is not key=value")
                header[key] = value
                continue
            if not seen_columns:
                if tuple(line.split(",")) != COLUMNS:
                    raise CSVFormatError(path, lineno, f"expected column header {','.join(COLUMNS)}")
                seen_columns = True
                continue
            parts = line.split(",")
            if len(parts) != len(COLUMNS):
                raise CSVFormatError(path, lineno, f"expected {len(COLUMNS)} fields, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise CSVFormatError(path, lineno, str(exc)) from None
            if vals[0] != len(rows) + 1:
                raise CSVFormatError(path, lineno, f"iteration index {parts[0]} out of sequence")
            rows.append(vals)
    if not seen_columns:
        raise CSVFormatError(path, 1, "no column header found")
    if not rows:
        raise CSVFormatError(path, 1, "no data rows")
    return RunLog(str(path), header, np.array(rows))


def iterations_to_tolerance(J, rel=0.01) -> int:
    """First iteration after which ``J`` stays within ``rel`` of its final value."""
    J = np.asarray(J, dtype=float)
    outside = np.nonzero(np.abs(J - J[-1]) > rel * abs(J[-1]))[0]
    return 1 if outside.size == 0 else int(outside[-1]) + 2


@dataclass(frozen=True)
class SummaryRow:
    run: str
    final_J: float
    iters_to_1pct: int
    final_feasibility: float
    wall_time_ms: float


def summarize(paths) -> list[SummaryRow]:
    out = []
    for p in paths:
        log_ = read_csv(p)
        J = log_.column("J_gamma")
        out.append(
            SummaryRow(
                run=Path(p).stem,
                final_J=float(J[-1]),
                iters_to_1pct=iterations_to_tolerance(J),
                final_feasibility=float(log_.column("feasibility")[-1]),
                wall_time_ms=float(np.sum(log_.column("wall_time_ms"))),
            )
        )
    return out


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(SummaryRow)])
    for r in rows:
        w.writerow([_fmt(getattr(r, f.name)) for f in fields(SummaryRow)])
    return buf.getvalue()


def summary_text(rows) -> str:
    width = max([len(r.run) for r in rows] + [3])
    lines = [f"{'run':<{width}}  {'final J_gamma':>14}  {'iters to 1%':>11}  {'feasibility':>11}  {'wall [s]':>8}"]
    for r in rows:
        lines.append(
            f"{r.run:<{width}}  {r.final_J:>14.6e}  {r.iters_to_1pct:>11d}  {r.final_feasibility:>11.3e}  {r.wall_time_ms / 1e3:>8.2f}"
        )
    return "\n".join(lines) + "\n"


# command line

FLAG_FIELDS = {
    "problem": str,
    "n": int,
    "gamma": float,
    "mu": float,
    "alpha": float,
    "delta": float,
    "nbins": int,
    "cbound": float,
    "iters": int,
    "accel_iters": int,
    "seed": int,
    "replicates": int,
}


def read_config_file(path) -> dict:
    """Flat ``key=value`` file; blank lines and ``#`` comments are ignored."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in FLAG_FIELDS and key not in ("preset", "out", "noise"):
                raise ValueError(f"{path}:{lineno}: expected key=value with a known key, got {raw.strip()!r}")
            values[key] = value.strip()
    return values


def _parse_bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def make_parser():
    p = argparse.ArgumentParser(
        prog="pdextra",
        description="Accelerated nonlinear primal-dual experiments on 1D elliptic model problems.",
    )
    p.add_argument("--preset", choices=PRESETS, help="named experiment (expands into several runs)")
    p.add_argument("--config", type=Path, help="flat key=value file; flags override its values")
    p.add_argument("--problem", choices=tuple(DEFAULTS))
    p.add_argument("--n", type=int, help="number of elements")
    p.add_argument("--gamma", type=float, help="Moreau-Yosida parameter")
    p.add_argument("--mu", type=float, help="acceleration parameter (0 disables)")
    p.add_argument("--alpha", type=float, help="regularization weight (l1, state)")
    p.add_argument("--delta", type=float, help="noise level (l1) or fitting tolerance (linf)")
    p.add_argument("--nbins", type=int, help="quantization bins (linf)")
    p.add_argument("--cbound", type=float, help="state bound c (state)")
    p.add_argument("--iters", type=int, help="iterations N")
    p.add_argument("--accel-iters", type=int, help="stop acceleration after this many iterations")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--replicates", type=int, help="data realizations per configuration")
    p.add_argument("--no-noise", action="store_true", help="use exact data")
    p.add_argument("--out", type=Path, help="output directory (default: runs)")
    p.add_argument("--jobs", type=int, default=1, help="parallel replicate workers")
    p.add_argument("--summarize", nargs="+", type=Path, metavar="CSV", help="only summarize existing CSV logs")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve_configs(args) -> tuple[list[ExperimentConfig], Path]:
    file_vals = read_config_file(args.config) if args.config else {}
    preset = args.preset or file_vals.pop("preset", None)
    out = args.out or Path(file_vals.pop("out", "runs"))
    overrides = {}
    for key, conv in FLAG_FIELDS.items():
        if key in file_vals:
            try:
                overrides[key] = conv(file_vals[key])
            except ValueError:
                raise ValueError(f"config value for {key} is not a valid {conv.__name__}: {file_vals[key]!r}") from None
    if "noise" in file_vals:
        overrides["noise"] = _parse_bool(file_vals["noise"])
    for key in FLAG_FIELDS:
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    if args.no_noise:
        overrides["noise"] = False
    if preset:
        configs = expand_preset(preset)
    else:
        problem = overrides.get("problem", "l1")
        configs = [_preset_base(problem)]
    configs = [replace(c, **overrides).validate() for c in configs]
    return configs, out


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.summarize:
            rows = summarize(args.summarize)
            sys.stdout.write(summary_text(rows))
            return 0
        configs, out = resolve_configs(args)
        written = []
        for cfg in configs:
            log.info("running %s (%d replicate(s), N=%d)", cfg.label, cfg.replicates, cfg.iters)
            written.extend(run_experiment(cfg, out, jobs=args.jobs))
        rows = summarize(written)
        (out / "summary.csv").write_text(summary_csv(rows))
        (out / "summary.txt").write_text(summary_text(rows))
        sys.stdout.write(summary_text(rows))
    except (ValueError, OSError, IterationError) as exc:
        print(f"pdextra: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
