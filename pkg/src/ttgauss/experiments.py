"""Experiment sweeps over randomized Gaussian models and the pendulum filter.

Each sweep builds high-accuracy density tensors by cross approximation,
truncates them at a ladder of accuracies, records the observed ranks next
to the a-priori bound values, and writes one CSV per experiment.  Output is
deterministic for a fixed configuration: realization seeds are derived from
the base seed, rows are merged in sorted order independent of scheduling,
and floats are printed at full precision.

CSV contract: UTF-8, comma separated, '#'-prefixed metadata lines (config
echo and build id) followed by a header row.  Fields holding rank tuples
join the per-split ranks with ';'.  The execution knobs `out_dir` and
`jobs` do not influence row content and are excluded from the metadata
echo, so reruns are byte-identical wherever they are written.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__
from .cross import CrossConfig, cross_approximate
from .filtering import (
    EkfState,
    PendulumSystem,
    covariance_rank_analysis,
    default_initial_state,
    ekf_predict,
    ekf_update,
    synthesize_data,
    theta1_observation,
)
from .ftt import FttApprox, make_grid, sampled_relative_error, truncate_to_accuracy
from .gaussian import (
    ExpDecaySpectrum,
    FixedRankSpectrum,
    GeneratorConvergenceError,
    bound_exp_decay,
    bound_low_rank,
    density_log,
    gaussian_box_sampler,
    generate_precision,
)

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "SweepResult",
    "default_config",
    "load_config_file",
    "run_dimension_sweep",
    "run_domain_size",
    "run_exp_decay_sweep",
    "run_experiment",
    "run_filtering",
    "run_low_rank_sweep",
]

DENSITY_COLUMNS = (
    "experiment", "spec", "seed", "realization", "d", "a", "n", "eps",
    "max_rank", "ranks", "bound", "c_const", "l_star",
    "delta_appr", "delta_int_proxy", "evaluations", "cross_converged",
    "wall_time_s",
)

FILTERING_COLUMNS = (
    "experiment", "seed", "n_pendulums", "d", "snapshot", "t_snapshot",
    "rank_tol", "max_rank", "worst_decay_slope", "wall_time_s",
)


@dataclass
class ExperimentConfig:
    """Full parameter set of one experiment; see `default_config`.

    A value of 0 for `cross_target` means one order of magnitude below the
    smallest requested accuracy; 0 for `max_evals` means unlimited.
    """

    experiment: str
    seed: int = 0
    out_dir: str = "results"
    jobs: int = 1
    paper_scale: bool = False
    # Gaussian model
    d: int = 15
    lambda_min: float = 0.5
    a: float = 7.0
    n: int = 100
    eps_list: tuple = (1e-2, 1e-3, 1e-4)
    realizations: int = 10
    spec_kind: str = "fixed_rank"
    sigma: float = 1.0
    l_values: tuple = (1, 2, 3, 4)
    fixed_l: int = 2
    alpha: float = 1.0
    theta_values: tuple = (2.5, 2.0, 1.5, 1.0)
    fixed_theta: float = 1.0
    d_values: tuple = (4, 6, 8, 10)
    a_values: tuple = (5.0, 7.0, 9.0)
    n_per_eps: dict = field(default_factory=dict)
    # cross-approximation budget
    cross_target: float = 0.0
    max_evals: int = 0
    max_cross_rank: int = 100
    max_sweeps: int = 60
    initial_rank: int = 4
    rank_increment: int = 4
    validation_samples: int = 1000
    is_samples: int = 2000
    # filtering
    n_pendulums: tuple = (3, 5, 8, 10)
    dt: float = 0.4
    steps: int = 50
    kappa: float = 0.2
    process_noise_var: float = 1e-3
    obs_noise_var: float = 0.04
    rank_tol: float = 1e-2

    def resolved_cross_target(self) -> float:
        if self.cross_target > 0:
            return self.cross_target
        return min(self.eps_list) / 10.0


_DESK_DEFAULTS = {
    "low_rank_sweep": dict(d=15, n=100),
    "exp_decay_sweep": dict(d=12, n=100),
    "dimension_sweep": dict(eps_list=(1e-4,), realizations=5, n=80),
    "domain_size": dict(d=6, n=80, realizations=3),
    "filtering": dict(steps=50),
}

_PAPER_DEFAULTS = {
    "low_rank_sweep": dict(
        d=15, n=270, eps_list=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6), max_cross_rank=250
    ),
    "exp_decay_sweep": dict(
        d=30, n=310, eps_list=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6), max_cross_rank=250
    ),
    "dimension_sweep": dict(
        d_values=(5, 10, 15, 20, 25, 30, 35, 40), eps_list=(1e-4,), n=200,
        realizations=10, max_cross_rank=250,
    ),
    "domain_size": dict(
        d=15, n=200, a_values=(4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0),
        realizations=10, max_cross_rank=250,
    ),
    "filtering": dict(steps=250, n_pendulums=(5, 10, 15, 20)),
}

EXPERIMENTS = tuple(_DESK_DEFAULTS)


def default_config(experiment: str, paper_scale: bool = False) -> ExperimentConfig:
    if experiment not in _DESK_DEFAULTS:
        raise ValueError(f"unknown experiment '{experiment}'; "
                         f"choose one of {', '.join(EXPERIMENTS)}")
    overrides = _PAPER_DEFAULTS[experiment] if paper_scale else _DESK_DEFAULTS[experiment]
    return replace(ExperimentConfig(experiment=experiment),
                   paper_scale=paper_scale, **overrides)


# -- configuration files -------------------------------------------------

def load_config_file(path) -> dict:
    """Parse a ``key = value`` file; lists are comma separated, '#' comments."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(name: str, raw: str, reference):
    if name == "n_per_eps":
        pairs = [p for p in raw.split(",") if p.strip()]
        return {float(k): int(v) for k, v in (p.split(":") for p in pairs)}
    if isinstance(reference, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(reference, tuple):
        items = [p.strip() for p in raw.split(",") if p.strip()]
        kind = float if any(isinstance(x, float) for x in reference) else int
        return tuple(kind(p) for p in items)
    if isinstance(reference, int):
        return int(raw)
    if isinstance(reference, float):
        return float(raw)
    return raw


def apply_overrides(cfg: ExperimentConfig, mapping: dict) -> ExperimentConfig:
    valid = {f.name for f in fields(ExperimentConfig)}
    updates = {}
    for key, raw in mapping.items():
        if key not in valid:
            raise ValueError(f"unknown configuration key '{key}'")
        current = getattr(cfg, key)
        updates[key] = _coerce(key, raw, current) if isinstance(raw, str) else raw
    return replace(cfg, **updates)


# -- result plumbing ------------------------------------------------------

@dataclass
class SweepResult:
    rows: list
    flagged: int
    csv_paths: list


def _realization_seed(base: int, *key) -> int:
    digest = hashlib.sha256("|".join(str(k) for k in key).encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in (0, 4, 8)]
    ss = np.random.SeedSequence([int(base)] + words)
    return int(ss.generate_state(1)[0])


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, tuple):
        return ";".join(str(v) for v in value)
    return str(value)


def _metadata_lines(cfg: ExperimentConfig, columns) -> list:
    skip = {"out_dir", "jobs"}
    items = []
    for f in fields(ExperimentConfig):
        if f.name in skip:
            continue
        value = getattr(cfg, f.name)
        if isinstance(value, dict):
            value = ",".join(f"{k:g}:{v}" for k, v in sorted(value.items()))
        items.append(f"{f.name}={_fmt(value) if not isinstance(value, str) else value}")
    body = "|".join(items) + f"|version={__version__}"
    build_id = hashlib.sha1(body.encode()).hexdigest()[:12]
    lines = [f"# ttgauss {__version__} experiment output",
             f"# build_id = {build_id}"]
    lines += [f"# {item}" for item in items]
    lines.append("# columns: " + ",".join(columns))
    return lines


def write_csv(path, columns, rows, cfg: ExperimentConfig):
    """Metadata header, column header, then rows already in canonical order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _metadata_lines(cfg, columns):
            fh.write(line + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


# -- density experiments ---------------------------------------------------

def _make_spec(kind: str, l: int, sigma: float, alpha: float, theta: float):
    if kind == "fixed_rank":
        return FixedRankSpectrum(l=l, sigma=sigma)
    if kind == "exp_decay":
        return ExpDecaySpectrum(alpha=alpha, theta=theta)
    raise ValueError(f"unknown spectrum kind '{kind}'")


def _bound_columns(spec, lambda_min, d, eps):
    if isinstance(spec, FixedRankSpectrum):
        if spec.sigma == 0.0:
            return 1.0, "", ""
        return bound_low_rank(spec, lambda_min, d, eps), "", ""
    b = bound_exp_decay(spec, lambda_min, d, eps)
    return b.bound, b.c_const, b.l_star


def _gaussian_index_sampler(prec, nodes):
    """Grid-index sampler tracking the target Gaussian's mass region.

    Draws from ``N(0, gamma^{-1})`` and snaps each coordinate to the
    nearest node, so cross validation measures completion error where the
    density lives instead of on the numerically dead far tail.
    """
    chol = np.linalg.cholesky(prec.gamma)
    midpoints = 0.5 * (nodes[1:] + nodes[:-1])

    def sampler(rng, count):
        z = rng.standard_normal((count, prec.d))
        x = np.linalg.solve(chol.T, z.T).T
        return np.searchsorted(midpoints, x)

    return sampler


def _density_task(args):
    """One realization: generate, cross-approximate, truncate at each eps."""
    cfg, label, spec, d, a, rep = args
    seed = _realization_seed(cfg.seed, cfg.experiment, label, rep)
    started = time.perf_counter()
    base = {
        "experiment": cfg.experiment, "spec": spec.describe(), "seed": seed,
        "realization": rep, "d": d, "a": a,
    }
    try:
        prec = generate_precision(d, spec, cfg.lambda_min, seed=seed)
    except GeneratorConvergenceError:
        rows = []
        for eps in cfg.eps_list:
            bound, c_const, l_star = _bound_columns(spec, cfg.lambda_min, d, eps)
            rows.append({**base, "n": cfg.n, "eps": eps, "max_rank": "",
                         "ranks": "", "bound": bound, "c_const": c_const,
                         "l_star": l_star, "delta_appr": "", "delta_int_proxy": "",
                         "evaluations": 0, "cross_converged": False,
                         "wall_time_s": time.perf_counter() - started})
        return rows, True

    groups = {}
    for eps in cfg.eps_list:
        n_here = cfg.n_per_eps.get(eps, cfg.n)
        groups.setdefault(n_here, []).append(eps)

    rows = []
    flagged = False
    for n_here, eps_group in sorted(groups.items()):
        grid = make_grid(d, a, n_here)
        nodes = grid.nodes

        def oracle(idx):
            return np.exp(density_log(prec, nodes[idx]))

        cross_cfg = CrossConfig(
            target_rel_accuracy=cfg.resolved_cross_target(),
            max_rank=cfg.max_cross_rank,
            initial_rank=cfg.initial_rank,
            rank_increment=cfg.rank_increment,
            max_sweeps=cfg.max_sweeps,
            validation_sample_count=cfg.validation_samples,
            rng_seed=seed,
            max_evaluations=cfg.max_evals or None,
            validation_index_sampler=_gaussian_index_sampler(prec, nodes),
        )
        result = cross_approximate(oracle, (n_here,) * d, cross_cfg)
        flagged |= not result.converged
        fa = FttApprox(grid, result.tensor)
        sampler = gaussian_box_sampler(prec, a)
        delta_int = sampled_relative_error(
            fa, lambda pts: np.exp(density_log(prec, pts)), sampler,
            m=cfg.is_samples, seed=seed + 1,
        )
        for eps in eps_group:
            _, ranks = truncate_to_accuracy(fa, eps)
            bound, c_const, l_star = _bound_columns(spec, cfg.lambda_min, d, eps)
            rows.append({
                **base, "n": n_here, "eps": eps,
                "max_rank": max(ranks) if ranks else 1,
                "ranks": tuple(ranks), "bound": bound,
                "c_const": c_const, "l_star": l_star,
                "delta_appr": result.est_rel_error,
                "delta_int_proxy": delta_int,
                "evaluations": result.evaluations,
                "cross_converged": result.converged,
                "wall_time_s": time.perf_counter() - started,
            })
    return rows, flagged


def _run_density_tasks(cfg: ExperimentConfig, tasks):
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_density_task, tasks))
    else:
        outcomes = [_density_task(t) for t in tasks]
    rows = [row for chunk, _ in outcomes for row in chunk]
    flagged = sum(1 for _, bad in outcomes if bad)
    rows.sort(key=lambda r: (r["spec"], r["d"], r["a"], r["realization"], r["eps"]))
    return rows, flagged


def _finish(cfg: ExperimentConfig, name: str, columns, rows, flagged) -> SweepResult:
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"{name}.csv")
    write_csv(path, columns, rows, cfg)
    return SweepResult(rows=rows, flagged=flagged, csv_paths=[path])


def run_low_rank_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Rank ladder l x realizations at fixed sigma (fixed-rank spectra)."""
    tasks = []
    for l in cfg.l_values:
        spec = FixedRankSpectrum(l=l, sigma=cfg.sigma)
        for rep in range(cfg.realizations):
            tasks.append((cfg, f"l={l}", spec, cfg.d, cfg.a, rep))
    rows, flagged = _run_density_tasks(cfg, tasks)
    return _finish(cfg, "low_rank_sweep", DENSITY_COLUMNS, rows, flagged)


def run_exp_decay_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Decay-rate ladder theta x realizations (exponential spectra)."""
    tasks = []
    for theta in cfg.theta_values:
        spec = ExpDecaySpectrum(alpha=cfg.alpha, theta=theta)
        for rep in range(cfg.realizations):
            tasks.append((cfg, f"theta={theta}", spec, cfg.d, cfg.a, rep))
    rows, flagged = _run_density_tasks(cfg, tasks)
    return _finish(cfg, "exp_decay_sweep", DENSITY_COLUMNS, rows, flagged)


def run_dimension_sweep(cfg: ExperimentConfig) -> SweepResult:
    """Dimension ladder at a fixed spectrum family."""
    spec = _make_spec(cfg.spec_kind, cfg.fixed_l, cfg.sigma, cfg.alpha,
                      cfg.fixed_theta)
    tasks = []
    for d in cfg.d_values:
        for rep in range(cfg.realizations):
            tasks.append((cfg, f"d={d}", spec, d, cfg.a, rep))
    rows, flagged = _run_density_tasks(cfg, tasks)
    return _finish(cfg, "dimension_sweep", DENSITY_COLUMNS, rows, flagged)


def run_domain_size(cfg: ExperimentConfig) -> SweepResult:
    """Half-width ladder a at a fixed spectrum family and dimension."""
    spec = _make_spec(cfg.spec_kind, cfg.fixed_l, cfg.sigma, cfg.alpha,
                      cfg.fixed_theta)
    tasks = []
    for a in cfg.a_values:
        for rep in range(cfg.realizations):
            tasks.append((cfg, f"a={a}", spec, cfg.d, a, rep))
    rows, flagged = _run_density_tasks(cfg, tasks)
    return _finish(cfg, "domain_size", DENSITY_COLUMNS, rows, flagged)


# -- filtering experiment ---------------------------------------------------

def _decay_slope(spectrum) -> float:
    """Least-squares slope of log sigma_i vs i over the significant entries."""
    s = np.asarray(spectrum, dtype=float)
    if s.size < 2 or s[0] <= 0:
        return np.nan
    keep = s > s[0] * 1e-13
    s = s[keep]
    if s.size < 2:
        return np.nan
    i = np.arange(1, s.size + 1)
    return float(np.polyfit(i, np.log(s), 1)[0])


def _spectra_csv(path, analysis, cfg, even_only=False):
    d = analysis.d
    blocks = range(2, d, 2) if even_only else range(1, d)
    depth = max(len(analysis.spectra[j - 1]) for j in blocks)
    columns = ["i"] + [f"block_{j}" for j in blocks]
    rows = []
    for i in range(depth):
        row = {"i": i + 1}
        for j in blocks:
            s = analysis.spectra[j - 1]
            row[f"block_{j}"] = float(s[i]) if i < len(s) else ""
        rows.append(row)
    write_csv(path, columns, rows, cfg)


def run_filtering(cfg: ExperimentConfig) -> SweepResult:
    """EKF runs over the pendulum-count ladder with covariance snapshots.

    Snapshots of the covariance block spectra are taken after the update at
    half time and at the final time; each snapshot also lands in two
    spectra CSVs (all blocks, and the even-index view of the figure).
    """
    rows = []
    paths = []
    os.makedirs(cfg.out_dir, exist_ok=True)
    for n_pend in cfg.n_pendulums:
        started = time.perf_counter()
        seed = _realization_seed(cfg.seed, "filtering", n_pend)
        system = PendulumSystem(n_pend, kappa=cfg.kappa,
                                process_noise_var=cfg.process_noise_var)
        obs = theta1_observation(n_pend, cfg.obs_noise_var)
        times = cfg.dt * np.arange(cfg.steps + 1)
        data = synthesize_data(system, default_initial_state(system), times,
                               obs, seed=seed)
        state = EkfState(0.0, np.zeros(system.dim),
                         0.09 * np.eye(system.dim))
        state = ekf_update(state, obs, data[0])
        snapshots = {}
        half = cfg.steps // 2
        for step in range(1, cfg.steps + 1):
            state = ekf_predict(system, state, cfg.dt)
            state = ekf_update(state, obs, data[step])
            if step == half:
                snapshots["half"] = state
        snapshots["final"] = state
        for label in ("half", "final"):
            snap = snapshots[label]
            analysis, max_rank = covariance_rank_analysis(snap.cov, cfg.rank_tol)
            slopes = [_decay_slope(s) for s in analysis.spectra]
            slopes = [s for s in slopes if np.isfinite(s)]
            rows.append({
                "experiment": cfg.experiment, "seed": seed,
                "n_pendulums": n_pend, "d": system.dim, "snapshot": label,
                "t_snapshot": snap.t, "rank_tol": cfg.rank_tol,
                "max_rank": max_rank,
                "worst_decay_slope": max(slopes) if slopes else np.nan,
                "wall_time_s": time.perf_counter() - started,
            })
            for suffix, even in (("", False), ("_even", True)):
                path = os.path.join(
                    cfg.out_dir, f"filtering_spectra_N{n_pend}_{label}{suffix}.csv"
                )
                _spectra_csv(path, analysis, cfg, even_only=even)
                paths.append(path)
    rows.sort(key=lambda r: (r["n_pendulums"], r["snapshot"]))
    summary = os.path.join(cfg.out_dir, "filtering.csv")
    write_csv(summary, FILTERING_COLUMNS, rows, cfg)
    return SweepResult(rows=rows, flagged=0, csv_paths=[summary] + paths)


_RUNNERS = {
    "low_rank_sweep": run_low_rank_sweep,
    "exp_decay_sweep": run_exp_decay_sweep,
    "dimension_sweep": run_dimension_sweep,
    "domain_size": run_domain_size,
    "filtering": run_filtering,
}


def run_experiment(cfg: ExperimentConfig) -> SweepResult:
    try:
        runner = _RUNNERS[cfg.experiment]
    except KeyError:
        raise ValueError(f"unknown experiment '{cfg.experiment}'") from None
    return runner(cfg)
