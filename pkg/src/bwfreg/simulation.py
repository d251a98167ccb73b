"""Synthetic data generators and Monte-Carlo experiment drivers.

Seeding: a master seed ``s`` and a trial index ``t`` give the trial stream
``SeedSequence(s, spawn_key=(t,))``; every trial draws from its own Philox
generator, so results do not depend on the order or process in which
trials run.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Literal

import numpy as np
from scipy import stats

from . import __version__
from .config import DEFAULT
from .errors import BWFError, OddDimension, RankDeficientSurrogate
from .geometry import sym
from .inference import DEFAULT_MC, clt_covariance, confidence_interval, run_test
from .regression import Dataset, FitConfig, empirical_moments, fit

log = logging.getLogger(__name__)

# |V_kk| below this is redrawn so every response stays safely positive definite
V_MIN_ABS = 1e-4
V_MAX_ABS = 0.1
MEAN_ABS_V = 0.5 * (V_MIN_ABS + V_MAX_ABS)  # E|V_kk| after redrawing


def trial_rng(master_seed: int, trial: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial, stream))
    return np.random.Generator(np.random.Philox(ss))


def trial_seed(master_seed: int, trial: int) -> int:
    """Integer seed of trial ``trial``, derived from the master seed."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class ExampleConfig:
    """Parameters of the two synthetic regression models.

    ``which=1``: responses share one random eigenbasis and commute.
    ``which=2``: responses are rotated by fresh block-diagonal rotations.
    """

    which: Literal[1, 2] = 1
    n: int = 200
    p: int = 5
    d: int = 5
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.which not in (1, 2):
            raise ValueError("which must be 1 or 2")
        if self.n < 2 or self.p < 1 or self.d < 1:
            raise ValueError("need n >= 2, p >= 1, d >= 1")
        if not abs(self.delta) < 2.0 / self.p:
            raise ValueError(f"delta must lie in (-2/p, 2/p), got {self.delta}")
        if self.which == 2 and self.d % 2:
            raise OddDimension(f"the second example needs an even dimension, got d={self.d}")


def haar_orthogonal(d: int, rng, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrix (or a stack of ``size`` of them)."""
    rng = _rng(rng)
    shape = (d, d) if size is None else (size, d, d)
    Z = rng.standard_normal(shape)
    Qm, R = np.linalg.qr(Z)
    signs = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return Qm * signs[..., None, :]


def _uniform_v(rng: np.random.Generator, shape) -> np.ndarray:
    v = rng.uniform(-V_MAX_ABS, V_MAX_ABS, size=shape)
    small = np.abs(v) < V_MIN_ABS
    while np.any(small):
        v[small] = rng.uniform(-V_MAX_ABS, V_MAX_ABS, size=int(small.sum()))
        small = np.abs(v) < V_MIN_ABS
    return v


def diagonal_profile(x, delta: float, d: int, which: int) -> np.ndarray:
    """Diagonal of ``f(x; δ)`` (``which=1``) or ``g(x; δ)`` (``which=2``)."""
    x = np.asarray(x, dtype=float)
    k = np.arange(1, d + 1)
    base = 1.5 + k / 2.0 if which == 1 else 1.5 + 0.5 * np.ceil(k / 2.0)
    return base + delta * x.sum(axis=-1)[..., None]


def generate_example1(cfg: ExampleConfig):
    """Commuting responses ``Q_i = U V_i f(X_i)² V_i U^T`` with one shared rotation.

    Returns ``(dataset, true_mean)`` where ``true_mean(x)`` is the exact
    conditional Fréchet mean ``(E|V|)² U f(x)² U^T``.
    """
    rng = _rng(cfg.seed)
    X = rng.uniform(-1.0, 1.0, size=(cfg.n, cfg.p))
    U = haar_orthogonal(cfg.d, rng)
    v = _uniform_v(rng, (cfg.n, cfg.d))
    f = diagonal_profile(X, cfg.delta, cfg.d, 1)
    Q = sym((U * ((v * f) ** 2)[:, None, :]) @ U.T)

    def true_mean(x):
        fx = diagonal_profile(x, cfg.delta, cfg.d, 1)
        return sym((U * (MEAN_ABS_V * fx) ** 2) @ U.T)

    return Dataset(X, Q), true_mean


def _block_rotations(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    blocks = haar_orthogonal(2, rng, size=n * (d // 2)).reshape(n, d // 2, 2, 2)
    U = np.zeros((n, d, d))
    for b in range(d // 2):
        U[:, 2 * b : 2 * b + 2, 2 * b : 2 * b + 2] = blocks[:, b]
    return U


def generate_example2(cfg: ExampleConfig):
    """Non-commuting responses ``Q_i = U_i V_i g(X_i)² V_i U_i^T``.

    ``U_i`` is block diagonal with independent Haar 2x2 blocks, drawn
    afresh per sample. ``true_mean(x) = (E|V|)² g(x)²``.
    """
    if cfg.d % 2:
        raise OddDimension(f"the second example needs an even dimension, got d={cfg.d}")
    rng = _rng(cfg.seed)
    X = rng.uniform(-1.0, 1.0, size=(cfg.n, cfg.p))
    U = _block_rotations(rng, cfg.n, cfg.d)
    v = _uniform_v(rng, (cfg.n, cfg.d))
    g = diagonal_profile(X, cfg.delta, cfg.d, 2)
    Q = sym((U * ((v * g) ** 2)[:, None, :]) @ np.swapaxes(U, -1, -2))

    def true_mean(x):
        return np.diag((MEAN_ABS_V * diagonal_profile(x, cfg.delta, cfg.d, 2)) ** 2)

    return Dataset(X, Q), true_mean


def generate(cfg: ExampleConfig):
    return generate_example1(cfg) if cfg.which == 1 else generate_example2(cfg)


def surrogate_responses(data: Dataset, n_tilde: int, rng) -> Dataset:
    """Replace every response by the sample covariance of ``n_tilde`` draws from ``N(0, Q_i)``."""
    if n_tilde < data.d:
        raise RankDeficientSurrogate(f"n_tilde={n_tilde} is below the dimension {data.d}")
    rng = _rng(rng)
    lam, V = np.linalg.eigh(data.responses)
    L = (V * np.sqrt(np.clip(lam, 0.0, None))[:, None, :]) @ np.swapaxes(V, -1, -2)
    Z = rng.standard_normal((data.n, n_tilde, data.d))
    G = np.einsum("nka,nkb->nab", Z, Z) / n_tilde
    Qbar = sym(L @ G @ L)
    low = np.linalg.eigvalsh(Qbar)[:, 0]
    if np.any(low <= DEFAULT.eig_floor):
        raise RankDeficientSurrogate(f"surrogate for sample {int(np.argmin(low))} is singular")
    return Dataset(data.covariates, Qbar)


@dataclass
class ExperimentReport:
    """Plot-ready experiment output.

    ``rows`` holds one record per trial and setting; ``summary`` aggregates
    them; ``metadata`` holds the full configuration and seeds.
    """

    kind: Literal["QQ", "Size", "Power", "Coverage", "NullQQ"]
    rows: list[dict]
    metadata: dict
    summary: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_csv(self, path: str) -> None:
        _write_csv(path, self.rows)

    def write(self, prefix: str) -> dict:
        """Write ``<prefix>.csv``, ``<prefix>_summary.csv`` and ``<prefix>.json``."""
        paths = {"rows": prefix + ".csv", "summary": prefix + "_summary.csv", "metadata": prefix + ".json"}
        _write_csv(paths["rows"], self.rows)
        _write_csv(paths["summary"], self.summary)
        side = {
            "kind": self.kind,
            "metadata": self.metadata,
            "summary": self.summary,
            "diagnostics": self.diagnostics,
            "version": __version__,
        }
        with open(paths["metadata"], "w") as fh:
            json.dump(_jsonable(side), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return paths


def _write_csv(path: str, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols or ["empty"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("BWF_NUM_THREADS", "1")))
    except ValueError:
        return 1


def _map_trials(fn: Callable, tasks: list, workers: int | None = None) -> list:
    workers = num_workers() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _guarded(fn, task):
    try:
        return fn(task), None
    except BWFError as exc:
        return None, exc.to_dict()


def _collect(results, trials: int, max_fail: float = 0.05):
    failures = [(k, err) for k, (_, err) in enumerate(results) if err is not None]
    if trials and len(failures) >= max(1, max_fail * trials) and len(failures) / trials >= max_fail:
        raise RuntimeError(f"{len(failures)} of {trials} trials failed; first: {failures[0][1]}")
    return [r for r, err in results if err is None], failures


# --- Q-Q / coverage of the pointwise CLT ---------------------------------

@dataclass(frozen=True)
class _QQTask:
    cfg: ExampleConfig
    trial: int
    master_seed: int
    x0: tuple
    entries: tuple
    level: float
    n_tilde: int
    fit_config: FitConfig


def _qq_trial(task: _QQTask):
    def body(t: _QQTask):
        cfg = replace(t.cfg, seed=trial_seed(t.master_seed, t.trial))
        data, truth = generate(cfg)
        if t.n_tilde:
            data = surrogate_responses(data, t.n_tilde, trial_rng(t.master_seed, t.trial, stream=1))
        x0 = np.asarray(t.x0, dtype=float)
        mom = empirical_moments(data)
        f = fit(x0, data, mom, t.fit_config)
        clt = clt_covariance(x0, data, f, mom)
        q_true = truth(x0)
        rows = []
        for i, j in t.entries:
            v = float(clt.entry_variances[i, j])
            err = float(np.sqrt(data.n) * (f.estimate[i, j] - q_true[i, j]) / np.sqrt(v))
            lo, hi = confidence_interval(x0, (i, j), t.level, clt, f, data.n)
            rows.append(
                {
                    "trial": t.trial,
                    "row": i,
                    "col": j,
                    "estimate": float(f.estimate[i, j]),
                    "truth": float(q_true[i, j]),
                    "variance": v,
                    "normalized_error": err,
                    "lo": lo,
                    "hi": hi,
                    "covered": bool(lo <= q_true[i, j] <= hi),
                    "iters": f.iters,
                    "converged": f.converged,
                }
            )
        return rows

    return _guarded(body, task)


def qq_line(sample: np.ndarray, reference_quantiles: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of sorted ``sample`` on reference quantiles."""
    y = np.sort(np.asarray(sample, dtype=float))
    res = stats.linregress(np.asarray(reference_quantiles, dtype=float), y)
    return float(res.slope), float(res.intercept)


def plotting_positions(m: int) -> np.ndarray:
    return (np.arange(1, m + 1) - 0.5) / m


def run_qq_experiment(
    cfg: ExampleConfig,
    trials: int,
    x0=None,
    entries=((0, 0), (1, 0)),
    seed: int = 0,
    level: float = 0.95,
    n_tilde: int = 0,
    fit_config: FitConfig = FitConfig(),
    kind: str = "QQ",
) -> ExperimentReport:
    """Normalized errors ``√n (Q̂(x0) - Q*(x0))_ij / √v̂_ij`` across trials.

    The summary holds, per entry, the Kolmogorov-Smirnov distance and
    p-value against N(0, 1), the Q-Q line and the empirical coverage of the
    ``level`` confidence interval.
    """
    x0 = tuple(np.zeros(cfg.p) if x0 is None else np.asarray(x0, dtype=float).reshape(-1))
    entries = tuple(tuple(int(a) for a in e) for e in entries)
    tasks = [_QQTask(cfg, t, seed, x0, entries, level, n_tilde, fit_config) for t in range(trials)]
    results, failures = _collect(_map_trials(_qq_trial, tasks), trials)
    rows = [r for rs in results for r in rs]
    summary = []
    for i, j in entries:
        z = np.array([r["normalized_error"] for r in rows if (r["row"], r["col"]) == (i, j)])
        if z.size == 0:
            continue
        ks = stats.kstest(z, "norm")
        slope, intercept = qq_line(z, stats.norm.ppf(plotting_positions(z.size)))
        cov = np.mean([r["covered"] for r in rows if (r["row"], r["col"]) == (i, j)])
        summary.append(
            {
                "row": i,
                "col": j,
                "trials": int(z.size),
                "ks_statistic": float(ks.statistic),
                "ks_pvalue": float(ks.pvalue),
                "qq_slope": slope,
                "qq_intercept": intercept,
                "coverage": float(cov),
            }
        )
    meta = {
        "example": asdict(cfg),
        "trials": trials,
        "master_seed": seed,
        "trial_seeds": [trial_seed(seed, t) for t in range(trials)],
        "x0": list(x0),
        "entries": [list(e) for e in entries],
        "level": level,
        "n_tilde": n_tilde,
        "fit_config": _fit_config_dict(fit_config),
    }
    return ExperimentReport(kind=kind, rows=rows, metadata=meta, summary=summary, diagnostics={"failures": failures})


def run_coverage_experiment(cfg: ExampleConfig, trials: int, **kwargs) -> ExperimentReport:
    return run_qq_experiment(cfg, trials, kind="Coverage", **kwargs)


def _fit_config_dict(fc: FitConfig) -> dict:
    init = fc.init if isinstance(fc.init, str) else np.asarray(fc.init).tolist()
    return {"eta": fc.eta, "max_iters": fc.max_iters, "eps": fc.eps, "init": init}


# --- size, power and the null Q-Q of the test statistic -------------------

NULL_GRID = 500  # null quantiles kept per trial for the pooled reference distribution


@dataclass(frozen=True)
class _TestTask:
    cfg: ExampleConfig
    trial: int
    master_seed: int
    alpha: float
    mc: int
    n_tilde: int
    fit_config: FitConfig


def _test_trial(task: _TestTask):
    def body(t: _TestTask):
        cfg = replace(t.cfg, seed=trial_seed(t.master_seed, t.trial))
        data, _ = generate(cfg)
        if t.n_tilde:
            data = surrogate_responses(data, t.n_tilde, trial_rng(t.master_seed, t.trial, stream=1))
        res, draws = run_test(data, t.alpha, t.fit_config, t.mc, seed=cfg.seed, keep_null=True)
        grid = draws[np.minimum((plotting_positions(NULL_GRID) * draws.size).astype(int), draws.size - 1)]
        row = {
            "trial": t.trial,
            "delta": t.cfg.delta,
            "statistic": res.statistic,
            "quantile": res.quantile,
            "p_value": res.p_value,
            "reject": res.reject,
            "n_eigenvalues": int(np.sum(res.eigenvalues > 0)),
        }
        return row, grid

    return _guarded(body, task)


def run_size_power(
    cfg: ExampleConfig,
    deltas,
    trials: int,
    alpha: float = 0.05,
    mc: int = DEFAULT_MC,
    seed: int = 0,
    n_tilde: int = 0,
    fit_config: FitConfig = FitConfig(),
) -> ExperimentReport:
    """Rejection rates of the level-``alpha`` test over a grid of effect sizes.

    Trial ``t`` uses the same covariate and noise stream for every ``δ``.
    The summary has one row per ``δ``; ``diagnostics`` flags decreases of
    the rejection rate in ``|δ|`` larger than two Monte-Carlo standard errors
    and, for ``δ = 0``, the Q-Q line of the statistic against the pooled
    plug-in null.
    """
    deltas = [float(dl) for dl in deltas]
    rows, summary, diagnostics = [], [], {"failures": {}}
    for dl in deltas:
        c = replace(cfg, delta=dl)
        tasks = [_TestTask(c, t, seed, alpha, mc, n_tilde, fit_config) for t in range(trials)]
        results, failures = _collect(_map_trials(_test_trial, tasks), trials)
        rows.extend(r for r, _ in results)
        diagnostics["failures"][repr(dl)] = failures
        rej = np.array([r["reject"] for r, _ in results], dtype=float)
        rate = float(rej.mean()) if rej.size else float("nan")
        se = float(np.sqrt(max(rate * (1 - rate), 1e-12) / max(rej.size, 1)))
        entry = {"delta": dl, "trials": int(rej.size), "rejection_rate": rate, "std_error": se}
        if dl == 0.0 and results:
            stat_arr = np.array([r["statistic"] for r, _ in results])
            pooled = np.sort(np.concatenate([g for _, g in results]))
            ref = np.quantile(pooled, plotting_positions(stat_arr.size))
            slope, intercept = qq_line(stat_arr, ref)
            diagnostics["null_qq"] = {
                "slope": slope,
                "intercept": intercept,
                "null_median": float(np.median(pooled)),
                "reference_quantiles": ref.tolist(),
                "sorted_statistics": np.sort(stat_arr).tolist(),
            }
        summary.append(entry)
    order = sorted(range(len(summary)), key=lambda k: abs(summary[k]["delta"]))
    drops = []
    for a, b in zip(order, order[1:]):
        ra, rb = summary[a], summary[b]
        tol = 2.0 * np.hypot(ra["std_error"], rb["std_error"])
        if rb["rejection_rate"] < ra["rejection_rate"] - tol:
            drops.append([ra["delta"], rb["delta"]])
    diagnostics["monotone_in_abs_delta"] = not drops
    diagnostics["violations"] = drops
    meta = {
        "example": asdict(cfg),
        "deltas": deltas,
        "trials": trials,
        "alpha": alpha,
        "mc": mc,
        "master_seed": seed,
        "trial_seeds": [trial_seed(seed, t) for t in range(trials)],
        "n_tilde": n_tilde,
        "fit_config": _fit_config_dict(fit_config),
    }
    kind = "Size" if deltas == [0.0] else "Power"
    return ExperimentReport(kind=kind, rows=rows, metadata=meta, summary=summary, diagnostics=diagnostics)
