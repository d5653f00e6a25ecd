"""Synthetic scenarios, the Monte Carlo harness, stream ingestion and metrics."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .hedge import HEDGE_GRID, OLCPHedge
from .localization import silverman_bandwidth
from .online import ACI, LCP, OLCP, DtACI, SplitCP, StepRecord, default_gamma

METHODS = ("CP", "LCP", "ACI", "DtACI", "OLCP", "OLCP-Hedge")
SCENARIOS = ("A", "B", "C")


def canonical_method(name: str) -> str:
    lookup = {m.lower(): m for m in METHODS}
    key = name.strip().lower().replace("_", "-")
    if key not in lookup:
        raise ValueError(f"unknown method {name!r}; valid: {', '.join(METHODS)}")
    return lookup[key]


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "A"
    T: int = 1500
    train_len: int = 500
    R: int = 200
    alpha: float = 0.1
    reps: int = 100
    seed: int = 0
    gamma: Optional[float] = None
    bandwidth_grid: tuple = HEDGE_GRID

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; valid: {', '.join(SCENARIOS)}")
        if not 2 <= self.train_len < self.T:
            raise ValueError("need 2 <= train_len < T")
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.reps < 0:
            raise ValueError("reps must be >= 0")


def ar_step(scenario: str, t: int, y_prev: float, eps: float, T: int) -> float:
    """One transition of the scenario's AR(1) recursion at time ``t`` (1-based)."""
    if scenario == "A":
        return 0.5 * y_prev + eps
    if scenario == "B":
        sigma = min(math.exp(0.25 * y_prev), 10.0)
        return 0.5 * y_prev + sigma * eps
    if scenario == "C":
        phi = 0.8 if t <= T / 2 else -0.8
        return phi * y_prev + eps
    raise ValueError(f"unknown scenario {scenario!r}")


def generate_scenario(config: ScenarioConfig, rng: np.random.Generator, noise=None):
    """Simulate ``Y_0 = 0, Y_1..Y_T``; return ``(X, Y)`` with ``X_t = Y_{t-1}``, both of length T."""
    T = config.T
    eps = rng.standard_normal(T) if noise is None else np.asarray(noise, dtype=float)
    y = np.zeros(T + 1)
    for t in range(1, T + 1):
        y[t] = ar_step(config.scenario, t, y[t - 1], eps[t - 1], T)
    return y[:-1].copy(), y[1:].copy()


def ols_fit(x, y) -> tuple[float, float]:
    """Least-squares ``(slope, intercept)`` for scalar ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise ValueError("need at least two (x, y) pairs")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-12 * max(1.0, float(x @ x)):
        raise ValueError("degenerate design")
    slope = float(xc @ (y - y.mean())) / sxx
    return slope, float(y.mean() - slope * x.mean())


def build_methods(names: Sequence[str], *, alpha: float, R: int, dim: int, T_test: int,
                  gamma: Optional[float] = None, bandwidth_grid=HEDGE_GRID,
                  rng: Optional[np.random.Generator] = None) -> dict:
    """Instantiate fresh method objects keyed by canonical name."""
    gamma = default_gamma(T_test) if gamma is None else gamma
    h0 = silverman_bandwidth(dim, R) if dim >= 1 else 1.0
    out = {}
    for raw in names:
        name = canonical_method(raw)
        if name == "CP":
            out[name] = SplitCP(alpha, R, dim)
        elif name == "LCP":
            out[name] = LCP(alpha, R, dim, h0)
        elif name == "ACI":
            out[name] = ACI(alpha, R, dim, gamma)
        elif name == "DtACI":
            out[name] = DtACI(alpha, R, dim, gamma)
        elif name == "OLCP":
            out[name] = OLCP(alpha, R, dim, gamma, h0)
        else:
            if rng is None:
                raise ValueError("OLCP-Hedge needs a random generator")
            grid = np.asarray(bandwidth_grid, dtype=float) * h0
            out[name] = OLCPHedge(alpha, R, dim, gamma, grid, T_test, rng)
    return out


def run_stream(methods: dict, t_index, X, y_hat, y) -> dict[str, list[StepRecord]]:
    """Stream every observation through every method; each method sees the identical sequence."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    traces = {name: [] for name in methods}
    for j in range(len(y)):
        for name, m in methods.items():
            rec = m.step(int(t_index[j]), X[j], float(y_hat[j]), float(y[j]))
            if rec is not None:
                traces[name].append(rec)
    return traces


def coverage_and_size(records: Sequence[StepRecord]) -> tuple[float, float]:
    if not records:
        return float("nan"), float("nan")
    cov = np.mean([r.covered for r in records])
    size = np.mean([r.size for r in records])
    return float(cov), float(size)


@dataclass
class MethodSummary:
    method: str
    reps: int
    coverage_mean: float
    coverage_sd: float
    size_mean: float
    size_sd: float
    steps_per_rep: float


@dataclass
class RepTrace:
    """Per-rep detail kept for traces and figures."""

    rep: int
    X: np.ndarray
    records: dict
    ledgers: dict = field(default_factory=dict)


@dataclass
class ExperimentSummary:
    """Across-rep mean and sd (sd of per-rep means, ddof=1) of coverage and size per method."""

    config: ScenarioConfig
    rows: dict
    reps: list = field(default_factory=list)


def _sd(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def rep_generators(seed: int, rep: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (data, sampling) generators for one Monte Carlo rep."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
    data_ss, sample_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(sample_ss)


def run_rep(config: ScenarioConfig, methods: Sequence[str], rep: int) -> RepTrace:
    data_rng, sample_rng = rep_generators(config.seed, rep)
    X, Y = generate_scenario(config, data_rng)
    n = config.train_len
    slope, intercept = ols_fit(X[:n], Y[:n])
    Xt, Yt = X[n:], Y[n:]
    y_hat = slope * Xt + intercept
    objs = build_methods(methods, alpha=config.alpha, R=config.R, dim=1, T_test=len(Yt),
                         gamma=config.gamma, bandwidth_grid=config.bandwidth_grid, rng=sample_rng)
    t_index = np.arange(n + 1, config.T + 1)
    records = run_stream(objs, t_index, Xt, y_hat, Yt)
    ledgers = {k: m.ledger for k, m in objs.items() if hasattr(m, "ledger")}
    return RepTrace(rep, Xt, records, ledgers)


def run_experiment(config: ScenarioConfig, methods: Sequence[str], keep_traces: bool = False) -> ExperimentSummary:
    methods = [canonical_method(m) for m in methods]
    per = {m: ([], [], []) for m in methods}
    kept = []
    for rep in range(config.reps):
        tr = run_rep(config, methods, rep)
        for m in methods:
            cov, size = coverage_and_size(tr.records[m])
            per[m][0].append(cov)
            per[m][1].append(size)
            per[m][2].append(len(tr.records[m]))
        if keep_traces:
            kept.append(tr)
    rows = {}
    for m in methods:
        cov, size, steps = (np.asarray(v, dtype=float) for v in per[m])
        if cov.size == 0:
            continue
        rows[m] = MethodSummary(m, cov.size, float(cov.mean()), _sd(cov),
                                float(size.mean()), _sd(size), float(steps.mean()))
    return ExperimentSummary(config, rows, kept)


def rolling_metric(values, window: int) -> np.ndarray:
    """Trailing-window means; element ``i`` covers ``values[i : i + window]``."""
    if window < 1:
        raise ValueError("window must be >= 1")
    v = np.asarray(values, dtype=float)
    if v.size < window:
        return np.empty(0)
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window


def block_bootstrap_se(series, block_len: int, n_boot: int = 1000, seed=0) -> float:
    """Circular block bootstrap standard error of the series mean."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if block_len < 1 or n_boot < 1:
        raise ValueError("block_len and n_boot must be >= 1")
    if n == 0:
        return float("nan")
    rng = np.random.default_rng(seed)
    b = min(block_len, n)
    n_blocks = -(-n // b)
    starts = rng.integers(0, n, size=(n_boot, n_blocks))
    idx = (starts[:, :, None] + np.arange(b)).reshape(n_boot, -1)[:, :n] % n
    means = x[idx].mean(axis=1)
    return float(np.std(means, ddof=1)) if n_boot > 1 else 0.0


def grouped_metrics(groups, covered, sizes) -> dict:
    """Coverage, mean size and count for each distinct group label."""
    groups = np.asarray(groups)
    covered = np.asarray(covered, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    out = {}
    for g in np.unique(groups):
        mask = groups == g
        out[g.item() if hasattr(g, "item") else g] = (
            float(covered[mask].mean()), float(sizes[mask].mean()), int(mask.sum()))
    return out


def quantile_bins(x, n_bins: int) -> np.ndarray:
    """Bin index (0..n_bins-1) of each value by empirical quantiles."""
    x = np.asarray(x, dtype=float)
    edges = np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(edges, x, side="right")


@dataclass(frozen=True)
class StreamRecord:
    t: int
    x: np.ndarray
    y_hat: float
    y: float


class StreamFormatError(ValueError):
    pass


_XCOL = re.compile(r"^x(\d+)$")


def ingest_stream(path, covariates: Optional[Sequence[str]] = None) -> list[StreamRecord]:
    """Read a stream CSV with columns ``t, y, y_hat`` and covariates ``x1..xd``.

    Covariate columns default to every ``x<k>`` header, ordered by ``k``.
    Line numbers in errors count the header as line 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise StreamFormatError(f"{path}: empty file") from None
        for col in ("t", "y", "y_hat"):
            if col not in header:
                raise StreamFormatError(f"{path}: missing column {col!r}")
        if covariates is None:
            xcols = sorted((h for h in header if _XCOL.match(h)), key=lambda h: int(_XCOL.match(h).group(1)))
        else:
            xcols = list(covariates)
            for c in xcols:
                if c not in header:
                    raise StreamFormatError(f"{path}: missing column {c!r}")
        pos = {h: i for i, h in enumerate(header)}
        records: list[StreamRecord] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise StreamFormatError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                t = int(row[pos["t"]])
            except ValueError:
                raise StreamFormatError(f"{path}: line {line_no}: unparsable integer in column 't': {row[pos['t']]!r}") from None
            vals = {}
            for col in ["y", "y_hat", *xcols]:
                try:
                    vals[col] = float(row[pos[col]])
                except ValueError:
                    raise StreamFormatError(
                        f"{path}: line {line_no}: unparsable number in column {col!r}: {row[pos[col]]!r}") from None
            if records and t <= records[-1].t:
                raise StreamFormatError(f"{path}: line {line_no}: non-monotone time index {t} after {records[-1].t}")
            records.append(StreamRecord(t, np.array([vals[c] for c in xcols]), vals["y_hat"], vals["y"]))
    return records


def stream_arrays(records: Sequence[StreamRecord]):
    """``(t, X, y_hat, y)`` arrays from ingested records."""
    d = records[0].x.size if records else 0
    t = np.array([r.t for r in records], dtype=int)
    X = np.array([r.x for r in records], dtype=float).reshape(len(records), d)
    y_hat = np.array([r.y_hat for r in records], dtype=float)
    y = np.array([r.y for r in records], dtype=float)
    return t, X, y_hat, y
