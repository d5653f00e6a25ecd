"""Command-line interface: ``olcp simulate | run | diagnose``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    METHODS,
    SCENARIOS,
    ScenarioConfig,
    block_bootstrap_se,
    build_methods,
    canonical_method,
    coverage_and_size,
    ingest_stream,
    rep_generators,
    rolling_metric,
    run_experiment,
    run_stream,
    stream_arrays,
)
from .hedge import HEDGE_GRID, feasibility_diagnostic
from .localization import silverman_bandwidth
from .online import default_gamma

TRACE_COLUMNS = ["t", "method", "lower", "upper", "size", "covered", "alpha_t", "L_t", "U_t", "queue", "expert"]
IDENTITY_TOL = 1e-9


class CLIError(Exception):
    pass


def _fmt(v, digits=6) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{v:.{digits}g}"


def _fmt_trace(v) -> str:
    # round-trip precision; the coverage identity is checked from these values at 1e-9
    if isinstance(v, float):
        return repr(v)
    return _fmt(v)


def _header(command: str, config: dict, extra: dict | None = None) -> str:
    lines = [f"# olcp {__version__}", f"# command: {command}", "# config: " + json.dumps(config, sort_keys=True)]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: " + json.dumps(v, sort_keys=True))
    return "\n".join(lines) + "\n"


def read_header(path) -> dict:
    """Parse the ``# key: json`` lines at the top of an output file."""
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[1:].strip().partition(": ")
            try:
                meta[key] = json.loads(val)
            except json.JSONDecodeError:
                meta[key] = val
    return meta


def _parse_methods(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return list(text)
    try:
        return [canonical_method(m) for m in text.split(",") if m.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _parse_grid(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        grid = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid bandwidth grid {text!r}") from None
    if not grid or min(grid) <= 0:
        raise argparse.ArgumentTypeError("bandwidth multipliers must be positive")
    return grid


def trace_rows(records_by_method: dict, roll_window: int):
    """Yield trace rows (lists of strings) grouped by method, in time order."""
    K = max((len(r.expert_errs) for recs in records_by_method.values() for r in recs if r.expert_errs), default=0)
    cols = TRACE_COLUMNS + ["roll_coverage", "roll_size"] + [f"e{k + 1}" for k in range(K)]
    yield cols
    for m, recs in records_by_method.items():
        rc = rolling_metric([r.covered for r in recs], roll_window)
        rs = rolling_metric([r.size for r in recs], roll_window)
        for i, r in enumerate(recs):
            j = i - (roll_window - 1)
            row = [r.t, m, r.lower, r.upper, r.size, r.covered, r.alpha_t, r.L_t, r.U_t, r.queue, r.expert,
                   float(rc[j]) if j >= 0 else None, float(rs[j]) if j >= 0 else None]
            errs = list(r.expert_errs) if r.expert_errs else [None] * K
            yield [_fmt_trace(v) for v in row + errs]


def write_trace(path, header: str, records_by_method: dict, roll_window: int) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        for row in trace_rows(records_by_method, roll_window):
            w.writerow(row)
            n += 1
    return n - 1


def _write_csv(path, header: str, columns: list, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _print_table(columns, rows, out=None):
    out = out or sys.stdout
    cells = [columns] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(str(c[i])) for c in cells) for i in range(len(columns))]
    for c in cells:
        print("  ".join(str(v).ljust(w) for v, w in zip(c, widths)), file=out)


def _final_levels(objs: dict) -> dict:
    return {k: m.state.alpha_t for k, m in objs.items() if hasattr(m, "ledger")}


# --------------------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    methods = args.methods
    grid = tuple(args.grid)
    try:
        config = ScenarioConfig(scenario=args.scenario, T=args.T, train_len=args.train_len, R=args.window,
                                alpha=args.alpha, reps=args.reps, seed=args.seed, gamma=args.gamma,
                                bandwidth_grid=grid)
    except ValueError as e:
        raise CLIError(str(e)) from None
    cfg = _config_dict(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    keep = args.trace or args.figures
    summary = run_experiment(config, methods, keep_traces=keep)
    T_test = config.T - config.train_len
    resolved = {"gamma": config.gamma if config.gamma is not None else default_gamma(T_test),
                "h0": silverman_bandwidth(1, config.R), "T_test": T_test}

    columns = ["method", "reps", "coverage_mean", "coverage_sd", "size_mean", "size_sd", "steps_per_rep"]
    rows = [[s.method, s.reps, s.coverage_mean, s.coverage_sd, s.size_mean, s.size_sd, s.steps_per_rep]
            for s in summary.rows.values()]
    header = _header("simulate", cfg, {"resolved": resolved, "sd": "across-rep sd of per-rep means (ddof=1)"})
    _write_csv(out / "summary.csv", header, columns, rows)
    _write_json(out / "summary.json", cfg, resolved, {s.method: vars(s) for s in summary.rows.values()})

    if args.trace:
        for tr in summary.reps:
            final = {k: led.alpha_last for k, led in tr.ledgers.items()}
            h = _header("simulate", cfg, {"resolved": resolved, "rep": tr.rep, "final_alpha": final})
            write_trace(out / f"trace_rep{tr.rep:03d}.csv", h, tr.records, args.roll_window)
    if args.figures and summary.reps:
        from .plotting import plot_conditional, plot_rolling
        vline = config.T / 2 if config.scenario == "C" else None
        plot_rolling([tr.records for tr in summary.reps], out / "rolling.png", args.roll_window,
                     config.alpha, vline, title=f"Scenario {config.scenario}")
        plot_conditional([(tr.X, tr.records) for tr in summary.reps], out / "conditional.png",
                         alpha=config.alpha, title=f"Scenario {config.scenario}")

    print(f"scenario {config.scenario}: {config.reps} reps, seed {config.seed}")
    _print_table(columns, rows)
    return 0


# --------------------------------------------------------------------------- run

def cmd_run(args) -> int:
    methods = args.methods
    grid = tuple(args.grid)
    covs = args.covariates.split(",") if args.covariates else None
    try:
        records = ingest_stream(args.stream, covs)
    except (OSError, ValueError) as e:
        raise CLIError(str(e)) from None
    t, X, y_hat, y = stream_arrays(records)
    d = X.shape[1]
    T_test = max(len(y), 1)
    gamma = args.gamma if args.gamma is not None else default_gamma(T_test)
    _, sample_rng = rep_generators(args.seed, 0)
    objs = build_methods(methods, alpha=args.alpha, R=args.window, dim=d, T_test=T_test, gamma=gamma,
                         bandwidth_grid=grid, rng=sample_rng)
    traces = run_stream(objs, t, X, y_hat, y)

    cfg = _config_dict(args)
    resolved = {"gamma": gamma, "h0": silverman_bandwidth(d, args.window) if d else 1.0, "T_test": T_test, "d": d}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    columns = ["method", "N", "coverage", "coverage_se", "size", "size_se", "L_diag", "U_diag", "rho"]
    rows = []
    for m in methods:
        recs = traces[m]
        cov, size = coverage_and_size(recs)
        if recs:
            cse = block_bootstrap_se([r.covered for r in recs], args.block_len, args.n_boot, args.seed)
            sse = block_bootstrap_se([r.size for r in recs], args.block_len, args.n_boot, args.seed)
        else:
            cse = sse = float("nan")
        led = getattr(objs[m], "ledger", None)
        ldiag = led.lower_diagnostic() if led else None
        udiag = led.upper_diagnostic() if led else None
        rho = None
        if m == "OLCP-Hedge" and recs:
            rho, _ = feasibility_diagnostic([r.expert_errs for r in recs], args.alpha)
        rows.append([m, len(recs), cov, cse, size, sse, ldiag, udiag, rho])

    extra = {"resolved": resolved, "final_alpha": _final_levels(objs)}
    header = _header("run", cfg, extra)
    _write_csv(out / "summary.csv", header, columns, rows)
    _write_json(out / "summary.json", cfg, resolved, {r[0]: dict(zip(columns[1:], r[1:])) for r in rows})
    write_trace(out / "trace.csv", header, traces, args.roll_window)
    if args.figures and any(traces.values()):
        from .plotting import plot_conditional, plot_rolling
        if max(len(v) for v in traces.values()) >= args.roll_window:
            plot_rolling([traces], out / "rolling.png", args.roll_window, args.alpha, title=Path(args.stream).name)
        if d == 1:
            plot_conditional([(X, traces)], out / "conditional.png", alpha=args.alpha)

    print(f"stream {args.stream}: {len(records)} records, d={d}")
    _print_table(columns, rows)
    return 0


# --------------------------------------------------------------------------- diagnose

def _opt(v: str):
    return float(v) if v not in ("", None) else None


def identity_residuals(alpha_t, err, L, U, alpha, gamma, alpha_final=None) -> np.ndarray:
    """Coverage-identity residual at every prefix whose next level is known."""
    alpha_t = np.asarray(alpha_t, dtype=float)
    nxt = alpha_t[1:]
    if alpha_final is not None:
        nxt = np.append(nxt, alpha_final)
    m = nxt.size
    lhs = np.cumsum(np.asarray(err, dtype=float)[:m] - alpha)
    rhs = (alpha_t[0] - nxt) / gamma + np.cumsum(np.asarray(L[:m]) - np.asarray(U[:m])) / gamma
    return lhs - rhs


def diagnose_trace(path, alpha=None, gamma=None) -> dict:
    meta = read_header(path)
    alpha = alpha if alpha is not None else meta.get("config", {}).get("alpha")
    gamma = gamma if gamma is not None else meta.get("resolved", {}).get("gamma")
    if alpha is None or gamma is None:
        raise CLIError("alpha and gamma are not in the trace header; pass --alpha and --gamma")
    finals = meta.get("final_alpha", {}) or {}
    with open(path, encoding="utf-8") as fh:
        body = io.StringIO("".join(line for line in fh if not line.startswith("#")))
    reader = csv.DictReader(body)
    missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise CLIError(f"{path}: malformed trace, missing columns {missing}")
    ecols = [c for c in reader.fieldnames if c.startswith("e") and c[1:].isdigit()]
    by_method: dict = {}
    try:
        for row in reader:
            by_method.setdefault(row["method"], []).append(row)
    except csv.Error as e:
        raise CLIError(f"{path}: malformed trace: {e}") from None

    report = {}
    for m, rows in by_method.items():
        entry = {"N": len(rows)}
        try:
            if rows and all(r["L_t"] != "" and r["U_t"] != "" and r["alpha_t"] != "" for r in rows):
                a = [float(r["alpha_t"]) for r in rows]
                err = [1 - int(r["covered"]) for r in rows]
                L = [float(r["L_t"]) for r in rows]
                U = [float(r["U_t"]) for r in rows]
                res = identity_residuals(a, err, L, U, alpha, gamma, finals.get(m))
                worst = float(np.max(np.abs(res))) if res.size else 0.0
                T = len(rows)
                entry.update(L_diag=sum(L) / (T * gamma), U_diag=sum(U) / (T * gamma),
                             identity_residual=worst, identity_pass=worst <= IDENTITY_TOL)
            if ecols and all(r[ecols[0]] != "" for r in rows):
                E = [[int(r[c]) for c in ecols] for r in rows]
                entry["rho"] = feasibility_diagnostic(E, alpha)[0]
        except ValueError as e:
            raise CLIError(f"{path}: malformed trace: {e}") from None
        report[m] = entry
    return report


def cmd_diagnose(args) -> int:
    report = diagnose_trace(args.trace, args.alpha, args.gamma)
    failed = False
    for m, e in report.items():
        parts = [f"{m}: N={e['N']}"]
        if "identity_pass" in e:
            parts.append(f"L_diag={_fmt(e['L_diag'])} U_diag={_fmt(e['U_diag'])}")
            status = "pass" if e["identity_pass"] else "FAIL"
            parts.append(f"identity {status} (max residual {e['identity_residual']:.3e})")
            failed |= not e["identity_pass"]
        if "rho" in e:
            parts.append(f"rho={_fmt(e['rho'])}")
        print("  ".join(parts))
    if failed:
        print("coverage identity violated", file=sys.stderr)
    return 1 if failed else 0


# --------------------------------------------------------------------------- plumbing

_CONFIG_EXCLUDE = {"func", "config", "command"}


def _config_dict(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _CONFIG_EXCLUDE}


def _write_json(path, cfg, resolved, results) -> None:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        return v
    payload = {
        "version": __version__,
        "config": cfg,
        "resolved": resolved,
        "results": {m: {k: clean(v) for k, v in r.items()} for m, r in results.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return data.get("config", data)
    meta = read_header(path)
    if "config" not in meta:
        raise CLIError(f"{path}: no embedded config")
    return meta["config"]


def _shared(p: argparse.ArgumentParser, default_window: int) -> None:
    p.add_argument("--alpha", type=float, default=0.1, help="target miscoverage (default 0.1)")
    p.add_argument("--window", type=int, default=default_window, help="calibration window R")
    p.add_argument("--gamma", type=float, default=None, help="step size (default 1/(2 sqrt(T_test)))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", type=_parse_methods, default=",".join(METHODS), help="comma-separated subset of " + ", ".join(METHODS))
    p.add_argument("--out", default="olcp_out", help="output directory")
    p.add_argument("--grid", type=_parse_grid, default=",".join(str(g) for g in HEDGE_GRID),
                   help="OLCP-Hedge bandwidth multipliers of h0")
    p.add_argument("--roll-window", type=int, default=100, help="window for rolling trace columns and figures")
    p.add_argument("--figures", action="store_true", help="render PNG figures into --out")
    p.add_argument("--config", default=None, help="reuse the config embedded in a previous output file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="olcp", description="Online localized conformal prediction")
    parser.add_argument("--version", action="version", version=f"olcp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo runs on the synthetic AR(1) scenarios")
    p.add_argument("--scenario", choices=SCENARIOS, default="A")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--T", type=int, default=1500)
    p.add_argument("--train-len", type=int, default=500)
    p.add_argument("--trace", action="store_true", help="write one trace CSV per rep")
    _shared(p, 200)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="run the methods over a stream CSV (t, y, y_hat, x1..xd)")
    p.add_argument("stream")
    p.add_argument("--covariates", default=None, help="comma-separated covariate columns (default x1..xd)")
    p.add_argument("--block-len", type=int, default=20, help="block length for bootstrap SEs")
    p.add_argument("--n-boot", type=int, default=1000)
    _shared(p, 200)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diagnose", help="boundary diagnostics and identity check for a trace CSV")
    p.add_argument("trace")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = _load_config(args.config)
        except (OSError, ValueError, CLIError) as e:
            print(f"olcp: error: {e}", file=sys.stderr)
            return 1
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k: v for k, v in cfg.items() if k != "config"})
        args = parser.parse_args(argv)
        args.config = None
    try:
        return args.func(args)
    except CLIError as e:
        print(f"olcp: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
