"""Batch front end: run configured analyses, benchmark methods, list models.

`voi run --config cfg.json` executes the configured estimators over a study
size grid with replicate uncertainty intervals and writes evsi.csv,
summary.json, evsi_vs_n.svg and residuals.csv into the output directory.
`voi bench --config cfg.json` times each method once at the configured
budgets against nested Monte Carlo. `voi models list` prints the registry.

Exit codes: 0 success, 1 configuration error, 2 estimator failure.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import matplotlib
import numpy as np
import scipy

from voi import __version__
from voi.core import compute_nb_table, evpi, evsi_nested_mc, incremental
from voi.estimators import (
    default_basis,
    estimate_n0_nested,
    evsi_heath,
    evsi_jalal,
    evsi_menzies,
    evsi_strong,
    heath_variance_across_n,
    jalal_fit,
)
from voi.metamodel import evppi_regression
from voi.models import get_model, list_models
from voi.report import EvsiRow, render_evsi_figure, write_evsi_csv, write_residuals_csv, write_summary_json

METHODS = ("nested", "strong", "menzies", "jalal", "heath")

_MODEL_IDS = {
    "chemotherapy": "chemotherapy",
    "chemo": "chemotherapy",
    "chronic_pain": "chronic-pain",
    "chronic-pain": "chronic-pain",
    "crc": "crc-screening",
    "crc_screening": "crc-screening",
    "crc-screening": "crc-screening",
    "gaussian_toy": "gaussian-toy",
    "gaussian-toy": "gaussian-toy",
}

# nested posterior sampling probe sizes for the N0 estimate, per model
_N0_PROBE = {
    "chemotherapy": 30,
    "chronic-pain": 40,
    "crc-screening": 40,
    "gaussian-toy": 10,
}


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Budgets:
    """Simulation budgets, desk-scaled by default so a full run stays local."""

    psa: int = 10_000
    nested_outer: int = 1_000
    nested_inner: int = 1_000
    menzies_pool: int = 2_500
    heath_probes: int = 30
    heath_inner: int = 500
    n0_probe: int | None = None
    n0_datasets: int = 60
    n0_inner: int = 400
    bench_nested_ceiling: int = 1_000_000

    def validate(self) -> None:
        for name, v in asdict(self).items():
            if name == "n0_probe" and v is None:
                continue
            if name == "bench_nested_ceiling":
                if v < 0:
                    raise ConfigError("bench_nested_ceiling must be >= 0")
                continue
            if int(v) < 1:
                raise ConfigError(f"budget {name} must be positive, got {v}")
        if self.menzies_pool > self.psa:
            raise ConfigError("menzies_pool cannot exceed the PSA size")


# published full-scale budgets, one flag away from the desk defaults
_FULL_BUDGETS = {
    "chemotherapy": Budgets(
        psa=100_000, nested_outer=100_000, nested_inner=100_000,
        menzies_pool=20_000, heath_probes=50, heath_inner=10_000,
        n0_probe=30, n0_datasets=1_000, n0_inner=10_000,
    ),
    "chronic-pain": Budgets(
        psa=100_000, nested_outer=100_000, nested_inner=100_000,
        menzies_pool=5_000, heath_probes=50, heath_inner=10_000,
        n0_probe=40, n0_datasets=1_000, n0_inner=10_000,
    ),
    "crc-screening": Budgets(
        psa=5_000, nested_outer=100_000, nested_inner=100_000,
        menzies_pool=2_500, heath_probes=50, heath_inner=5_000,
        n0_probe=40, n0_datasets=5_000, n0_inner=5_000,
    ),
    "gaussian-toy": Budgets(),
}

_CONFIG_KEYS = {"model", "methods", "n", "wtp", "budgets", "replicates", "seed", "out", "timing"}


@dataclass
class RunConfig:
    model: str
    methods: list[str]
    n_grid: list[int]
    wtp: float | None
    budgets: Budgets
    replicates: int = 200
    seed: int = 1
    out: Path = Path("voi-results")
    timing: str = "off"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            raw_model = str(d["model"])
        except KeyError:
            raise ConfigError("config needs a 'model'") from None
        model = _MODEL_IDS.get(raw_model.strip().lower())
        if model is None:
            raise ConfigError(
                f"unknown model {raw_model!r}; expected one of {sorted(set(_MODEL_IDS.values()))}"
            )
        methods = d.get("methods")
        if not methods or not isinstance(methods, list):
            raise ConfigError("config needs a nonempty 'methods' list")
        methods = [str(m).strip().lower() for m in methods]
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {list(METHODS)}")
        if len(set(methods)) != len(methods):
            raise ConfigError("duplicate entries in 'methods'")
        raw_n = d.get("n")
        if raw_n is None:
            raise ConfigError("config needs an 'n' grid")
        if not isinstance(raw_n, list):
            raw_n = [raw_n]
        try:
            grid = [int(v) for v in raw_n]
        except (TypeError, ValueError):
            raise ConfigError("'n' must be integers") from None
        if not grid or any(v < 0 for v in grid):
            raise ConfigError("'n' must be a nonempty list of sizes >= 0")
        if len(set(grid)) != len(grid):
            raise ConfigError("duplicate sizes in 'n'")
        wtp = d.get("wtp")
        if wtp is not None:
            wtp = float(wtp)
            if wtp <= 0:
                raise ConfigError("wtp must be positive")
        braw = d.get("budgets", {})
        if not isinstance(braw, dict):
            raise ConfigError("'budgets' must be an object")
        bad = set(braw) - set(asdict(Budgets()))
        if bad:
            raise ConfigError(f"unknown budget keys: {', '.join(sorted(bad))}")
        budgets = replace(Budgets(), **{k: int(v) for k, v in braw.items()})
        budgets.validate()
        reps = int(d.get("replicates", 200))
        if reps < 1:
            raise ConfigError("replicates must be >= 1")
        seed = int(d.get("seed", 1))
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must fit in u64")
        timing = str(d.get("timing", "off"))
        if timing not in ("off", "wall"):
            raise ConfigError("timing must be 'off' or 'wall'")
        return cls(
            model=model,
            methods=methods,
            n_grid=grid,
            wtp=wtp,
            budgets=budgets,
            replicates=reps,
            seed=seed,
            out=Path(d.get("out", "voi-results")),
            timing=timing,
        )


def load_config(path: str) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return RunConfig.from_dict(data)


def _n0_probe(cfg: RunConfig) -> int:
    if cfg.budgets.n0_probe is not None:
        return cfg.budgets.n0_probe
    return _N0_PROBE[cfg.model]


# ---------------------------------------------------------------------------
# run


@dataclass
class MethodResult:
    values: np.ndarray          # (replicates, len(grid))
    seconds: np.ndarray         # per grid entry, wall total across replicates
    warnings: list[str] = field(default_factory=list)
    residual_rows: list = field(default_factory=list)


def _note(warnings: list[str], new) -> None:
    for w in new:
        if w not in warnings:
            warnings.append(w)


def _residuals_from_fit(model_name, method, n, fit, y, cap=1000):
    rows = []
    for j in range(min(cap, len(fit.fitted))):
        rows.append((model_name, method, n, j, float(fit.fitted[j]), float(y[j] - fit.fitted[j])))
    return rows


def _run_one_method(method, model, wtp, grid, cfg: RunConfig, rep_seqs, threads) -> MethodResult:
    g = len(grid)
    b = cfg.budgets
    vals = np.empty((len(rep_seqs), g))
    secs = np.zeros(g)
    warnings: list[str] = []
    residual_rows: list = []
    designs = [model.make_design(n) for n in grid]

    for r, seq in enumerate(rep_seqs):
        rng = np.random.default_rng(seq)
        shared = time.perf_counter()
        psa = model.sample_prior(b.psa, rng)
        table = compute_nb_table(model, psa, wtp)
        shared = time.perf_counter() - shared

        if method == "strong":
            for i, d in enumerate(designs):
                t0 = time.perf_counter()
                est = evsi_strong(model, psa, d, wtp, rng, nb=table, keep_fits=(r == 0))
                secs[i] += time.perf_counter() - t0
                vals[r, i] = est.value
                _note(warnings, est.warnings)
                if r == 0:
                    fit = est.details["fits"][0]
                    inb = est.details["inb"]
                    col = 1 if inb.reference == 0 else 0
                    residual_rows += _residuals_from_fit(
                        model.name, method, d.n, fit, inb.values[:, col]
                    )
        elif method == "menzies":
            t0 = time.perf_counter()
            inb = incremental(table)
            ev = evppi_regression(inb, psa, model.focal_params, basis=default_basis(model))
            shared += time.perf_counter() - t0
            k = min(b.menzies_pool, psa.n_samples)
            for i, d in enumerate(designs):
                t0 = time.perf_counter()
                est = evsi_menzies(
                    model, psa, d, wtp, rng,
                    n_outer=k, pool_size=k, nb=table, evppi=ev,
                )
                secs[i] += time.perf_counter() - t0
                vals[r, i] = est.value
                _note(warnings, est.warnings)
        elif method == "jalal":
            t0 = time.perf_counter()
            fit = jalal_fit(table, psa, model.focal_params)
            n0 = estimate_n0_nested(
                model, rng,
                probe_n=_n0_probe(cfg), n_datasets=b.n0_datasets, r_inner=b.n0_inner,
            )
            _note(warnings, n0.warnings)
            shared += time.perf_counter() - t0
            if r == 0:
                inb = incremental(table)
                col = fit.fit_cols[0]
                residual_rows += _residuals_from_fit(
                    model.name, method, None, fit.fits[0], inb.values[:, col]
                )
            for i, d in enumerate(designs):
                t0 = time.perf_counter()
                vals[r, i] = fit.evsi(d.n, n0)
                secs[i] += time.perf_counter() - t0
        elif method == "heath":
            positive = sorted({n for n in grid if n > 0})
            if len(positive) >= 3:
                t0 = time.perf_counter()
                curve = heath_variance_across_n(
                    model, psa, positive, wtp, rng,
                    q=b.heath_probes, r_inner=b.heath_inner, nb=table,
                )
                _note(warnings, curve.warnings)
                shared += time.perf_counter() - t0
                for i, d in enumerate(designs):
                    t0 = time.perf_counter()
                    vals[r, i] = curve.evsi(d.n)
                    secs[i] += time.perf_counter() - t0
            else:
                for i, d in enumerate(designs):
                    t0 = time.perf_counter()
                    est = evsi_heath(
                        model, psa, d, wtp, rng,
                        q=b.heath_probes, r_inner=b.heath_inner, nb=table,
                    )
                    secs[i] += time.perf_counter() - t0
                    vals[r, i] = est.value
                    _note(warnings, est.warnings)
        elif method == "nested":
            for i, d in enumerate(designs):
                t0 = time.perf_counter()
                res = evsi_nested_mc(
                    model, d, wtp, b.nested_outer, b.nested_inner, rng, threads=threads,
                )
                secs[i] += time.perf_counter() - t0
                vals[r, i] = res.evsi
                _note(warnings, res.warnings)
        else:  # pragma: no cover - guarded by config validation
            raise ConfigError(f"unknown method {method}")

        secs += shared / g
        drain = getattr(model, "drain_warnings", None)
        if drain is not None:
            _note(warnings, drain())

    return MethodResult(values=vals, seconds=secs, warnings=warnings, residual_rows=residual_rows)


def run(cfg: RunConfig, threads: int = 1) -> int:
    t_start = time.perf_counter()
    model = get_model(cfg.model)
    wtp = cfg.wtp if cfg.wtp is not None else model.default_wtp
    grid = cfg.n_grid
    cfg.out.mkdir(parents=True, exist_ok=True)

    seqs = np.random.SeedSequence(cfg.seed).spawn(len(cfg.methods) + 1)
    rng0 = np.random.default_rng(seqs[0])
    psa0 = model.sample_prior(cfg.budgets.psa, rng0)
    table0 = compute_nb_table(model, psa0, wtp)
    evpi_value = evpi(table0)
    ev0 = evppi_regression(
        incremental(table0), psa0, model.focal_params, basis=default_basis(model)
    )

    rows: list[EvsiRow] = []
    curves: dict = {}
    warnings: dict[str, list[str]] = {}
    residual_rows: list = []
    for mi, method in enumerate(cfg.methods):
        rep_seqs = seqs[mi + 1].spawn(cfg.replicates)
        result = _run_one_method(method, model, wtp, grid, cfg, rep_seqs, threads)
        pts = result.values.mean(axis=0)
        lo = np.percentile(result.values, 2.5, axis=0)
        hi = np.percentile(result.values, 97.5, axis=0)
        curves[method] = (pts, lo, hi)
        if result.warnings:
            warnings[method] = result.warnings
        residual_rows += result.residual_rows
        for i, n in enumerate(grid):
            rows.append(EvsiRow(
                model=model.name, method=method, n=n,
                point=float(pts[i]), lo95=float(lo[i]), hi95=float(hi[i]),
                seconds=float(result.seconds[i]) if cfg.timing == "wall" else None,
            ))

    write_evsi_csv(cfg.out / "evsi.csv", rows)
    if any(m in cfg.methods for m in ("strong", "jalal")):
        write_residuals_csv(cfg.out / "residuals.csv", residual_rows)
    render_evsi_figure(cfg.out / "evsi_vs_n.svg", model.name, grid, curves, ev0.value)
    write_summary_json(cfg.out / "summary.json", {
        "model": model.name,
        "wtp": wtp,
        "n_grid": grid,
        "methods": cfg.methods,
        "replicates": cfg.replicates,
        "seed": cfg.seed,
        "evpi": evpi_value,
        "evppi": {"parameters": list(model.focal_params), "value": ev0.value},
        "budgets": asdict(cfg.budgets),
        "timing": cfg.timing,
        "warnings": warnings,
        "runtime_seconds": round(time.perf_counter() - t_start, 3),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
            "voi": __version__,
        },
    })
    print(f"wrote {cfg.out}/evsi.csv ({len(rows)} rows), summary.json, evsi_vs_n.svg")
    return 0


# ---------------------------------------------------------------------------
# bench


def _bench_nested(model, wtp, grid, b: Budgets, rng, threads) -> tuple[float, bool, list]:
    """Nested MC wall time for the whole grid: measured when the configured
    budget fits under the ceiling, otherwise probed and scaled linearly in
    outer*inner (flagged extrapolated)."""
    budget = b.nested_outer * b.nested_inner
    mid = grid[len(grid) // 2]
    extra_rows: list = []
    if b.bench_nested_ceiling and budget <= b.bench_nested_ceiling:
        t0 = time.perf_counter()
        for n in grid:
            evsi_nested_mc(model, model.make_design(n), wtp,
                           b.nested_outer, b.nested_inner, rng, threads=threads)
        return time.perf_counter() - t0, False, extra_rows
    if b.bench_nested_ceiling:
        f = (b.bench_nested_ceiling / budget) ** 0.5
        outer_p = max(4, int(b.nested_outer * f))
        inner_p = max(2, int(b.nested_inner * f))
    else:
        outer_p, inner_p = 50, 50
    t0 = time.perf_counter()
    evsi_nested_mc(model, model.make_design(mid), wtp, outer_p, inner_p, rng, threads=threads)
    probe = time.perf_counter() - t0
    scaled = probe * budget / (outer_p * inner_p) * len(grid)
    return scaled, True, extra_rows


def bench(cfg: RunConfig, threads: int = 1) -> int:
    model = get_model(cfg.model)
    wtp = cfg.wtp if cfg.wtp is not None else model.default_wtp
    grid = cfg.n_grid
    cfg.out.mkdir(parents=True, exist_ok=True)
    b = cfg.budgets

    seqs = np.random.SeedSequence(cfg.seed).spawn(len(cfg.methods) + 4)
    one_rep = replace(cfg, replicates=1)

    records = []
    approx = [m for m in cfg.methods if m != "nested"]
    for mi, method in enumerate(approx):
        rep_seqs = seqs[mi].spawn(1)
        t0 = time.perf_counter()
        _run_one_method(method, model, wtp, grid, one_rep, rep_seqs, threads)
        records.append({"method": method, "seconds": time.perf_counter() - t0,
                        "extrapolated": False})

    nested_secs, extrapolated, _ = _bench_nested(
        model, wtp, grid, b, np.random.default_rng(seqs[len(approx)]), threads
    )
    records.append({"method": "nested", "seconds": nested_secs, "extrapolated": extrapolated})

    # three-point scaling check: nested wall time is linear in the outer size
    mid = grid[len(grid) // 2]
    inner = min(b.nested_inner, 200)
    base = min(b.nested_outer, 1000)
    scaling = []
    for k, s in enumerate((base // 4, base // 2, base)):
        rng = np.random.default_rng(seqs[len(approx) + 1 + k])
        t0 = time.perf_counter()
        evsi_nested_mc(model, model.make_design(mid), wtp, max(s, 4), inner, rng, threads=threads)
        scaling.append((max(s, 4), time.perf_counter() - t0))

    for rec in records:
        rec["speedup_vs_nested"] = (
            None if rec["method"] == "nested" or rec["seconds"] == 0
            else nested_secs / rec["seconds"]
        )

    lines = [f"{'method':<10} {'seconds':>12} {'extrapolated':>13} {'speedup':>10}"]
    for rec in records:
        sp = f"{rec['speedup_vs_nested']:.3g}x" if rec["speedup_vs_nested"] else ""
        lines.append(f"{rec['method']:<10} {rec['seconds']:>12.3f} "
                     f"{str(rec['extrapolated']):>13} {sp:>10}")
    lines.append("nested scaling (outer size, seconds at inner="
                 f"{inner}, n={mid}): " + ", ".join(f"({s}, {t:.3f})" for s, t in scaling))
    print("\n".join(lines))

    with open(cfg.out / "bench.csv", "w") as fh:
        fh.write("model,method,seconds,extrapolated,speedup_vs_nested\n")
        for rec in records:
            sp = "" if rec["speedup_vs_nested"] is None else f"{rec['speedup_vs_nested']:.4g}"
            fh.write(f"{model.name},{rec['method']},{rec['seconds']:.6f},"
                     f"{str(rec['extrapolated']).lower()},{sp}\n")
        for s, t in scaling:
            fh.write(f"{model.name},nested[S={s}],{t:.6f},false,\n")
    print(f"wrote {cfg.out}/bench.csv")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="voi", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="path to a JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for nested Monte Carlo (results identical)")
        sp.add_argument("--full", action="store_true",
                        help="swap desk budgets for the published full-scale budgets")

    common(sub.add_parser("run", help="run the configured analysis"))
    common(sub.add_parser("bench", help="time each configured method"))
    pm = sub.add_parser("models", help="model registry commands")
    pm.add_argument("action", choices=["list"])
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must fit in u64")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = Path(args.out)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    if args.full:
        cfg.budgets = _FULL_BUDGETS[cfg.model]
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "models":
        for name in list_models():
            m = get_model(name)
            print(f"{name}: strategies {', '.join(m.strategies)}; "
                  f"focal {', '.join(m.focal_params)}")
        return 0
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        if args.command == "run":
            return run(cfg, threads=args.threads)
        return bench(cfg, threads=args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - estimator failures exit 2 by contract
        print(f"estimator error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
