"""Command-line front end.

Subcommands ``simulate``, ``pgf``, ``zeros``, ``disentangle`` and
``experiment`` read one JSON config (``--config``).  The config is either a
bare model file (``space`` and ``process`` at top level) or an experiment
file::

    {
      "model": {"space": {...}, "process": {...}},
      "mode": "exact",               # or "empirical"
      "samples": 100000,
      "seed": 7,
      "phi": [-0.5, -0.5],           # test function for pgf / zeros
      "z_grid": {"re": [-3, 1, 41], "im": [-1, 1, 21]},
      "phi_grid": {"count": 20, "low": -0.9, "high": -0.1, "seed": 0},
      "windows": [[0], [1], [0, 1]],
      "checks": true,
      "bootstrap": 0,                # resamples; 200 is a sensible choice
      "tolerances": {"nu_abs": 1e-7}
    }

Command-line flags override config fields.  Exit codes: 0 success,
1 a tolerance check failed, 2 bad configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .disentangle import DisentangleOptions, DisentangleResult, disentangle, phi_grid
from .io import (
    ConfigError,
    fmt,
    load_json,
    model_from_dict,
    read_samples,
    test_function_from_list,
    write_csv,
    write_json,
    write_samples,
)
from .model import (
    Determinantal,
    GroundSpace,
    Poisson,
    ProcessModel,
    TestFunction,
    leaves,
)
from .pgf import Empirical, PgfOracle, oracle_for_model
from .samplers import RngState, SampleBatch, default_threads, sample_batch
from .zeros import ZeroSet, match_multisets, zeros_blind, zeros_by_fit

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ToleranceExceeded(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    space: GroundSpace
    model: ProcessModel | None
    mode: str = "exact"
    samples: int = 0
    seed: int | None = None
    phi: TestFunction | None = None
    z_grid: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    phi_grid: dict = field(default_factory=dict)
    windows: list | None = None
    checks: bool = True
    tol: Tolerances = DEFAULT_TOLERANCES
    out: Path = Path(".")
    threads: int = 1
    input: Path | None = None
    bootstrap: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "empirical"):
            raise ConfigError("must be 'exact' or 'empirical'", "mode")
        if self.mode == "empirical" and self.input is None:
            if self.samples < 1:
                raise ConfigError("empirical mode needs samples >= 1", "samples")
            if self.seed is None:
                raise ConfigError("empirical mode needs an explicit seed", "seed")
        if self.mode == "exact" and self.model is None:
            raise ConfigError("exact mode needs a model", "model")


# config parsing -----------------------------------------------------------------

def _z_grid(spec: Any) -> np.ndarray:
    if spec is None:
        return np.zeros(0, complex)
    if not isinstance(spec, dict):
        raise ConfigError("expected an object", "z_grid")
    if "points" in spec:
        pts = spec["points"]
        if not isinstance(pts, list):
            raise ConfigError("expected a list of [re, im] pairs", "z_grid.points")
        out = []
        for i, p in enumerate(pts):
            if not (isinstance(p, list) and len(p) == 2 and all(isinstance(x, (int, float)) for x in p)):
                raise ConfigError("expected [re, im]", f"z_grid.points[{i}]")
            out.append(complex(p[0], p[1]))
        return np.array(out, dtype=complex)

    def axis(key):
        v = spec.get(key, [0, 0, 1])
        if not (isinstance(v, list) and len(v) == 3 and all(isinstance(x, (int, float)) for x in v)):
            raise ConfigError("expected [start, stop, count]", f"z_grid.{key}")
        if int(v[2]) < 0 or not all(math.isfinite(float(x)) for x in v):
            raise ConfigError("grid must be finite with count >= 0", f"z_grid.{key}")
        return np.linspace(float(v[0]), float(v[1]), int(v[2]))

    re, im = axis("re"), axis("im")
    # row-major: imaginary part outer, real part inner
    return (re[None, :] + 1j * im[:, None]).reshape(-1)


def parse_tolerance_overrides(items: Sequence[str], base: Tolerances) -> Tolerances:
    changes = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}", "--tolerance")
        try:
            current = getattr(base, key.strip())
        except AttributeError:
            raise ConfigError(f"unknown tolerance {key.strip()!r}", "--tolerance") from None
        try:
            changes[key.strip()] = type(current)(float(value)) if isinstance(current, int) else float(value)
        except ValueError:
            raise ConfigError(f"not a number: {value!r}", f"--tolerance {key}") from None
    return base.override(**changes)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required", "--config")
    raw = load_json(Path(args.config))
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", str(args.config))
    model_raw = raw["model"] if "model" in raw else (raw if "process" in raw else None)
    if model_raw is not None:
        space, model = model_from_dict(model_raw)
    elif "space" in raw:
        from .io import space_from_dict

        space, model = space_from_dict(raw["space"]), None
    else:
        raise ConfigError("missing field", "model")

    tol = DEFAULT_TOLERANCES
    tol_raw = raw.get("tolerances", {})
    if not isinstance(tol_raw, dict):
        raise ConfigError("expected an object", "tolerances")
    tol = parse_tolerance_overrides([f"{k}={v}" for k, v in tol_raw.items()], tol)
    tol = parse_tolerance_overrides(args.tolerance or [], tol)

    phi = None
    if "phi" in raw:
        phi = test_function_from_list(space, raw["phi"], "phi")
    grid_raw = raw.get("phi_grid", {})
    if not isinstance(grid_raw, dict):
        raise ConfigError("expected an object", "phi_grid")
    windows = raw.get("windows")
    if windows is not None:
        if not isinstance(windows, list) or not all(isinstance(w, list) for w in windows):
            raise ConfigError("expected a list of index lists", "windows")
        for i, w in enumerate(windows):
            if not w or any(not isinstance(j, int) or not 0 <= j < space.n for j in w):
                raise ConfigError(f"indices must lie in 0..{space.n - 1}", f"windows[{i}]")

    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64):
        raise ConfigError("must be an unsigned 64-bit integer", "seed")
    samples = args.samples if args.samples is not None else raw.get("samples", 0)
    if isinstance(samples, bool) or not isinstance(samples, int):
        raise ConfigError("must be an integer", "samples")
    threads = args.threads if args.threads is not None else default_threads()
    env = os.environ.get("PGF_DISENTANGLE_THREADS")
    if env:
        try:
            threads = max(1, int(env))
        except ValueError:
            raise ConfigError("must be an integer", "PGF_DISENTANGLE_THREADS") from None
    input_path = getattr(args, "input", None)
    bootstrap = raw.get("bootstrap", 0)
    if isinstance(bootstrap, bool) or not isinstance(bootstrap, int) or bootstrap < 0:
        raise ConfigError("must be a nonnegative integer", "bootstrap")
    return ExperimentConfig(
        space=space,
        model=model,
        mode=args.mode or raw.get("mode", "exact"),
        samples=samples,
        seed=seed,
        phi=phi,
        z_grid=_z_grid(raw.get("z_grid")),
        phi_grid=grid_raw,
        windows=windows,
        checks=bool(raw.get("checks", True)),
        tol=tol,
        out=Path(args.out),
        threads=threads,
        input=Path(input_path) if input_path else None,
        bootstrap=bootstrap,
    )


# pipeline pieces -----------------------------------------------------------------

def _batch(cfg: ExperimentConfig) -> SampleBatch:
    if cfg.input is not None:
        return read_samples(cfg.input, cfg.space)
    if cfg.model is None:
        raise ConfigError("sampling needs a model", "model")
    if cfg.seed is None:
        raise ConfigError("sampling needs an explicit seed", "seed")
    if cfg.samples < 1:
        raise ConfigError("sampling needs samples >= 1", "samples")
    return sample_batch(cfg.model, cfg.samples, RngState(cfg.seed), cfg.threads)


def _oracle(cfg: ExperimentConfig, batch: SampleBatch | None = None) -> PgfOracle:
    if cfg.mode == "exact":
        return oracle_for_model(cfg.model)
    return Empirical(batch if batch is not None else _batch(cfg))


def _phi(cfg: ExperimentConfig) -> TestFunction:
    if cfg.phi is None:
        raise ConfigError("missing field", "phi")
    return cfg.phi


def emit_grid(oracle: PgfOracle, phi: TestFunction, grid, path: Path) -> None:
    """Rows ``(z_re, z_im, |B|, arg B)`` in grid order."""
    z = np.asarray(grid, dtype=complex).reshape(-1)
    values = oracle.entire(phi).f(z) if z.size else np.zeros(0, complex)
    write_csv(
        path,
        ["z_re", "z_im", "abs_B", "arg_B"],
        ((float(w.real), float(w.imag), float(abs(v)), float(np.angle(v))) for w, v in zip(z, values)),
    )


def write_pgf(oracle: PgfOracle, phi: TestFunction, grid, path: Path) -> None:
    z = np.asarray(grid, dtype=complex).reshape(-1)
    rows = []
    if isinstance(oracle, Empirical):
        for w in z:
            est = oracle.estimate(phi.scaled(w))
            rows.append((w, est.value, est.stderr))
    else:
        values = oracle.entire(phi).f(z) if z.size else []
        rows = [(w, v, 0.0) for w, v in zip(z, values)]
    write_csv(
        path,
        ["z_re", "z_im", "B_re", "B_im", "stderr"],
        ((float(w.real), float(w.imag), float(v.real), float(v.imag), float(s)) for w, v, s in rows),
    )


def find_zeros(oracle: PgfOracle, phi: TestFunction, tol: Tolerances) -> tuple[ZeroSet, np.ndarray]:
    """Zeros of ``z -> B(z phi)`` and the residual ``|B(x phi)|`` at each."""
    if isinstance(oracle, Empirical):
        fit = zeros_by_fit(oracle, phi, len(phi.ess_support), tol)
        zs = fit.zeros
    else:
        top = float(np.max(np.abs(phi.phi), initial=0.0))
        start = 0.5 / top if top > 0 else 1.0
        zs = zeros_blind(oracle.entire(phi), oracle.degree_bound(phi), start, tol)
    f = oracle.entire(phi)
    residual = np.abs(f.f(zs.zeros)) if len(zs) else np.zeros(0)
    return zs, residual


def write_zeros(zs: ZeroSet, residual: np.ndarray, path: Path) -> None:
    write_csv(
        path,
        ["zero_re", "zero_im", "multiplicity", "residual"],
        ((float(x.real), float(x.imag), int(m), float(r)) for x, m, r in zip(zs.zeros, zs.multiplicities, residual)),
    )


def _options(cfg: ExperimentConfig) -> DisentangleOptions:
    g = cfg.phi_grid
    return DisentangleOptions(
        windows=cfg.windows,
        grid_size=int(g.get("count", 20)),
        grid_low=float(g.get("low", -0.9)),
        grid_high=float(g.get("high", -0.1)),
        grid_seed=int(g.get("seed", 0)),
        minors=True,
        threads=cfg.threads,
        bootstrap=cfg.bootstrap,
        bootstrap_seed=cfg.seed or 0,
        tol=cfg.tol,
    )


def _subset_key(s) -> list[int]:
    return sorted(int(i) for i in s)


def _plain(v: Any) -> Any:
    """Make diagnostics JSON-friendly (frozenset keys become index lists)."""
    if isinstance(v, dict):
        if any(isinstance(k, frozenset) for k in v):
            return [{"subset": _subset_key(k), "value": _plain(val)} for k, val in sorted(v.items(), key=lambda kv: (len(kv[0]), _subset_key(kv[0])))]
        return {str(k): _plain(val) for k, val in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def result_to_dict(result: DisentangleResult) -> dict:
    def ordered(d):
        return sorted(d.items(), key=lambda kv: (len(kv[0]), _subset_key(kv[0])))

    spectra = []
    for w, lam in ordered(result.window_spectra):
        se = result.spectra_stderr.get(w) if result.spectra_stderr else None
        spectra.append({"window": _subset_key(w), "spectrum": list(lam), "stderr": None if se is None else list(se)})
    minors = None
    if result.principal_minors is not None:
        minors = []
        for s, v in ordered(result.principal_minors):
            se = result.minors_stderr.get(s) if result.minors_stderr else None
            minors.append({"subset": _subset_key(s), "value": v, "stderr": se})
    factors = []
    for fac in result.per_phi_factors:
        factors.append({
            "phi": list(fac.phi.phi),
            "F": fac.F_value,
            "B_N": fac.B_N,
            "B_Pi": fac.B_Pi,
            "B_N_stderr": fac.B_N_stderr,
            "B_Pi_stderr": fac.B_Pi_stderr,
            "zeros": list(fac.zeros.zeros),
            "multiplicities": [int(m) for m in fac.zeros.multiplicities],
        })
    return {
        "mode": result.mode,
        "ok": result.ok,
        "labels": list(result.space.labels),
        "recovered_nu": None if result.recovered_nu is None else list(result.recovered_nu.nu),
        "nu_stderr": None if result.nu_stderr is None else list(result.nu_stderr),
        "window_spectra": spectra,
        "principal_minors": minors,
        "per_phi_factors": factors,
        "nonvanishing_values": result.nonvanishing_values,
        "diagnostics": _plain(result.diagnostics),
        "flags": dict(sorted(result.flags.items())),
    }


# truth vs recovered --------------------------------------------------------------

@dataclass
class Check:
    name: str
    truth: Any
    recovered: Any
    error: float
    limit: float

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.limit)


def _truth(model: ProcessModel):
    parts = leaves(model)
    nu = sum((p.intensity.nu for p in parts if isinstance(p, Poisson)), np.zeros(model.space.n))
    dpps = [p for p in parts if isinstance(p, Determinantal)]
    K = dpps[0].kernel.matrix if len(dpps) == 1 else None
    return nu, K, len(dpps)


def compare(cfg: ExperimentConfig, result: DisentangleResult) -> list[Check]:
    """Truth-vs-recovered checks.  Exact mode uses absolute tolerances,
    empirical mode five standard errors."""
    if cfg.model is None:
        return []
    nu, K, n_dpp = _truth(cfg.model)
    exact = result.mode == "exact"
    checks: list[Check] = []
    if result.recovered_nu is not None:
        got = result.diagnostics.get("nu_raw", result.recovered_nu.nu)
        for i in range(cfg.space.n):
            lim = cfg.tol.nu_abs if exact else 5 * float(result.nu_stderr[i])
            checks.append(Check(f"nu[{cfg.space.labels[i]}]", nu[i], got[i], abs(got[i] - nu[i]), lim))
    if n_dpp > 1:
        return checks
    for w, lam in sorted(result.window_spectra.items(), key=lambda kv: (len(kv[0]), _subset_key(kv[0]))):
        idx = _subset_key(w)
        if K is None:
            truth = np.zeros(0)
        else:
            truth = np.linalg.eigvalsh(K[np.ix_(idx, idx)])
            truth = np.sort(truth[np.abs(truth) > cfg.tol.eigen_zero])[::-1]
        name = f"spectrum{idx}"
        if truth.size != len(lam):
            checks.append(Check(name, list(truth), list(lam), math.inf, 0.0))
            continue
        err = match_multisets(truth, lam) if truth.size else np.zeros(0)
        if exact:
            lim = np.full(err.shape, cfg.tol.spectrum_abs)
        else:
            se = result.spectra_stderr.get(w, np.zeros(0))
            order = np.argsort(-np.asarray(lam).real)
            lim = 5 * np.asarray(se)[order] if len(se) == len(lam) else np.zeros(len(lam))
            err = np.abs(np.sort(truth)[::-1] - np.asarray(lam).real[order])
        worst = int(np.argmax(err - lim)) if err.size else 0
        checks.append(Check(name, list(truth), list(lam), float(err[worst]) if err.size else 0.0,
                            float(lim[worst]) if err.size else 0.0))
    if result.principal_minors is not None:
        for s, v in sorted(result.principal_minors.items(), key=lambda kv: (len(kv[0]), _subset_key(kv[0]))):
            idx = _subset_key(s)
            truth = float(np.linalg.det(K[np.ix_(idx, idx)]).real) if K is not None else 0.0
            lim = cfg.tol.minor_abs if exact else 5 * float(result.minors_stderr[s])
            checks.append(Check(f"minor{idx}", truth, v, abs(v - truth), lim))
    return checks


def _cell(v: Any) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_cell(x) for x in v) + "]"
    if isinstance(v, (complex, np.complexfloating)):
        if abs(v.imag) <= 1e-12 * max(1.0, abs(v.real)):
            return fmt(v.real)
        return f"{fmt(v.real)}{'+' if v.imag >= 0 else '-'}{fmt(abs(v.imag))}j"
    if isinstance(v, (float, np.floating, int, np.integer)):
        return fmt(v)
    return str(v)


def render_report(cfg: ExperimentConfig, result: DisentangleResult, checks: list[Check]) -> str:
    lines = [f"mode: {result.mode}", f"atoms: {', '.join(cfg.space.labels)}"]
    if result.mode == "empirical":
        lines.append(f"samples: {cfg.samples if cfg.input is None else 'from ' + str(cfg.input)}")
        if result.nu_stderr is not None and np.any(np.asarray(result.nu_stderr) > 0.1):
            lines.append("warning: wide uncertainty (some intensity standard errors exceed 0.1)")
    lines.append("")
    lines.append("quantity\ttruth\trecovered\terror\tlimit\tstatus")
    for c in checks:
        lines.append("\t".join([
            c.name, _cell(c.truth), _cell(c.recovered), _cell(c.error), _cell(c.limit), "ok" if c.passed else "FAIL",
        ]))
    if not checks:
        lines.append("(no ground truth available)")
    lines.append("")
    if result.flags:
        lines.append("flags:")
        for k, v in sorted(result.flags.items()):
            lines.append(f"  {k}: {v}")
    for key in ("max_factor_residual", "max_poisson_consistency"):
        if key in result.diagnostics:
            lines.append(f"{key}: {fmt(result.diagnostics[key])}")
    return "\n".join(lines) + "\n"


# commands ------------------------------------------------------------------------

def _out(cfg: ExperimentConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def cmd_simulate(cfg: ExperimentConfig) -> int:
    if cfg.model is None:
        raise ConfigError("missing field", "model")
    if cfg.seed is None:
        raise ConfigError("simulate needs an explicit seed", "seed")
    if cfg.samples < 1:
        raise ConfigError("simulate needs samples >= 1", "samples")
    batch = sample_batch(cfg.model, cfg.samples, RngState(cfg.seed), cfg.threads)
    write_samples(_out(cfg) / "samples.csv", batch)
    return EXIT_OK


def cmd_pgf(cfg: ExperimentConfig) -> int:
    oracle = _oracle(cfg)
    phi = _phi(cfg)
    out = _out(cfg)
    write_pgf(oracle, phi, cfg.z_grid, out / "pgf.csv")
    emit_grid(oracle, phi, cfg.z_grid, out / "grid.csv")
    return EXIT_OK


def cmd_zeros(cfg: ExperimentConfig) -> int:
    oracle = _oracle(cfg)
    zs, residual = find_zeros(oracle, _phi(cfg), cfg.tol)
    write_zeros(zs, residual, _out(cfg) / "zeros.csv")
    return EXIT_OK


def _disentangle(cfg: ExperimentConfig, oracle: PgfOracle) -> tuple[DisentangleResult, list[Check]]:
    result = disentangle(oracle, cfg.space, _options(cfg))
    checks = compare(cfg, result) if cfg.checks else []
    out = _out(cfg)
    payload = result_to_dict(result)
    payload["checks"] = [
        {"name": c.name, "error": c.error, "limit": c.limit, "passed": c.passed} for c in checks
    ]
    write_json(out / "result.json", payload)
    report = render_report(cfg, result, checks)
    (out / "report.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return result, checks


def _verdict(checks: list[Check]) -> int:
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise ToleranceExceeded("checks failed: " + ", ".join(failed))
    return EXIT_OK


def cmd_disentangle(cfg: ExperimentConfig) -> int:
    _, checks = _disentangle(cfg, _oracle(cfg))
    return _verdict(checks)


def cmd_experiment(cfg: ExperimentConfig) -> int:
    out = _out(cfg)
    batch = None
    if cfg.mode == "empirical":
        batch = _batch(cfg)
        write_samples(out / "samples.csv", batch)
    oracle = _oracle(cfg, batch)
    phi = cfg.phi or phi_grid(cfg.space, 1, seed=int(cfg.phi_grid.get("seed", 0)))[0]
    grid = cfg.z_grid
    if grid.size == 0:
        grid = _z_grid({"re": [-4, 1, 51], "im": [-1, 1, 21]})
    write_pgf(oracle, phi, grid, out / "pgf.csv")
    emit_grid(oracle, phi, grid, out / "grid.csv")
    zs, residual = find_zeros(oracle, phi, cfg.tol)
    write_zeros(zs, residual, out / "zeros.csv")
    _, checks = _disentangle(cfg, oracle)
    return _verdict(checks)


COMMANDS = {
    "simulate": cmd_simulate,
    "pgf": cmd_pgf,
    "zeros": cmd_zeros,
    "disentangle": cmd_disentangle,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pgf-disentangle",
        description="Separate a Poisson + determinantal superposition from its generating functional.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON model or experiment file")
        s.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
        s.add_argument("--samples", type=int, help="number of samples M")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--mode", choices=["exact", "empirical"])
        s.add_argument("--tolerance", action="append", metavar="KEY=VALUE", help="override a tolerance")
        s.add_argument("--threads", type=int, help="worker threads (env PGF_DISENTANGLE_THREADS wins)")
        if name in ("pgf", "zeros", "disentangle"):
            s.add_argument("--input", help="sample CSV for empirical mode")
    return p


NUMERIC_ERRORS = (ArithmeticError, np.linalg.LinAlgError, NumericalFailure)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToleranceExceeded as exc:
        print(f"tolerance exceeded: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
