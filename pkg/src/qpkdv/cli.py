"""Configuration-driven experiment runner.

One JSON config file describes an experiment (nonlinearity, forcing
frequency, lambda values, truncation, iteration budgets); the subcommands
solve | reduce | measure | stability | verify run the corresponding pipeline
stage and serialize every report.  Outputs are deterministic for a fixed
config and seed.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import kamreduce as km
from . import nonlin
from . import opalg
from . import regularize
from . import solver as sv
from .spectral import (
    FourierField,
    Frequency,
    Truncation,
    dx_pow,
    field_to_json,
    multiply,
    random_real_field,
    sobolev_norm,
    structure_check,
    synthesize,
    analyze,
)

SCHEMA_VERSION = 1

FREQUENCY_PRESETS = {
    "unit": (1.0,),
    "golden": ((math.sqrt(5.0) - 1.0) / 2.0,),
}

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_EXCLUDED = 2


class ConfigError(ValueError):
    """Config validation failure; the message names the offending field path."""


_MISSING = object()


def _take(d, key, path, default=_MISSING):
    if key in d:
        return d[key]
    if default is _MISSING:
        raise ConfigError(f"{path}: missing required field")
    return default


@dataclass
class ExperimentConfig:
    nonlinearity_text: str
    declared_form: str
    epsilons: list
    omega_bar: tuple
    lambdas: list
    truncation: Truncation
    kam: dict = dc_field(default_factory=dict)
    nash_moser: dict = dc_field(default_factory=dict)
    dynamics: dict = dc_field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0

    @property
    def nu(self) -> int:
        return len(self.omega_bar)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        take = _take
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")

        nl = take(raw, "nonlinearity", "nonlinearity")
        if not isinstance(nl, dict):
            raise ConfigError("nonlinearity: expected an object")
        if "builtin" in nl:
            name = nl["builtin"]
            if name not in nonlin.BUILTINS:
                raise ConfigError(
                    f"nonlinearity.builtin: unknown name {name!r}; "
                    f"have {sorted(nonlin.BUILTINS)}"
                )
            text, form = nonlin.BUILTINS[name]
        else:
            text = take(nl, "text", "nonlinearity.text")
            form = take(nl, "declared_form", "nonlinearity.declared_form", "raw_f")

        eps = take(raw, "epsilon", "epsilon")
        epsilons = [float(e) for e in (eps if isinstance(eps, list) else [eps])]
        if any(e < 0 for e in epsilons):
            raise ConfigError("epsilon: values must be >= 0")

        fr = take(raw, "frequency", "frequency", {"preset": "unit"})
        if "preset" in fr:
            preset = fr["preset"]
            if preset not in FREQUENCY_PRESETS:
                raise ConfigError(
                    f"frequency.preset: unknown preset {preset!r}; "
                    f"have {sorted(FREQUENCY_PRESETS)}"
                )
            omega_bar = FREQUENCY_PRESETS[preset]
        else:
            omega_bar = tuple(float(w) for w in take(fr, "omega_bar", "frequency.omega_bar"))
        if not omega_bar:
            raise ConfigError("frequency.omega_bar: must be non-empty")

        lam = take(raw, "lambda", "lambda", 1.25)
        if isinstance(lam, dict):
            lo = float(take(lam, "min", "lambda.min"))
            hi = float(take(lam, "max", "lambda.max"))
            count = int(take(lam, "count", "lambda.count"))
            if count < 1:
                raise ConfigError("lambda.count: must be >= 1")
            lambdas = [float(v) for v in np.linspace(lo, hi, count)]
        else:
            lambdas = [float(v) for v in (lam if isinstance(lam, list) else [lam])]
        if any(not (0.5 <= v <= 1.5) for v in lambdas):
            raise ConfigError("lambda: values must lie in [1/2, 3/2]")

        tr = take(raw, "truncation", "truncation", {})
        trunc = Truncation(
            len(omega_bar),
            int(take(tr, "n_phi", "truncation.n_phi", 8)),
            int(take(tr, "n_x", "truncation.n_x", 8)),
            int(take(tr, "oversample", "truncation.oversample", 2)),
        )

        kam = dict(take(raw, "kam", "kam", {}))
        nu = len(omega_bar)
        tau = kam.get("tau")
        if tau is not None and tau <= nu + 1:
            warnings.warn(
                f"kam.tau = {tau} <= nu + 1 = {nu + 1}: outside the regime "
                "where the divisor estimates are justified",
                stacklevel=2,
            )

        return cls(
            nonlinearity_text=text,
            declared_form=form,
            epsilons=epsilons,
            omega_bar=omega_bar,
            lambdas=lambdas,
            truncation=trunc,
            kam=kam,
            nash_moser=dict(take(raw, "nash_moser", "nash_moser", {})),
            dynamics=dict(take(raw, "dynamics", "dynamics", {})),
            output_dir=str(take(raw, "output_dir", "output_dir", "out")),
            seed=int(take(raw, "seed", "seed", 0)),
        )

    def solver_config(self) -> sv.SolverConfig:
        kw = {}
        if self.kam.get("gamma") is not None:
            kw["gamma"] = float(self.kam["gamma"])
        if self.kam.get("a") is not None:
            kw["a"] = float(self.kam["a"])
        if self.kam.get("tau") is not None:
            kw["tau"] = float(self.kam["tau"])
        if self.kam.get("N0") is not None:
            kw["N0"] = int(self.kam["N0"])
        if self.kam.get("target_decay") is not None:
            kw["kam_target"] = float(self.kam["target_decay"])
        if self.kam.get("max_steps") is not None:
            kw["kam_max_steps"] = int(self.kam["max_steps"])
        if self.nash_moser.get("tol_res") is not None:
            kw["tol_res"] = float(self.nash_moser["tol_res"])
        if self.nash_moser.get("max_iters") is not None:
            kw["max_iters"] = int(self.nash_moser["max_iters"])
        return sv.SolverConfig(trunc=self.truncation, **kw)

    def spec(self, epsilon: float) -> nonlin.NonlinearitySpec:
        # epsilon = 0 is allowed in configs; the parsed strength must be
        # positive, so the nonlinearity is switched off by an underflowing one
        eff = epsilon if epsilon > 0 else 1e-300
        return nonlin.parse_nonlinearity(self.nonlinearity_text, self.declared_form, eff)


# ------------------------------------------------------------ serialization


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"re": obj.real.tolist(), "im": obj.imag.tolist()}
        return obj.tolist()
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_field(out: Path, name: str, f: FourierField) -> None:
    _write_json(out / "fields" / f"{name}.json", field_to_json(f))


def _write_trace(path: Path, header: list, rows: list) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float)
                              else str(row[k]) for k in header) + "\n")


def _tag(lam: float, eps: float) -> str:
    return f"lam{lam:g}_eps{eps:g}"


# -------------------------------------------------------------- subcommands


def _run_solve(config: ExperimentConfig, out: Path, workers: int,
               rng: np.random.Generator) -> int:
    results, any_ok, any_excluded = [], False, False
    trace_rows = []
    for eps in config.epsilons:
        for lam in config.lambdas:
            freq = Frequency(config.omega_bar, lam)
            rep = sv.nash_moser(config.spec(eps), freq, config.solver_config())
            tag = _tag(lam, eps)
            results.append({
                "tag": tag,
                "lambda": lam,
                "epsilon": eps,
                "converged": rep.converged,
                "excluded_lambda": rep.excluded_lambda,
                "exclusion_reason": rep.exclusion_reason,
                "iterates": rep.iterates,
                "solution_norm_s0": sobolev_norm(rep.solution, config.truncation.s0),
                "structure": rep.diagnostics.get("structure"),
            })
            _write_field(out, f"solution_{tag}", rep.solution)
            if rep.eigs is not None:
                _write_json(out / "fields" / f"eigenvalues_{tag}.json",
                            {"mu": rep.eigs.mu})
            for it in rep.iterates:
                trace_rows.append({"tag": tag, **it})
            any_ok = any_ok or rep.converged
            any_excluded = any_excluded or rep.excluded_lambda
    _write_json(out / "report.json", {"subcommand": "solve", "runs": results,
                                      "seed": config.seed})
    _write_trace(out / "trace.csv", ["tag", "n", "u_norm", "res", "N", "gamma"],
                 trace_rows)
    return EXIT_EXCLUDED if (any_excluded and not any_ok) else EXIT_OK


def _run_reduce(config: ExperimentConfig, out: Path, workers: int,
                rng: np.random.Generator) -> int:
    eps = config.epsilons[0]
    lam = config.lambdas[0]
    freq = Frequency(config.omega_bar, lam)
    spec = config.spec(eps)
    u = FourierField.zeros(config.truncation)
    rg = regularize.regularize_at(spec, freq, u)
    cfg = config.solver_config()
    gamma, tau = cfg.resolved(config.nu, eps if eps > 0 else 1e-300)
    schedule = km.IterationSchedule(
        N0=cfg.N0, gamma=gamma, tau=tau, max_steps=cfg.kam_max_steps,
        target_decay=cfg.kam_target,
        mode="hamiltonian" if rg.mode == "hamiltonian" else "generic",
        smallness_threshold=cfg.smallness_threshold,
    )
    try:
        red = km.reduce(rg, freq, schedule)
    except km.ReductionError as err:
        _write_json(out / "report.json", {
            "subcommand": "reduce", "lambda": lam, "epsilon": eps,
            "excluded": True, "reason": str(err), "seed": config.seed,
        })
        return EXIT_EXCLUDED
    report = {
        "subcommand": "reduce",
        "lambda": lam,
        "epsilon": eps,
        "m3": rg.m3,
        "m1": rg.m1,
        "excluded": bool(red.exclusion),
        "eigenvalues": km.eigenvalue_report(red.eigs, rg.m3, rg.m1, eps, rg.mode),
        "steps": len(red.trace),
        "seed": config.seed,
    }
    _write_json(out / "report.json", report)
    km.write_trace_csv(red.trace, out / "trace.csv")
    _write_json(out / "fields" / "eigenvalues.json", {"mu": red.eigs.mu})
    return EXIT_EXCLUDED if red.exclusion else EXIT_OK


def _run_measure(config: ExperimentConfig, out: Path, workers: int,
                 rng: np.random.Generator) -> int:
    cfg = config.solver_config()
    rep = sv.cantor_measure(
        config.nonlinearity_text,
        config.declared_form,
        config.omega_bar,
        [e for e in config.epsilons if e > 0],
        np.asarray(config.lambdas),
        a=cfg.a,
        trunc=config.truncation,
        workers=workers,
        config_kw={"gamma": cfg.gamma, "tau": cfg.tau, "N0": cfg.N0,
                   "max_iters": cfg.max_iters},
    )
    _write_json(out / "report.json", {
        "subcommand": "measure",
        "epsilons": rep.epsilons,
        "fractions": rep.fractions,
        "baseline_fractions": rep.baseline_fractions,
        "gamma_rule": rep.gamma_rule,
        "seed": config.seed,
    })
    rows = []
    for eps in rep.epsilons:
        for rec in rep.records[eps]:
            rows.append({"epsilon": eps, "lambda": rec["lambda"],
                         "accepted": int(rec["accepted"]),
                         "excluded": int(rec["excluded"])})
    _write_trace(out / "trace.csv",
                 ["epsilon", "lambda", "accepted", "excluded"], rows)
    if all(f == 0.0 for f in rep.fractions.values()):
        return EXIT_EXCLUDED
    return EXIT_OK


def _run_stability(config: ExperimentConfig, out: Path, workers: int,
                   rng: np.random.Generator) -> int:
    eps = config.epsilons[0]
    lam = config.lambdas[0]
    freq = Frequency(config.omega_bar, lam)
    spec = config.spec(eps)
    cfg = config.solver_config()
    solve = sv.nash_moser(spec, freq, cfg)
    if solve.excluded_lambda:
        _write_json(out / "report.json", {
            "subcommand": "stability", "lambda": lam, "epsilon": eps,
            "excluded": True, "reason": solve.exclusion_reason,
            "seed": config.seed,
        })
        return EXIT_EXCLUDED
    rg = regularize.regularize_at(spec, freq, solve.solution)
    gamma, tau = cfg.resolved(config.nu, eps if eps > 0 else 1e-300)
    red = km.reduce(rg, freq, km.IterationSchedule(
        N0=cfg.N0, gamma=gamma, tau=tau, max_steps=cfg.kam_max_steps,
        target_decay=cfg.kam_target,
        mode="hamiltonian" if rg.mode == "hamiltonian" else "generic",
        smallness_threshold=cfg.smallness_threshold,
    ))
    h0 = dyn.random_phase_state(
        config.truncation.n_x,
        np.random.default_rng(int(config.dynamics.get("seed", config.seed))),
        decay=3.0,
    )
    report = dyn.stability_report(
        rg, red, freq, h0,
        T=float(config.dynamics.get("T", 100.0)),
        s=float(config.dynamics.get("s", 2.0)),
        dt=float(config.dynamics.get("dt", 0.01)),
    )
    samples = report.pop("samples")
    _write_json(out / "report.json", {
        "subcommand": "stability", "lambda": lam, "epsilon": eps,
        "excluded": False, "seed": config.seed, **report,
    })
    dyn.write_trajectory_csv(samples, out / "trace.csv")
    _write_json(out / "fields" / "h0.json", {"h": h0.h})
    return EXIT_OK


def _verify_checks(config: ExperimentConfig, rng: np.random.Generator) -> list:
    trunc = Truncation(config.nu, min(config.truncation.n_phi, 6),
                       min(config.truncation.n_x, 6))
    lam = config.lambdas[0]
    freq = Frequency(config.omega_bar, lam)
    checks = []

    def add(name, value, tol):
        checks.append({"check": name, "value": float(value), "tol": tol,
                       "passed": bool(value < tol)})

    u = random_real_field(trunc, rng, decay=3.0)
    v = random_real_field(trunc, rng, decay=3.0)
    round_trip = analyze(trunc, synthesize(u))
    add("transform round trip", sobolev_norm(round_trip - u, trunc.s0), 1e-12)
    add("product rule defect",
        sobolev_norm(dx_pow(multiply(u, v), 1)
                     - multiply(dx_pow(u, 1), v) - multiply(u, dx_pow(v, 1)),
                     trunc.s0) / (1.0 + sobolev_norm(u, trunc.s0 + 3)), 1e-8)

    A = opalg.from_multiplication(random_real_field(trunc, rng, decay=4.0, scale=0.1))
    B = opalg.from_multiplier(trunc, lambda j: 1j * j)
    w = random_real_field(trunc, rng, decay=3.0)
    add("operator composition defect",
        sobolev_norm(opalg.apply(opalg.compose(A, B), w)
                     - opalg.apply(A, opalg.apply(B, w)), trunc.s0), 1e-10)

    eps = next((e for e in config.epsilons if e > 0), 1e-3)
    spec = config.spec(eps)
    u0 = random_real_field(trunc, rng, decay=4.0, scale=1e-3, parity="X")
    rg = regularize.regularize_at(spec, freq, u0)
    probe = random_real_field(trunc, rng, decay=3.0, scale=1.0)
    add("regularization semi-conjugacy", regularize.conjugacy_residual(rg, probe), 1e-5)
    add("order-one remainder", float(np.max(np.abs(rg.chain["r1"].c))), 1e-10)

    try:
        red = km.reduce(rg, freq, km.IterationSchedule(
            gamma=0.01, smallness_threshold=1e6,
            mode="hamiltonian" if rg.mode == "hamiltonian" else "generic"))
        add("reduction final remainder", red.trace[-1]["R_s0"], 1e-9)
        f = random_real_field(trunc, rng, decay=4.0, scale=1.0, parity="Y")
        structure = ("total_derivative"
                     if rg.mode == "hamiltonian"
                     or nonlin.structure_flags(spec).total_derivative
                     else "reversible")
        if structure == "total_derivative":
            f = f.shift_mean(-f.mean)
        h = sv.right_inverse(rg, red, freq, f, 0.01, config.nu + 2.0, structure)
        add("right-inverse residual",
            sobolev_norm(rg.apply_L(h) - f, trunc.s0), 1e-6)
    except km.ReductionError as err:
        checks.append({"check": "reduction final remainder", "value": None,
                       "tol": None, "passed": False, "reason": str(err)})

    h0 = dyn.random_phase_state(trunc.n_x, rng, decay=3.0)
    zero = FourierField.zeros(trunc)
    _, states = dyn.integrate_linear((zero, zero, zero, zero), freq, h0, 1.0, 0.01)
    j = np.arange(-trunc.n_x, trunc.n_x + 1)
    add("free flow exactness",
        float(np.max(np.abs(states[-1] - np.exp(1j * j**3) * h0.h))), 1e-12)
    return checks


def _run_verify(config: ExperimentConfig, out: Path, workers: int,
                rng: np.random.Generator) -> int:
    checks = _verify_checks(config, rng)
    width = max(len(c["check"]) for c in checks)
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        value = "n/a" if c["value"] is None else f"{c['value']:.3e}"
        print(f"{c['check']:<{width}}  {value:>10}  {status}")
    _write_json(out / "report.json", {"subcommand": "verify", "checks": checks,
                                      "seed": config.seed})
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_ERROR


_SUBCOMMANDS = {
    "solve": _run_solve,
    "reduce": _run_reduce,
    "measure": _run_measure,
    "stability": _run_stability,
    "verify": _run_verify,
}


def run(config: ExperimentConfig, subcommand: str, out: Path | None = None,
        workers: int = 1, seed: int | None = None) -> int:
    if subcommand not in _SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    if seed is not None:
        config.seed = int(seed)
    out = Path(out) if out is not None else Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    return _SUBCOMMANDS[subcommand](config, out, workers, rng)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qpkdv",
        description="Quasi-periodic forced KdV: solve, reduce, measure, "
                    "stability, verify.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        config = ExperimentConfig.from_dict(raw)
        return run(config, args.subcommand, out=args.out,
                   workers=args.workers, seed=args.seed)
    except (ConfigError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (sv.StructureError, sv.DivergenceError, nonlin.ParseError,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
