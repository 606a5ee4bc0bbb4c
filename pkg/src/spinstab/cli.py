"""Command-line front end: ensemble runs, condition audits, oracle checks.

Exit codes follow the usual convention: 0 success, 1 a runtime or tolerance
failure, 2 bad flags or rejected parameters.  `--unchecked` skips the
front-end validation layer so that constructor-level rejection can be
exercised directly; either path reports bad parameters with exit 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .spin import (
    ModelParams,
    build_operators,
    pure_state,
    random_density,
    validate_state,
)
from .dynamics import (
    EdgeTarget,
    FeedbackLaw,
    GeneralTarget,
    Zero,
    diffusion,
    drift_ito,
    drift_stratonovich,
    feedback_value,
)
from .integrate import SdeConfig, simulate_zakai_pair
from .analysis import (
    audit_conditions,
    dynkin_estimate,
    generator_edge,
    generator_general,
    generator_qsr,
    lyapunov_edge,
    lyapunov_general,
    lyapunov_qsr,
)
from .ensemble import EnsembleConfig, PRESET_NAMES, preset, run_ensemble, write_csv

_LAW_NAMES = ("zero", "edge", "general")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--levels", type=int, default=None, help="number of levels N")
    p.add_argument("--omega", type=float, default=None, help="detuning (1/time)")
    p.add_argument("--eta", type=float, default=None, help="detector efficiency in (0,1]")
    p.add_argument("--bigm", type=float, default=None, help="measurement strength M (1/time)")
    p.add_argument("--target", type=int, default=None, help="target level index")
    p.add_argument("--law", choices=_LAW_NAMES, default=None, help="feedback law")
    p.add_argument("--alpha", type=float, default=None, help="drive gain")
    p.add_argument("--beta", type=float, default=None, help="drive exponent (> 1/2)")
    p.add_argument("--gamma", type=float, default=None, help="alignment gain (edge law)")
    p.add_argument("--init", default=None,
                   help="initial state: diag:a,b,... | pure:n | file:path")
    p.add_argument("--dt", type=float, default=None, help="step size (time)")
    p.add_argument("--tfinal", type=float, default=None, help="horizon (time)")
    p.add_argument("--ntraj", type=int, default=None, help="trajectory count")
    p.add_argument("--seed", type=int, default=None, help="base seed (64-bit)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (0 = all cores; default SPINSTAB_WORKERS or 1)")
    p.add_argument("--record-stride", type=int, default=None,
                   help="record every k-th step")
    p.add_argument("--threshold", type=float, default=None,
                   help="convergence classification threshold (default 0.99)")
    p.add_argument("--unchecked", action="store_true",
                   help="skip front-end validation; let constructors reject")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinstab",
        description="Measurement-driven spin trajectories with stabilizing feedback.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an ensemble and write CSV output")
    _add_common_flags(run)
    run.add_argument("--preset", choices=PRESET_NAMES, default=None,
                     help="named figure configuration")
    run.add_argument("--out", default=None, help="CSV output path (.meta.json sidecar)")

    audit = sub.add_parser("audit", help="audit the stabilization hypotheses")
    _add_common_flags(audit)
    audit.add_argument("--samples", type=int, default=10_000,
                       help="audit sample count per condition")

    oracle = sub.add_parser("oracle", help="independent numerical cross-checks")
    oracle.add_argument("suite", choices=("zakai", "generator", "strat"))
    oracle.add_argument("--dt", type=float, default=1e-4, help="step size (time)")
    oracle.add_argument("--tfinal", type=float, default=1.0, help="horizon (time)")
    oracle.add_argument("--states", type=int, default=20,
                        help="random states for the generator suite")
    oracle.add_argument("--seed", type=int, default=0, help="base seed")
    return parser


def _parse_init(text: str, levels: int) -> np.ndarray:
    kind, _, rest = text.partition(":")
    if kind == "diag":
        vals = [float(x) for x in rest.split(",")]
        if len(vals) != levels:
            raise ValueError(f"diag needs {levels} entries, got {len(vals)}")
        rho = np.diag(np.array(vals, dtype=complex))
    elif kind == "pure":
        rho = pure_state(int(rest), levels)
    elif kind == "file":
        with open(rest, encoding="utf-8") as fh:
            raw = json.load(fh)
        rho = np.array([[complex(re, im) for re, im in row] for row in raw])
    else:
        raise ValueError(f"unknown init spec {text!r}")
    validate_state(rho)
    return rho


def _build_law(args: argparse.Namespace) -> FeedbackLaw:
    name = args.law or "zero"
    if name == "zero":
        return Zero()
    nbar = args.target if args.target is not None else 0
    alpha = args.alpha if args.alpha is not None else 1.0
    beta = args.beta if args.beta is not None else 1.0
    if name == "edge":
        gamma = args.gamma if args.gamma is not None else 0.0
        return EdgeTarget(nbar=nbar, alpha=alpha, beta=beta, gamma=gamma)
    return GeneralTarget(nbar=nbar, alpha=alpha, beta=beta)


def _precheck(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Front-end flag validation; bypassed by --unchecked."""
    if args.unchecked:
        return
    if args.eta is not None and not 0.0 < args.eta <= 1.0:
        parser.error(f"--eta must be in (0,1], got {args.eta}")
    if args.bigm is not None and args.bigm <= 0.0:
        parser.error(f"--bigm must be positive, got {args.bigm}")
    if args.alpha is not None and args.alpha <= 0.0:
        parser.error(f"--alpha must be positive, got {args.alpha}")
    if args.beta is not None and args.beta <= 0.5:
        parser.error(f"--beta must exceed 1/2, got {args.beta}")
    if args.gamma is not None and args.gamma < 0.0:
        parser.error(f"--gamma must be nonnegative, got {args.gamma}")
    if args.ntraj is not None and args.ntraj < 1:
        parser.error(f"--ntraj must be at least 1, got {args.ntraj}")


def _default_workers(args: argparse.Namespace) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("SPINSTAB_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ValueError(f"SPINSTAB_WORKERS is not an integer: {env!r}") from exc
    return 1


def _resolve_run_config(args: argparse.Namespace) -> EnsembleConfig:
    if args.preset is not None:
        cfg = preset(args.preset)
        model = cfg.model
        law = cfg.law
        initial = np.array(cfg.initial)
        dt, t_final, stride = cfg.sde.dt, cfg.sde.t_final, cfg.sde.record_stride
        n_traj, base_seed, threshold = cfg.n_traj, cfg.base_seed, cfg.threshold
    else:
        model = None
        law = None
        initial = None
        dt, t_final, stride = 1e-3, 10.0, 10
        n_traj, base_seed, threshold = 10, 0, 0.99

    levels = args.levels if args.levels is not None else (model.levels if model else 3)
    model = ModelParams(
        levels=levels,
        omega=args.omega if args.omega is not None else (model.omega if model else 0.0),
        eta=args.eta if args.eta is not None else (model.eta if model else 1.0),
        strength=args.bigm if args.bigm is not None else (model.strength if model else 1.0),
    )
    if args.law is not None or law is None:
        law = _build_law(args)
    if args.init is not None:
        initial = _parse_init(args.init, levels)
    if initial is None:
        initial = pure_state(0, levels)
    sde = SdeConfig(
        dt=args.dt if args.dt is not None else dt,
        t_final=args.tfinal if args.tfinal is not None else t_final,
        record_stride=args.record_stride if args.record_stride is not None else stride,
        seed=args.seed if args.seed is not None else base_seed,
    )
    return EnsembleConfig(
        model=model,
        law=law,
        initial=initial,
        sde=sde,
        n_traj=args.ntraj if args.ntraj is not None else n_traj,
        base_seed=args.seed if args.seed is not None else base_seed,
        workers=_default_workers(args),
        threshold=args.threshold if args.threshold is not None else threshold,
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _resolve_run_config(args)
    stats = run_ensemble(cfg)
    if args.out is not None:
        write_csv(stats, args.out)
    db_name = "dB_set" if isinstance(cfg.law, Zero) else "dB_target"
    final_db = stats.mean[db_name][-1]
    freqs = ", ".join(f"{f:.3f}" for f in stats.frequencies)
    finite = stats.slopes[~np.isnan(stats.slopes)]
    med = float(np.median(finite)) if finite.size else float("nan")
    print(
        f"final mean d_B = {final_db:.6g}; frequencies = ({freqs}); "
        f"undecided = {stats.undecided}; median slope = {med:.4g}"
    )
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    law = _build_law(args)
    if isinstance(law, Zero):
        print("audit requires a stabilizing law (--law edge|general)", file=sys.stderr)
        return 2
    levels = args.levels if args.levels is not None else 3
    model = ModelParams(
        levels=levels,
        omega=args.omega if args.omega is not None else 0.0,
        eta=args.eta if args.eta is not None else 0.3,
        strength=args.bigm if args.bigm is not None else 1.0,
    )
    ops = build_operators(model)
    report = audit_conditions(
        law, model, ops, n_samples=args.samples,
        seed=args.seed if args.seed is not None else 0,
    )
    for check in report.checks:
        tag = " (vacuous)" if check.vacuous else ""
        print(
            f"{check.condition:13s} samples={check.samples:6d} "
            f"violations={check.violations:4d} worst_margin={check.worst_margin:.6g}{tag}"
        )
    print("audit:", "pass" if report.passed else "FAIL")
    return 0 if report.passed else 1


def _oracle_zakai(args: argparse.Namespace) -> int:
    model = ModelParams(levels=3, omega=0.0, eta=0.3, strength=1.0)
    ops = build_operators(model)
    rho0 = np.diag([0.3, 0.4, 0.3]).astype(complex)
    gaps = []
    for dt in (args.dt, 0.5 * args.dt):
        cfg = SdeConfig(dt=dt, t_final=args.tfinal, record_stride=50, seed=args.seed)
        _, _, gap = simulate_zakai_pair(rho0, Zero(), cfg, model, ops)
        gaps.append(gap)
    tol = 5e-3
    ok = gaps[0] <= tol and gaps[1] < gaps[0]
    print(
        f"zakai max gap = {gaps[0]:.6g} at dt={args.dt:g}, "
        f"{gaps[1]:.6g} at dt={0.5 * args.dt:g} (tolerance {tol}, must shrink)"
    )
    return 0 if ok else 1


def _oracle_generator(args: argparse.Namespace) -> int:
    model = ModelParams(levels=3, omega=0.0, eta=0.3, strength=1.0)
    ops = build_operators(model)
    edge = EdgeTarget(nbar=0, alpha=10.0, beta=5.0, gamma=10.0)
    general = GeneralTarget(nbar=1, alpha=0.3, beta=10.0)
    rng = np.random.Generator(np.random.Philox(key=int(args.seed)))
    worst = 0.0
    failed = 0
    for i in range(args.states):
        # keep the states interior so every closed form is defined
        rho = 0.9 * random_density(3, rng) + 0.1 * np.eye(3) / 3
        cases = [
            (lyapunov_qsr, Zero(), generator_qsr(rho, model)),
            (lambda r: lyapunov_edge(0, r), edge,
             generator_edge(0, rho, edge, model, ops)),
            (lambda r: lyapunov_general(1, r), general,
             generator_general(1, rho, general, model, ops)),
        ]
        for vfun, law, exact in cases:
            mc, se = dynkin_estimate(
                vfun, rho, law, model, ops, n_samples=50_000, seed=args.seed + 17 * i
            )
            err = abs(mc - exact)
            tol = max(0.10 * abs(exact), 3.0 * se)
            worst = max(worst, err / max(abs(exact), 1e-12))
            if err > tol:
                failed += 1
    print(f"generator: {args.states} states x 3 forms, worst rel err = {worst:.4g}, "
          f"failures = {failed}")
    return 0 if failed == 0 else 1


def _oracle_strat(args: argparse.Namespace) -> int:
    """Drift-correction identity via exact central differences.

    The diffusion is quadratic in the state, so a central difference along
    the diffusion direction evaluates its derivative exactly; the corrected
    drift must then match the conversion formula to rounding.
    """
    model = ModelParams(levels=3, omega=0.4, eta=0.3, strength=1.0)
    ops = build_operators(model)
    rng = np.random.Generator(np.random.Philox(key=int(args.seed)))
    eps = 1e-4
    worst = 0.0
    for _ in range(10):
        rho = random_density(3, rng)
        u = float(rng.normal())
        g = diffusion(rho, model, ops)
        dg = (
            diffusion(rho + eps * g, model, ops) - diffusion(rho - eps * g, model, ops)
        ) / (2.0 * eps)
        expected = drift_ito(rho, u, model, ops) - 0.5 * model.eta * dg
        got = drift_stratonovich(rho, u, model, ops)
        worst = max(worst, float(np.max(np.abs(got - expected))))
    tol = 1e-6
    print(f"stratonovich identity max error = {worst:.6g} (tolerance {tol})")
    return 0 if worst <= tol else 1


def cmd_oracle(args: argparse.Namespace) -> int:
    if args.suite == "zakai":
        return _oracle_zakai(args)
    if args.suite == "generator":
        return _oracle_generator(args)
    return _oracle_strat(args)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("run", "audit"):
        _precheck(args, parser)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "audit":
            return cmd_audit(args)
        return cmd_oracle(args)
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
