"""
``qnd-lab`` command line.

Every command writes CSV whose first line is ``# qnd-lab,v1,<command>``.
Exit codes: 0 success, 1 invalid input or config, 2 numerical or
tolerance failure.
"""
from __future__ import annotations

import argparse
import io
import math
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .errors import (
    CalibrationError,
    ConfigError,
    GridResolutionError,
    InvalidArgumentError,
    QndError,
)
from .gaussian_prep import canonical_preparation, violation_scan
from .moments import Ordering, canonicalize, check_relations, noise_disturbance, variances

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class NumericalFailure(QndError):
    """Raised by a command to request exit code 2 after writing its report."""


def fmt(x) -> str:
    """Five significant digits, shortest round-trip form; blank for None."""
    if x is None:
        return ""
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    return repr(float(f"{x:.5g}"))


class Report:
    def __init__(self, command: str, columns: Sequence[str]):
        self.buf = io.StringIO()
        self.buf.write(f"# qnd-lab,v1,{command}\n")
        self.buf.write(",".join(columns) + "\n")

    def row(self, *cells):
        self.buf.write(",".join(c if isinstance(c, str) else fmt(c) for c in cells) + "\n")

    def text(self) -> str:
        return self.buf.getvalue()


# --------------------------------------------------------------------------
# commands


def _canonical(cfg: RunConfig, ordering: Optional[str]):
    s = cfg.scenario
    if ordering:
        s = s.with_ordering(ordering)
    prep = canonical_preparation(cfg.prep, s.couplings) if cfg.prep else None
    return canonicalize(s), prep


def cmd_predict(cfg: RunConfig, ordering: Optional[str] = None) -> str:
    s, _ = _canonical(cfg, ordering)
    v = variances(s)
    nd = noise_disturbance(s)
    rep = Report("predict", ("quantity", "value", "status"))
    rep.row("ordering", s.ordering.value, "")
    rep.row("delta2_x", v.delta2_x, "")
    rep.row("delta2_k", v.delta2_k, "")
    second_alone = "delta2_k_alone" if nd.second == "K" else "delta2_x_alone"
    rep.row(second_alone, v.delta2_second_alone, "")
    rep.row("epsilon2_" + nd.first.lower(), nd.epsilon2, "")
    rep.row("epsilon_" + nd.first.lower(), nd.epsilon, "")
    rep.row(f"eta2_{nd.second.lower()}_given_{nd.first.lower()}", nd.eta2_signed,
            "reduction" if nd.reduction else "")
    rep.row("d_sys_error", nd.d_sys_error, "")
    rep.row("d_sys_disturbance", nd.d_sys_disturbance, "")
    values = [v.delta2_x, v.delta2_k, nd.epsilon2, nd.eta2_signed]
    for c in check_relations(s).checks:
        rep.row(c.name, c.lhs, c.status)
        if c.lhs is not None:
            values.append(c.lhs)
    if not all(math.isfinite(x) for x in values):
        raise NumericalFailure("non-finite prediction")
    return rep.text()


def _oracle_rows(s, prep, cfg: RunConfig):
    from .oracle import run_oracle

    res = run_oracle(s, prep, s.ordering, cfg.grid_n, cfg.extent_sigmas)
    v = variances(s)
    sy, px, pk = s.system, s.probe_x, s.probe_k
    x_alone = sy.sigma_x ** 2 + px.delta ** 2 + px.resolution ** 2
    k_alone = sy.sigma_k ** 2 + pk.delta ** 2 + pk.resolution ** 2
    return [
        ("delta2_x", v.delta2_x, res.variances["x"]),
        ("delta2_k", v.delta2_k, res.variances["k"]),
        ("delta2_x_alone", x_alone, res.variances["x_alone"]),
        ("delta2_k_alone", k_alone, res.variances["k_alone"]),
    ]


def _identity_rows(s, prep, cfg: RunConfig):
    """Couplings off: pointers and system keep their initial spreads."""
    from .oracle import build_state, readout_distribution, ReadoutModel, measure_moments, \
        system_distribution

    st = build_state(s, prep, s.ordering, cfg.grid_n, cfg.extent_sigmas)
    sy, px, pk = s.system, s.probe_x, s.probe_k
    out = []
    for name, expect, table in (
            ("var_x", sy.sigma_x ** 2, system_distribution(st, "X")),
            ("var_k", sy.sigma_k ** 2, system_distribution(st, "K")),
            ("var_j_x", px.delta ** 2 + px.resolution ** 2,
             readout_distribution(st, "X", ReadoutModel.for_resolution(px.resolution))),
            ("var_j_k", pk.delta ** 2 + pk.resolution ** 2,
             readout_distribution(st, "K", ReadoutModel.for_resolution(pk.resolution)))):
        out.append((name, expect, measure_moments(table).variance))
    return out


def cmd_oracle(cfg: RunConfig, ordering: Optional[str] = None, no_interaction: bool = False) -> str:
    s, prep = _canonical(cfg, ordering)
    rows = _identity_rows(s, prep, cfg) if no_interaction else _oracle_rows(s, prep, cfg)
    tol = min(cfg.tolerance, 1e-6) if no_interaction else cfg.tolerance
    rep = Report("oracle", ("quantity", "analytic", "oracle", "rel_deviation", "status"))
    worst = 0.0
    for name, a, o in rows:
        dev = abs(o - a) / abs(a) if a != 0 else abs(o)
        worst = max(worst, dev)
        rep.row(name, a, o, dev, "ok" if dev <= tol else "fail")
    rep.row("max_rel_deviation", "", "", worst, "ok" if worst <= tol else "fail")
    if worst > tol:
        raise NumericalFailure(f"deviation {worst:.3g} exceeds tolerance {tol:g}", rep.text())
    return rep.text()


def cmd_sample(cfg: RunConfig, samples: Optional[int] = None, seed: Optional[int] = None,
               batch_out: Optional[str] = None) -> str:
    from .sampler import run_protocol

    s, prep = _canonical(cfg, None)
    if s.ordering is not Ordering.X_THEN_K:
        raise InvalidArgumentError("sample supports coupling.ordering = xk only")
    n = cfg.samples if samples is None else samples
    seed = cfg.seed if seed is None else seed
    if n < 2 or seed < 0:
        raise InvalidArgumentError("need samples >= 2 and seed >= 0")
    run = run_protocol(s, prep, n, seed, cfg.grid_n, cfg.extent_sigmas)
    nd = noise_disturbance(s)
    v = variances(s)
    rep = Report("sample", ("quantity", "estimate", "stderr", "target"))
    rep.row("samples", str(n), "", "")
    rep.row("seed", str(seed), "", "")
    est = [
        ("sigma2_x", run.noise.sigma2_hat, s.system.sigma_x ** 2),
        ("epsilon2_x", run.noise.epsilon2_hat, nd.epsilon2),
        ("d_sys_error", run.noise.d_hat, nd.d_sys_error),
        ("eta2_k_given_x", run.disturbance.eta2_hat, nd.eta2_signed),
        ("d_sys_disturbance", run.disturbance.d_dist_hat, nd.d_sys_disturbance),
        ("epsilon2_eta2", run.product, nd.epsilon2 * nd.eta2_signed),
    ]
    for name, e, target in est:
        rep.row(name, e.value, e.stderr, target)
    prod = run.product
    if prod.value > 0:
        root = math.sqrt(prod.value)
        rep.row("epsilon_eta", root, prod.stderr / (2 * root),
                math.sqrt(max(nd.epsilon2 * nd.eta2_signed, 0.0)))
    rep.row("delta2_k_given_x_target", "", "", v.delta2_k)
    if batch_out:
        with open(batch_out, "w", encoding="utf-8", newline="") as fh:
            fh.write(run.batches["pairs"].to_csv())
    return rep.text()


def _range(text: str, name: str):
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise InvalidArgumentError(f"{name} must look like LO:HI, got {text!r}") from None
    return a, b


def cmd_scan(t_range: str, r_range: str, steps: str) -> str:
    try:
        parts = [int(x) for x in steps.split(",")]
    except ValueError:
        raise InvalidArgumentError(f"steps must be N or NT,NR, got {steps!r}") from None
    st = parts[0] if len(parts) == 1 else tuple(parts[:2])
    rows = violation_scan(_range(t_range, "--t-range"), _range(r_range, "--r-range"), st)
    rep = Report("scan", ("t", "r", "epsilon2", "eta2", "product", "classification"))
    for t, r, e2, h2, p, cls in rows:
        rep.row(t, r, e2, h2, p, cls)
    return rep.text()


def cmd_check_instruments(dim: int = 2, seed: int = 0, n_states: int = 100) -> str:
    from . import instruments as ins

    if not 2 <= dim <= ins.MAX_DIM:
        raise InvalidArgumentError(f"dim must lie in [2, {ins.MAX_DIM}]")
    rng = np.random.default_rng(seed)
    u = ins.controlled_shift(dim, dim)
    readout = ins.ReadoutFamily.projective(dim)
    plus = ins.FiniteState.pure(np.ones(dim))
    product = ins.FiniteState(np.kron(ins.random_state(dim, rng).matrix,
                                      ins.random_state(dim, rng).matrix))
    rep = Report("check-instruments", ("case", "max_discrepancy", "swapped_correlation", "status"))
    ok = True
    for name, det, expect_zero in (("product", product, True),
                                   ("maximally_entangled", ins.maximally_entangled(dim), False)):
        f = ins.sequential_factorization_check(det, u, u, (readout, readout), plus, (dim, dim))
        sc = ins.swapped_correlation(det, u, plus, (dim, dim))
        good = (f.max_discrepancy < 1e-12 and sc < 1e-12) if expect_zero else \
            (f.max_discrepancy > 0.01 and sc > 0.1)
        ok &= good
        rep.row(name, f.max_discrepancy, sc, "ok" if good else "fail")
    inst = ins.build_instrument(readout, u, ins.random_state(dim, rng), dim)
    ax = ins.check_axioms(inst, [ins.random_state(dim, rng) for _ in range(n_states)])
    ok &= ax.ok
    rep.row(f"axioms_{n_states}_states", ax.max_trace_error, "", "ok" if ax.ok else "fail")
    if not ok:
        raise NumericalFailure("instrument checks failed", rep.text())
    return rep.text()


# --------------------------------------------------------------------------
# argument handling


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in (("grid_n", "grid.n"), ("extent_sigmas", "grid.extent_sigmas"),
                      ("tolerance", "run.tolerance")):
        val = getattr(args, flag, None)
        if val is not None:
            out[key] = str(val)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnd-lab", description=(
        "Noise and disturbance in sequential and joint nondemolition measurements of "
        "position X and wave number K = P/hbar (hbar = 1)."))
    p.add_argument("--version", action="version", version=f"qnd-lab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, metavar="PATH")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                            help="override a config key (repeatable)")
        sp.add_argument("--format", choices=("csv",), default="csv")
        sp.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")

    sp = sub.add_parser("predict", help="closed-form variances and relation checks")
    common(sp)
    sp.add_argument("--ordering", choices=("xk", "kx", "joint"))

    sp = sub.add_parser("oracle", help="compare closed forms with the wavefunction oracle")
    common(sp)
    sp.add_argument("--ordering", choices=("xk", "kx", "joint"))
    sp.add_argument("--grid-n", type=int)
    sp.add_argument("--extent-sigmas", type=float)
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--no-interaction", action="store_true",
                    help="switch both couplings off and check the initial spreads")

    sp = sub.add_parser("sample", help="Monte Carlo calibration of noise and disturbance")
    common(sp)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--grid-n", type=int)
    sp.add_argument("--batch-out", metavar="PATH", help="also write the (mu_x, mu_k) pairs")

    sp = sub.add_parser("scan", help="noise-disturbance product over (t, r)")
    common(sp, config=False)
    sp.add_argument("--t-range", default="0.25:4", metavar="LO:HI")
    sp.add_argument("--r-range", default="-0.95:0.95", metavar="LO:HI")
    sp.add_argument("--steps", default="21", metavar="N[,NR]")

    sp = sub.add_parser("check-instruments", help="factorization of two-probe instruments")
    common(sp, config=False)
    sp.add_argument("--dim", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    return p


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        if args.command == "scan":
            text = cmd_scan(args.t_range, args.r_range, args.steps)
        elif args.command == "check-instruments":
            text = cmd_check_instruments(args.dim, args.seed)
        else:
            cfg = parse_config(args.config, _overrides(args))
            if args.command == "predict":
                text = cmd_predict(cfg, args.ordering)
            elif args.command == "oracle":
                text = cmd_oracle(cfg, args.ordering, args.no_interaction)
            else:
                text = cmd_sample(cfg, args.samples, args.seed, args.batch_out)
    except NumericalFailure as exc:
        if len(exc.args) > 1:
            _emit(exc.args[1], args.out)
        print(f"qnd-lab: {exc.args[0]}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GridResolutionError, CalibrationError, FloatingPointError) as exc:
        print(f"qnd-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (QndError, ValueError) as exc:
        print(f"qnd-lab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"qnd-lab: {exc}", file=sys.stderr)
        return EXIT_INPUT
    _emit(text, args.out)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
