"""
Flat scenario configuration.

One ``section.key = value`` per line; ``#`` starts a comment.  All
quantities are in canonical units with hbar = 1, so the system's
conjugate variable is the wave number K = P / hbar, not the momentum.

Sections and keys (defaults in brackets)::

    system.sigma_x, system.sigma_k        spreads; a missing one is set
                                          to the Kennard minimum 1/(2 other)
    system.mean_x, system.mean_k          [0]
    probe_x.delta, probe_x.delta_tilde    pointer / conjugate spreads; a
                                          missing one takes the minimum
    probe_x.mean_j, probe_x.mean_phi      [0]
    probe_x.resolution                    readout spread delta' [0]
    probe_k.*                             as probe_x
    cross.kappa, cross.xi                 Cov(Phi_X, J_K), Cov(Phi_K, J_X) [0]
    prep.delta_k, prep.delta_tilde_x, prep.r
                                          correlated Gaussian probe pair;
                                          excludes the spreads and cross block
    coupling.lambda_x, coupling.lambda_k  [1]
    coupling.ordering                     xk | kx | joint [xk]
    readout.family                        gaussian | ideal [gaussian]
    grid.n [128], grid.extent_sigmas [8]
    run.tolerance [5e-3], run.samples [100000], run.seed [0]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

from .errors import ConfigError, InvalidArgumentError, SingularPreparationError
from .gaussian_prep import ProbePairPreparation, to_scenario
from .moments import (
    Couplings,
    CrossCovariances,
    Ordering,
    ProbeMoments,
    Scenario,
    SystemMoments,
    validate_scenario,
)

_FLOAT_KEYS = {
    "system": ("sigma_x", "sigma_k", "mean_x", "mean_k"),
    "probe_x": ("delta", "delta_tilde", "mean_j", "mean_phi", "resolution"),
    "probe_k": ("delta", "delta_tilde", "mean_j", "mean_phi", "resolution"),
    "cross": ("kappa", "xi"),
    "prep": ("delta_k", "delta_tilde_x", "r"),
    "coupling": ("lambda_x", "lambda_k"),
    "grid": ("extent_sigmas",),
    "run": ("tolerance",),
}
_INT_KEYS = {"grid.n", "run.samples", "run.seed"}
_STR_KEYS = {"coupling.ordering", "readout.family"}

KNOWN_KEYS = frozenset(
    [f"{s}.{k}" for s, ks in _FLOAT_KEYS.items() for k in ks] + list(_INT_KEYS) + list(_STR_KEYS))

READOUT_FAMILIES = ("gaussian", "ideal")


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    prep: Optional[ProbePairPreparation] = None
    grid_n: int = 128
    extent_sigmas: float = 8.0
    tolerance: float = 5e-3
    samples: int = 100_000
    seed: int = 0
    readout_family: str = "gaussian"
    values: Dict[str, object] = field(default_factory=dict)


def _convert(key: str, raw: str, line: int):
    if key in _STR_KEYS:
        return raw.strip().lower()
    try:
        if key in _INT_KEYS:
            return int(raw)
        v = float(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as a number", key, line) from None
    if not math.isfinite(v):
        raise ConfigError(f"value {raw!r} is not finite", key, line)
    return v


def parse_text(text: str, overrides: Optional[Mapping[str, str]] = None) -> Dict[str, object]:
    """Raw key -> value map; later lines and then ``overrides`` win."""
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'section.key = value', got {body!r}", line=no)
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown key", key, no)
        if not raw:
            raise ConfigError("missing value", key, no)
        values[key] = _convert(key, raw, no)
        lines[key] = no
    for key, raw in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown key (override)", key)
        values[key] = _convert(key, str(raw), 0)
    values["__lines__"] = lines
    return values


def _pair(values, a: str, b: str, lines) -> Tuple[float, float]:
    va, vb = values.get(a), values.get(b)
    if va is None and vb is None:
        raise ConfigError(f"one of {a!r} or {b!r} is required", a)
    for k, v in ((a, va), (b, vb)):
        if v is not None and not v > 0:
            raise ConfigError(f"must be > 0, got {v}", k, lines.get(k, 0))
    if va is None:
        va = 0.5 / vb
    if vb is None:
        vb = 0.5 / va
    return va, vb


def build_config(values: Dict[str, object]) -> RunConfig:
    lines = values.get("__lines__", {})
    g = values.get

    def probe(tag: str, label: str, spreads=None) -> ProbeMoments:
        d, dt = spreads or _pair(values, f"{tag}.delta", f"{tag}.delta_tilde", lines)
        res = g(f"{tag}.resolution", 0.0)
        if res < 0:
            raise ConfigError(f"must be >= 0, got {res}", f"{tag}.resolution",
                              lines.get(f"{tag}.resolution", 0))
        return ProbeMoments(label, d, dt, g(f"{tag}.mean_j", 0.0), g(f"{tag}.mean_phi", 0.0), res)

    ordering_raw = g("coupling.ordering", "xk")
    try:
        ordering = Ordering.parse(ordering_raw)
    except InvalidArgumentError:
        raise ConfigError(f"must be one of xk, kx, joint (got {ordering_raw!r})",
                          "coupling.ordering", lines.get("coupling.ordering", 0)) from None
    couplings = Couplings(g("coupling.lambda_x", 1.0), g("coupling.lambda_k", 1.0), ordering)
    for k in ("coupling.lambda_x", "coupling.lambda_k"):
        if not g(k, 1.0) > 0:
            raise ConfigError("coupling must be > 0", k, lines.get(k, 0))
    sx, sk = _pair(values, "system.sigma_x", "system.sigma_k", lines)
    system = SystemMoments(sx, sk, g("system.mean_x", 0.0), g("system.mean_k", 0.0))

    prep_keys = [k for k in values if k.startswith("prep.")]
    prep = None
    if prep_keys:
        clash = [k for k in values if k.startswith("cross.")
                 or k in ("probe_x.delta", "probe_x.delta_tilde",
                          "probe_k.delta", "probe_k.delta_tilde")]
        if clash:
            raise ConfigError("prep block excludes probe spreads and cross covariances",
                              clash[0], lines.get(clash[0], 0))
        missing = [k for k in ("prep.delta_k", "prep.delta_tilde_x", "prep.r") if k not in values]
        if missing:
            raise ConfigError("prep block is incomplete", missing[0])
        try:
            prep = ProbePairPreparation(g("prep.delta_k"), g("prep.delta_tilde_x"), g("prep.r"))
        except (InvalidArgumentError, SingularPreparationError) as exc:
            key = "prep.r" if isinstance(exc, SingularPreparationError) else "prep.delta_k"
            raise ConfigError(str(exc), key, lines.get(key, 0)) from None
        base = to_scenario(prep, system, couplings=couplings)
        scenario = Scenario(
            system,
            probe("probe_x", "X", (base.probe_x.delta, base.probe_x.delta_tilde)),
            probe("probe_k", "K", (base.probe_k.delta, base.probe_k.delta_tilde)),
            base.cross, couplings)
    else:
        scenario = Scenario(system, probe("probe_x", "X"), probe("probe_k", "K"),
                            CrossCovariances(g("cross.kappa", 0.0), g("cross.xi", 0.0)), couplings)

    v = validate_scenario(scenario)
    if not v.ok:
        raise ConfigError("scenario violates " + "; ".join(
            f"{name} ({detail})" for name, detail in zip(v.violations, v.details)))

    family = g("readout.family", "gaussian")
    if family not in READOUT_FAMILIES:
        raise ConfigError(f"must be one of {', '.join(READOUT_FAMILIES)}", "readout.family",
                          lines.get("readout.family", 0))
    if family == "ideal" and (scenario.probe_x.resolution or scenario.probe_k.resolution):
        raise ConfigError("ideal readout needs probe resolutions of 0", "readout.family",
                          lines.get("readout.family", 0))

    grid_n = g("grid.n", 128)
    extent = g("grid.extent_sigmas", 8.0)
    tol = g("run.tolerance", 5e-3)
    samples = g("run.samples", 100_000)
    seed = g("run.seed", 0)
    for k, ok in (("grid.n", grid_n >= 16), ("grid.extent_sigmas", extent > 0),
                  ("run.tolerance", tol > 0), ("run.samples", samples >= 2),
                  ("run.seed", seed >= 0)):
        if not ok:
            raise ConfigError("out of range", k, lines.get(k, 0))
    clean = {k: val for k, val in values.items() if not k.startswith("__")}
    return RunConfig(scenario, prep, grid_n, extent, tol, samples, seed, family, clean)


def parse_config(path, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    return build_config(parse_text(text, overrides))


def parse_config_text(text: str, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    return build_config(parse_text(text, overrides))
