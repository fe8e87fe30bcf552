"""
Second-moment engine for sequential and joint nondemolition measurements
of position X and wave number K (hbar = 1, K = P/hbar).

Each probe A in {X, K} carries a pointer J_A (read out) and its conjugate
Phi_A (which kicks the system), with [Phi_A, J_A] = i.  The impulsive
couplings are exp(i Phi_X X) and exp(i Phi_K K), so the pointer J_X moves
by X and the system wave number K moves by Phi_X, and so on.

Everything here is a closed-form polynomial in the moments; no wavefunction
is ever built.  The wave oracle in :mod:`qnd_lab.oracle` checks these
formulas independently.

Ordering convention: ``XthenK`` corresponds to X coupled at t = -tau and K
at t = +tau (tau -> 0+), ``KthenX`` to the reverse, ``Joint`` to tau = 0.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import InvalidArgumentError

#: absolute slack used by every inequality check
SLACK = 1e-12


class Ordering(str, enum.Enum):
    X_THEN_K = "xk"
    K_THEN_X = "kx"
    JOINT = "joint"

    @classmethod
    def parse(cls, value) -> "Ordering":
        if isinstance(value, cls):
            return value
        aliases = {
            "xk": cls.X_THEN_K, "xthenk": cls.X_THEN_K, "x_then_k": cls.X_THEN_K,
            "kx": cls.K_THEN_X, "kthenx": cls.K_THEN_X, "k_then_x": cls.K_THEN_X,
            "joint": cls.JOINT,
        }
        try:
            return aliases[str(value).strip().lower()]
        except KeyError:
            raise InvalidArgumentError(f"unknown ordering {value!r}") from None


@dataclass(frozen=True)
class SystemMoments:
    sigma_x: float
    sigma_k: float
    mean_x: float = 0.0
    mean_k: float = 0.0


@dataclass(frozen=True)
class ProbeMoments:
    """Initial moments of one probe.

    ``delta`` is the spread of the pointer J, ``delta_tilde`` the spread of
    its conjugate Phi, ``resolution`` the classical readout spread delta'.
    """

    label: str
    delta: float
    delta_tilde: float
    mean_j: float = 0.0
    mean_phi: float = 0.0
    resolution: float = 0.0


@dataclass(frozen=True)
class CrossCovariances:
    #: Cov(Phi_X, J_K)
    kappa: float = 0.0
    #: Cov(Phi_K, J_X)
    xi: float = 0.0


@dataclass(frozen=True)
class Couplings:
    lambda_x: float = 1.0
    lambda_k: float = 1.0
    ordering: Ordering = Ordering.X_THEN_K

    def __post_init__(self):
        object.__setattr__(self, "ordering", Ordering.parse(self.ordering))


@dataclass(frozen=True)
class Scenario:
    system: SystemMoments
    probe_x: ProbeMoments
    probe_k: ProbeMoments
    cross: CrossCovariances = field(default_factory=CrossCovariances)
    couplings: Couplings = field(default_factory=Couplings)
    canonical: bool = False

    @property
    def ordering(self) -> Ordering:
        return self.couplings.ordering

    def with_ordering(self, ordering) -> "Scenario":
        return replace(self, couplings=replace(self.couplings, ordering=Ordering.parse(ordering)))


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple = ()
    details: tuple = ()

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class VarianceReport:
    """Readout variances.

    For sequential orderings ``delta2_first`` is the variance of the first
    readout, ``delta2_second_given_first`` that of the second readout with
    the first measurement on, ``delta2_second_alone`` with it switched off.
    For the joint ordering the fields hold Delta_X^2, Delta_K^2 and the K
    variance with the X coupling switched off.
    """

    ordering: Ordering
    delta2_first: float
    delta2_second_given_first: float
    delta2_second_alone: float

    @property
    def delta2_x(self) -> float:
        if self.ordering is Ordering.K_THEN_X:
            return self.delta2_second_given_first
        return self.delta2_first

    @property
    def delta2_k(self) -> float:
        if self.ordering is Ordering.K_THEN_X:
            return self.delta2_first
        return self.delta2_second_given_first


@dataclass(frozen=True)
class NoiseDisturbanceReport:
    first: str
    second: str
    epsilon2: float
    eta2_signed: float
    d_sys_error: float
    d_sys_disturbance: float

    @property
    def total_error2(self) -> float:
        return self.d_sys_error ** 2 + self.epsilon2

    @property
    def total_disturbance2(self) -> float:
        return self.eta2_signed + self.d_sys_disturbance ** 2

    @property
    def reduction(self) -> bool:
        """True when the 'disturbance' actually narrows the second readout."""
        return self.eta2_signed < 0.0

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.epsilon2)

    @property
    def eta(self) -> Optional[float]:
        return None if self.reduction else math.sqrt(self.eta2_signed)


@dataclass(frozen=True)
class RelationCheck:
    name: str
    lhs: Optional[float]
    rhs: float
    holds: Optional[bool]
    note: str = ""

    @property
    def status(self) -> str:
        if self.holds is None:
            return self.note or "skipped"
        return "holds" if self.holds else "violated"


@dataclass(frozen=True)
class RelationReport:
    checks: tuple

    def __getitem__(self, name: str) -> RelationCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self):
        return [c.name for c in self.checks]


# --------------------------------------------------------------------------
# validation and scaling


def _ge(lhs: float, rhs: float) -> bool:
    return lhs >= rhs - SLACK * max(1.0, abs(rhs))


def validate_scenario(s: Scenario) -> ValidationResult:
    violations = []
    details = []

    def fail(name, msg):
        violations.append(name)
        details.append(msg)

    sy, px, pk, cr = s.system, s.probe_x, s.probe_k, s.cross
    if not (sy.sigma_x > 0 and sy.sigma_k > 0):
        fail("positivity_system", f"sigma_x={sy.sigma_x}, sigma_k={sy.sigma_k} must be > 0")
    for p, tag in ((px, "probe_x"), (pk, "probe_k")):
        if not (p.delta > 0 and p.delta_tilde > 0):
            fail(f"positivity_{tag}", f"{tag}: delta={p.delta}, delta_tilde={p.delta_tilde} must be > 0")
        if not p.resolution >= 0:
            fail(f"resolution_{tag}", f"{tag}: resolution={p.resolution} must be >= 0")
    c = s.couplings
    if not (c.lambda_x > 0 and c.lambda_k > 0):
        fail("positivity_coupling", f"lambda_x={c.lambda_x}, lambda_k={c.lambda_k} must be > 0")

    if not _ge(sy.sigma_x * sy.sigma_k, 0.5):
        fail("kennard_system", f"sigma_x*sigma_k={sy.sigma_x * sy.sigma_k:.6g} < 1/2")
    for p, tag in ((px, "probe_x"), (pk, "probe_k")):
        if not _ge(p.delta * p.delta_tilde, 0.5):
            fail(f"kennard_{tag}", f"{tag}: delta*delta_tilde={p.delta * p.delta_tilde:.6g} < 1/2")
    if not _ge(px.delta_tilde * pk.delta, abs(cr.kappa)):
        fail("cauchy_schwarz_kappa",
             f"|kappa|={abs(cr.kappa):.6g} > delta_tilde_x*delta_k={px.delta_tilde * pk.delta:.6g}")
    if not _ge(pk.delta_tilde * px.delta, abs(cr.xi)):
        fail("cauchy_schwarz_xi",
             f"|xi|={abs(cr.xi):.6g} > delta_tilde_k*delta_x={pk.delta_tilde * px.delta:.6g}")
    return ValidationResult(not violations, tuple(violations), tuple(details))


def canonicalize(s: Scenario) -> Scenario:
    """Absorb the couplings: Phi_A -> lambda_A Phi_A, J_A -> J_A / lambda_A."""
    if s.canonical:
        return s
    lx, lk = s.couplings.lambda_x, s.couplings.lambda_k
    if not (lx > 0 and lk > 0):
        raise InvalidArgumentError(f"couplings must be positive, got lambda_x={lx}, lambda_k={lk}")

    def scale(p: ProbeMoments, lam: float) -> ProbeMoments:
        return replace(
            p,
            delta=p.delta / lam,
            delta_tilde=p.delta_tilde * lam,
            mean_j=p.mean_j / lam,
            mean_phi=p.mean_phi * lam,
            resolution=p.resolution / lam,
        )

    return replace(
        s,
        probe_x=scale(s.probe_x, lx),
        probe_k=scale(s.probe_k, lk),
        # kappa = Cov(Phi_X, J_K), xi = Cov(Phi_K, J_X)
        cross=CrossCovariances(kappa=s.cross.kappa * lx / lk, xi=s.cross.xi * lk / lx),
        couplings=Couplings(1.0, 1.0, s.couplings.ordering),
        canonical=True,
    )


def mirror(s: Scenario) -> Scenario:
    """Exchange the roles of X and K.

    The canonical map X' = K, K' = -X keeps [X', K'] = i.  The couplings
    are preserved with Phi'_X = Phi_K, J'_X = J_K, Phi'_K = -Phi_X,
    J'_K = -J_X, so kappa -> -xi and xi -> -kappa.  Orderings XthenK and
    KthenX are exchanged.
    """
    sy = s.system
    swap = {Ordering.X_THEN_K: Ordering.K_THEN_X, Ordering.K_THEN_X: Ordering.X_THEN_K,
            Ordering.JOINT: Ordering.JOINT}
    px = s.probe_x
    return replace(
        s,
        system=SystemMoments(sy.sigma_k, sy.sigma_x, sy.mean_k, -sy.mean_x),
        probe_x=replace(s.probe_k, label="X"),
        probe_k=replace(px, label="K", mean_j=-px.mean_j, mean_phi=-px.mean_phi),
        cross=CrossCovariances(kappa=-s.cross.xi, xi=-s.cross.kappa),
        couplings=Couplings(s.couplings.lambda_k, s.couplings.lambda_x, swap[s.ordering]),
    )


def _require_canonical(s: Scenario):
    if not s.canonical:
        raise InvalidArgumentError("scenario must be canonicalized first (see canonicalize)")


# --------------------------------------------------------------------------
# variances


def sequential_variances(s: Scenario) -> VarianceReport:
    _require_canonical(s)
    sy, px, pk, cr = s.system, s.probe_x, s.probe_k, s.cross
    if s.ordering is Ordering.X_THEN_K:
        first = sy.sigma_x ** 2 + px.delta ** 2 + px.resolution ** 2
        alone = sy.sigma_k ** 2 + pk.delta ** 2 + pk.resolution ** 2
        given = alone + px.delta_tilde ** 2 + 2.0 * cr.kappa
    elif s.ordering is Ordering.K_THEN_X:
        # J_X picks up X - Phi_K, hence the minus sign on xi
        first = sy.sigma_k ** 2 + pk.delta ** 2 + pk.resolution ** 2
        alone = sy.sigma_x ** 2 + px.delta ** 2 + px.resolution ** 2
        given = alone + pk.delta_tilde ** 2 - 2.0 * cr.xi
    else:
        raise InvalidArgumentError("joint ordering: use joint_variances")
    return VarianceReport(s.ordering, first, given, alone)


def joint_variances(s: Scenario) -> VarianceReport:
    _require_canonical(s)
    if s.ordering is not Ordering.JOINT:
        raise InvalidArgumentError("sequential ordering: use sequential_variances")
    return _joint(s)


def _joint(s: Scenario) -> VarianceReport:
    sy, px, pk, cr = s.system, s.probe_x, s.probe_k, s.cross
    dx2 = sy.sigma_x ** 2 + px.delta ** 2 + px.resolution ** 2 + pk.delta_tilde ** 2 / 4 - cr.xi
    k_alone = sy.sigma_k ** 2 + pk.delta ** 2 + pk.resolution ** 2
    dk2 = k_alone + px.delta_tilde ** 2 / 4 + cr.kappa
    return VarianceReport(Ordering.JOINT, dx2, dk2, k_alone)


def variances(s: Scenario) -> VarianceReport:
    """Dispatch on the ordering."""
    if s.ordering is Ordering.JOINT:
        return joint_variances(s)
    return sequential_variances(s)


# --------------------------------------------------------------------------
# noise and disturbance


def noise_disturbance(s: Scenario, first: Optional[str] = None) -> NoiseDisturbanceReport:
    """Statistical noise, signed statistical disturbance and systematic shifts.

    ``first`` selects which measured variable plays the role of the noisy
    one.  It is fixed by the ordering for sequential runs; in a joint run it
    defaults to ``"X"``.
    """
    _require_canonical(s)
    sy, px, pk, cr = s.system, s.probe_x, s.probe_k, s.cross
    o = s.ordering
    if o is Ordering.X_THEN_K:
        if first not in (None, "X"):
            raise InvalidArgumentError("XthenK ordering measures X first")
        return NoiseDisturbanceReport(
            "X", "K",
            epsilon2=px.delta ** 2 + px.resolution ** 2,
            eta2_signed=px.delta_tilde ** 2 + 2.0 * cr.kappa,
            d_sys_error=px.mean_j,
            d_sys_disturbance=px.mean_phi,
        )
    if o is Ordering.K_THEN_X:
        if first not in (None, "K"):
            raise InvalidArgumentError("KthenX ordering measures K first")
        return NoiseDisturbanceReport(
            "K", "X",
            epsilon2=pk.delta ** 2 + pk.resolution ** 2,
            eta2_signed=pk.delta_tilde ** 2 - 2.0 * cr.xi,
            d_sys_error=pk.mean_j,
            d_sys_disturbance=-pk.mean_phi,
        )
    v = _joint(s)
    if first in (None, "X"):
        return NoiseDisturbanceReport(
            "X", "K",
            epsilon2=v.delta2_first - sy.sigma_x ** 2,
            eta2_signed=px.delta_tilde ** 2 / 4 + cr.kappa,
            d_sys_error=px.mean_j - pk.mean_phi / 2,
            d_sys_disturbance=px.mean_phi / 2,
        )
    if first == "K":
        return NoiseDisturbanceReport(
            "K", "X",
            epsilon2=v.delta2_second_given_first - sy.sigma_k ** 2,
            eta2_signed=pk.delta_tilde ** 2 / 4 - cr.xi,
            d_sys_error=pk.mean_j + px.mean_phi / 2,
            d_sys_disturbance=-pk.mean_phi / 2,
        )
    raise InvalidArgumentError(f"first must be 'X' or 'K', got {first!r}")


def ozawa_disturbance2(s: Scenario, first: str = "X") -> float:
    """Ozawa's state-independent disturbance of the second variable.

    For the impulsive nondemolition coupling this is <Phi^2> of the first
    probe; probe correlations do not enter it.
    """
    _require_canonical(s)
    p = s.probe_x if first == "X" else s.probe_k
    return p.delta_tilde ** 2 + p.mean_phi ** 2


def u_kennard_product(s: Scenario) -> float:
    """(delta_X^2 + dt_K^2/4 - xi)(delta_K^2 + dt_X^2/4 + kappa), bounded below by 1/4."""
    px, pk, cr = s.probe_x, s.probe_k, s.cross
    return ((px.delta ** 2 + pk.delta_tilde ** 2 / 4 - cr.xi)
            * (pk.delta ** 2 + px.delta_tilde ** 2 / 4 + cr.kappa))


def check_relations(s: Scenario) -> RelationReport:
    _require_canonical(s)
    sy = s.system
    # (a)-(c) are sequential statements; a joint run is judged by the XthenK
    # figures of the same probes
    nd = noise_disturbance(s.with_ordering(Ordering.X_THEN_K) if s.ordering is Ordering.JOINT else s)
    checks = []

    eps = nd.epsilon
    sigma_first = sy.sigma_x if nd.first == "X" else sy.sigma_k
    sigma_second = sy.sigma_k if nd.first == "X" else sy.sigma_x

    if nd.reduction:
        checks.append(RelationCheck("heisenberg_product", None, 0.5, None, "reduction"))
        checks.append(RelationCheck("ozawa_operational", None, 0.5, None, "reduction"))
    else:
        eta = nd.eta
        prod = eps * eta
        checks.append(RelationCheck("heisenberg_product", prod, 0.5, _ge(prod, 0.5)))
        lhs = eps * eta + eps * sigma_second + sigma_first * eta
        checks.append(RelationCheck("ozawa_operational", lhs, 0.5, _ge(lhs, 0.5)))

    eta_oz = math.sqrt(ozawa_disturbance2(s, nd.first))
    lhs = eps * eta_oz + eps * sigma_second + sigma_first * eta_oz
    checks.append(RelationCheck("ozawa_definition", lhs, 0.5, _ge(lhs, 0.5)))

    u = u_kennard_product(s)
    checks.append(RelationCheck("u_kennard", u, 0.25, _ge(u, 0.25)))

    jv = _joint(s)
    e2x = jv.delta2_first - sy.sigma_x ** 2
    e2k = jv.delta2_second_given_first - sy.sigma_k ** 2
    checks.append(RelationCheck("joint_noise", e2x * e2k, 0.25, _ge(e2x * e2k, 0.25)))

    ak = math.sqrt(jv.delta2_first * jv.delta2_second_given_first)
    checks.append(RelationCheck("arthurs_kelly", ak, 1.0, _ge(ak, 1.0)))
    return RelationReport(tuple(checks))


def cancellation_coupling(delta_k_physical: float, delta_tilde_x_physical: float,
                          lambda_x: float) -> float:
    """Coupling lambda_K that equalizes delta_K / lambda_K and lambda_X * delta_tilde_X."""
    for name, v in (("delta_k_physical", delta_k_physical),
                    ("delta_tilde_x_physical", delta_tilde_x_physical),
                    ("lambda_x", lambda_x)):
        if not v > 0:
            raise InvalidArgumentError(f"{name} must be > 0, got {v}")
    return delta_k_physical / (lambda_x * delta_tilde_x_physical)


#: variable order used by :func:`scenario_from_covariance`
PROBE_VARIABLES = ("Phi_X", "J_X", "Phi_K", "J_K")


def scenario_from_covariance(cov, system: SystemMoments, resolutions=(0.0, 0.0),
                             couplings: Optional[Couplings] = None) -> Scenario:
    """Scenario from a 4x4 probe covariance over (Phi_X, J_X, Phi_K, J_K).

    Only the entries the moment formulas use are read; the rest of the
    matrix is free.  kappa = cov[Phi_X, J_K], xi = cov[Phi_K, J_X].
    """
    rows = [list(map(float, r)) for r in cov]
    if len(rows) != 4 or any(len(r) != 4 for r in rows):
        raise InvalidArgumentError("probe covariance must be 4x4")
    c = lambda i, j: rows[i][j]  # noqa: E731
    for i in range(4):
        if not c(i, i) > 0:
            raise InvalidArgumentError(f"variance of {PROBE_VARIABLES[i]} must be > 0")
    return Scenario(
        system=system,
        probe_x=ProbeMoments("X", math.sqrt(c(1, 1)), math.sqrt(c(0, 0)), resolution=resolutions[0]),
        probe_k=ProbeMoments("K", math.sqrt(c(3, 3)), math.sqrt(c(2, 2)), resolution=resolutions[1]),
        cross=CrossCovariances(kappa=0.5 * (c(0, 3) + c(3, 0)), xi=0.5 * (c(2, 1) + c(1, 2))),
        couplings=couplings or Couplings(),
    )
