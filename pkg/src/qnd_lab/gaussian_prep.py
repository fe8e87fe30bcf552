"""
Correlated pure-Gaussian preparation of the two probes.

The joint probe state is specified in the mixed representation
(J_K, Phi_X), both of dimension 1/length:

    <J_K, Phi_X | psi>  ~  exp[-1/4 v^T C^{-1} v],   v = (J_K, Phi_X),

    C = [[delta_K^2, kappa], [kappa, delta_tilde_X^2]],  kappa = r delta_K delta_tilde_X.

The conjugate pair (Phi_K, J_X) then has covariance C^{-1}/4 up to a sign
on the off-diagonal.  With the transform conventions of
:mod:`qnd_lab.oracle` (Phi position-like, J momentum-like) the vector
(-Phi_K, J_X) is the Fourier partner of (J_K, Phi_X), which gives

    Var(J_X)  = delta_K^2 / (4 det C),
    Var(Phi_K) = delta_tilde_X^2 / (4 det C),
    xi = Cov(Phi_K, J_X) = +kappa / (4 det C).

The sign of xi is checked against the oracle in the test-suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import GridResolutionError, InvalidArgumentError, SingularPreparationError
from .moments import (
    Couplings,
    CrossCovariances,
    ProbeMoments,
    SLACK,
    Scenario,
    SystemMoments,
    validate_scenario,
)

R_MAX = 1.0 - 1e-9


@dataclass(frozen=True)
class ProbePairPreparation:
    delta_k: float
    delta_tilde_x: float
    r: float

    def __post_init__(self):
        if not (self.delta_k > 0 and self.delta_tilde_x > 0):
            raise InvalidArgumentError(
                f"spreads must be > 0, got delta_k={self.delta_k}, delta_tilde_x={self.delta_tilde_x}")
        if not abs(self.r) < R_MAX:
            raise SingularPreparationError(
                f"|r|={abs(self.r)} is within 1e-9 of perfect correlation; pure state is singular")

    @property
    def kappa(self) -> float:
        return self.r * self.delta_k * self.delta_tilde_x

    @property
    def det4(self) -> float:
        """det C = delta_K^2 delta_tilde_X^2 - kappa^2 (the Delta^4 of the preparation)."""
        return (self.delta_k * self.delta_tilde_x) ** 2 * (1.0 - self.r ** 2)

    @property
    def covariance(self) -> np.ndarray:
        return np.array([[self.delta_k ** 2, self.kappa], [self.kappa, self.delta_tilde_x ** 2]])


@dataclass(frozen=True)
class ReducedProbeMoments:
    delta_x2: float
    delta_tilde_k2: float
    xi: float


def reduced_probe_moments(p: ProbePairPreparation) -> ReducedProbeMoments:
    d4 = p.det4
    out = ReducedProbeMoments(
        delta_x2=p.delta_k ** 2 / (4.0 * d4),
        delta_tilde_k2=p.delta_tilde_x ** 2 / (4.0 * d4),
        xi=p.kappa / (4.0 * d4),
    )
    # Kennard for each probe; equality only at r = 0
    assert out.delta_x2 * p.delta_tilde_x ** 2 >= 0.25 * (1 - 1e-12)
    assert out.delta_tilde_k2 * p.delta_k ** 2 >= 0.25 * (1 - 1e-12)
    return out


def to_scenario(p: ProbePairPreparation, system: SystemMoments,
                resolutions: Sequence[float] = (0.0, 0.0),
                couplings: Optional[Couplings] = None) -> Scenario:
    red = reduced_probe_moments(p)
    res_x, res_k = resolutions
    s = Scenario(
        system=system,
        probe_x=ProbeMoments("X", math.sqrt(red.delta_x2), p.delta_tilde_x, resolution=res_x),
        probe_k=ProbeMoments("K", p.delta_k, math.sqrt(red.delta_tilde_k2), resolution=res_k),
        cross=CrossCovariances(kappa=p.kappa, xi=red.xi),
        couplings=couplings or Couplings(),
    )
    v = validate_scenario(s)
    if not v.ok:  # pragma: no cover - guarded by construction
        raise InvalidArgumentError("; ".join(v.details))
    return s


def noise_and_disturbance(p: ProbePairPreparation):
    """(epsilon_X^2, eta_{K|X}^2) for an ideal X readout."""
    eps2 = p.delta_k ** 2 / (4.0 * p.det4)
    eta2 = p.delta_tilde_x ** 2 + 2.0 * p.kappa
    return eps2, eta2


def violation_product(p: ProbePairPreparation) -> float:
    """epsilon_X^2 * eta_{K|X}^2 for an ideal X readout, signed.

    Equals (1 + 2 r delta_K / delta_tilde_X) / (4 (1 - r^2)).
    """
    eps2, eta2 = noise_and_disturbance(p)
    return eps2 * eta2


def classify(product: float) -> str:
    """Status of a signed product; ``SLACK`` absorbs rounding at both boundaries."""
    if product < -SLACK:
        return "reduction"
    if product < 0.25 - SLACK:
        return "violated"
    return "holds"


def violation_scan(t_range, r_range, steps) -> list:
    """Grid over t = delta_tilde_X / delta_K and r.

    Returns rows ``(t, r, epsilon2, eta2, product, classification)`` in
    (t, r) index order; delta_K is fixed to 1.  The product drops below 1/4
    exactly when r (r + 2/t) < 0 and turns negative when r < -t/2.
    """
    (t0, t1), (r0, r1) = t_range, r_range
    nt, nr = (steps, steps) if np.isscalar(steps) else steps
    if nt < 1 or nr < 1 or t0 > t1 or r0 > r1:
        raise InvalidArgumentError(f"empty scan range t={t_range}, r={r_range}, steps={steps}")
    if t0 <= 0:
        raise InvalidArgumentError("t range must be > 0")
    if max(abs(r0), abs(r1)) >= R_MAX:
        raise InvalidArgumentError("r range must lie strictly inside (-1, 1)")
    ts = np.linspace(t0, t1, nt) if nt > 1 else np.array([t0])
    rs = np.linspace(r0, r1, nr) if nr > 1 else np.array([r0])
    rows = []
    for t in ts:
        for r in rs:
            p = ProbePairPreparation(1.0, float(t), float(r))
            eps2, eta2 = noise_and_disturbance(p)
            prod = eps2 * eta2
            rows.append((float(t), float(r), eps2, eta2, prod, classify(prod)))
    return rows


def check_grid_coverage(grid, sigma: float, conj_sigma: float, extent_sigmas: float = 8.0,
                        name: str = "axis"):
    """Raise unless ``grid`` spans ``extent_sigmas`` spreads on each side, in
    its own variable and in the conjugate one."""
    half = grid.length / 2.0
    conj_half = math.pi / grid.spacing
    if half < extent_sigmas * sigma:
        raise GridResolutionError(
            f"{name}: half-width {half:.4g} < {extent_sigmas} x spread {sigma:.4g}; "
            f"widen the grid")
    if conj_half < extent_sigmas * conj_sigma:
        raise GridResolutionError(
            f"{name}: conjugate half-width {conj_half:.4g} < {extent_sigmas} x conjugate spread "
            f"{conj_sigma:.4g}; need spacing <= {math.pi / (extent_sigmas * conj_sigma):.4g} "
            f"(have {grid.spacing:.4g})")


def preparation_wavefunction(p: ProbePairPreparation, grid_jk, grid_phix,
                             extent_sigmas: float = 8.0) -> np.ndarray:
    """Discretized amplitude on the (J_K, Phi_X) grids, shape (n_jk, n_phix).

    Amplitudes carry the square root of the cell size, so ``sum |a|^2 = 1``.
    """
    red = reduced_probe_moments(p)
    check_grid_coverage(grid_jk, p.delta_k, math.sqrt(red.delta_tilde_k2), extent_sigmas, "J_K grid")
    check_grid_coverage(grid_phix, p.delta_tilde_x, math.sqrt(red.delta_x2), extent_sigmas,
                        "Phi_X grid")
    cinv = np.linalg.inv(p.covariance)
    j = grid_jk.points[:, None]
    f = grid_phix.points[None, :]
    q = cinv[0, 0] * j * j + 2.0 * cinv[0, 1] * j * f + cinv[1, 1] * f * f
    amp = np.exp(-0.25 * q).astype(complex)
    amp /= np.sqrt(np.sum(np.abs(amp) ** 2))
    return amp


def anticorrelated_lattice_wavefunction(delta: float, grid) -> np.ndarray:
    """Probe state with J_K = -Phi_X exactly, on a shared lattice.

    Both axes use ``grid``; the amplitude is a Gaussian of spread ``delta``
    in Phi_X placed on the anti-diagonal.  This realizes kappa =
    -delta_tilde_X delta_K with delta_K = delta_tilde_X = delta, which no
    normalizable continuum state can.  The grid must be symmetric about 0
    (``center == 0``) so that -phi is again a lattice point.
    """
    if grid.center != 0.0:
        raise InvalidArgumentError("lattice state needs a grid centred at 0")
    n = grid.n
    pts = grid.points
    if grid.length / 2.0 < 8.0 * delta:
        raise GridResolutionError(f"lattice half-width {grid.length / 2:.4g} < 8 x {delta:.4g}")
    g = np.exp(-pts ** 2 / (4.0 * delta ** 2))
    g = g / np.sqrt(np.sum(g ** 2))
    amp = np.zeros((n, n), dtype=complex)
    idx = np.arange(n)
    # point (j - n/2) d  ->  -(j - n/2) d = ((n - j) mod n - n/2) d
    amp[(n - idx) % n, idx] = g
    return amp


def canonical_preparation(p: ProbePairPreparation, couplings: Optional[Couplings]) -> ProbePairPreparation:
    """Same state with the couplings absorbed (J_K -> J_K / lambda_K,
    Phi_X -> lambda_X Phi_X); r is unchanged."""
    if couplings is None:
        return p
    return ProbePairPreparation(p.delta_k / couplings.lambda_k,
                                p.delta_tilde_x * couplings.lambda_x, p.r)
