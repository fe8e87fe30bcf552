"""
Grid-wavefunction oracle for system (x) probe X (x) probe K.

The state is a complex array of shape (n_sys, n_px, n_pk).  Every axis has
a position-like variable q and its conjugate p with [q, p] = i:

    system   q = X      p = K
    probe X  q = Phi_X  p = J_X
    probe K  q = Phi_K  p = J_K

Amplitudes are stored with the square root of the cell volume folded in,
so the discrete squared norm is 1.  Grids are centred,
``q_j = c + (j - n/2) dq``, and the conjugate grid has spacing
``dp = 2 pi / (n dq)``.  The transform q -> p is

    a_p[m] = n^{-1/2} sum_j exp(-i p_m q_j) a_q[j],

a unitary matrix, evaluated with an FFT plus two diagonal phases.

Interactions are impulsive phase multiplications: exp(i Phi_X X) with the
system in X and probe X in Phi_X, exp(i Phi_K K) with the system in K and
probe K in Phi_K.  The joint unitary exp[i(Phi_X X + Phi_K K)] is applied
as exp(i Phi_X X) exp(i Phi_K K) exp(i Phi_X Phi_K / 2), exact because the
commutator of the two exponents is central.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.fft as sfft

from .errors import GridResolutionError, InvalidArgumentError
from .moments import Ordering, Scenario

POSITION = "position"
CONJUGATE = "conjugate"

SYSTEM, PROBE_X, PROBE_K = 0, 1, 2
AXIS_NAMES = ("system", "probe_x", "probe_k")
AXIS_VARS = (("X", "K"), ("Phi_X", "J_X"), ("Phi_K", "J_K"))

NORM_TOL = 1e-10


@dataclass(frozen=True)
class Grid1D:
    n: int
    length: float
    center: float = 0.0

    def __post_init__(self):
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise InvalidArgumentError(f"grid size must be a power of two >= 16, got {self.n}")
        if not self.length > 0:
            raise InvalidArgumentError(f"grid length must be > 0, got {self.length}")

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def points(self) -> np.ndarray:
        return self.center + (np.arange(self.n) - self.n // 2) * self.spacing

    def conjugate(self, center: float = 0.0) -> "Grid1D":
        return Grid1D(self.n, 2.0 * math.pi / self.spacing, center)


@dataclass(frozen=True)
class Axis:
    """Position-like grid ``q`` and its conjugate grid ``p`` for one factor."""

    q: Grid1D
    p: Grid1D

    def __post_init__(self):
        if self.q.n != self.p.n or not math.isclose(
                self.q.spacing * self.p.spacing * self.q.n, 2 * math.pi, rel_tol=1e-12):
            raise InvalidArgumentError("q and p grids are not conjugate")

    @classmethod
    def from_q(cls, q: Grid1D, p_center: float = 0.0) -> "Axis":
        return cls(q, q.conjugate(p_center))

    @classmethod
    def from_p(cls, p: Grid1D, q_center: float = 0.0) -> "Axis":
        return cls(p.conjugate(q_center), p)

    def grid(self, rep: str) -> Grid1D:
        return self.q if rep == POSITION else self.p


@dataclass
class WaveState:
    amplitudes: np.ndarray
    axes: Tuple[Axis, Axis, Axis]
    reps: list = field(default_factory=lambda: [POSITION, POSITION, POSITION])

    def __post_init__(self):
        shape = tuple(a.q.n for a in self.axes)
        if self.amplitudes.shape != shape:
            raise InvalidArgumentError(
                f"amplitude shape {self.amplitudes.shape} does not match grids {shape}")

    def copy(self) -> "WaveState":
        return WaveState(self.amplitudes.copy(), self.axes, list(self.reps))

    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def values(self, axis: int) -> np.ndarray:
        return self.axes[axis].grid(self.reps[axis]).points


# --------------------------------------------------------------------------
# single-axis amplitudes


def gaussian_amplitude(grid: Grid1D, sigma: float, conj_sigma: float,
                       mean: float = 0.0, conj_mean: float = 0.0) -> np.ndarray:
    """Pure Gaussian on a position-like grid with given spreads and means.

    ``conj_sigma`` must satisfy sigma * conj_sigma >= 1/2; the excess is
    produced by a quadratic phase (chirp).
    """
    if sigma * conj_sigma < 0.5 * (1 - 1e-12):
        raise InvalidArgumentError(f"spreads {sigma}, {conj_sigma} violate Kennard")
    chirp = math.sqrt(max(conj_sigma ** 2 - 1.0 / (4 * sigma ** 2), 0.0)) / (2 * sigma)
    q = grid.points - mean
    a = np.exp(-q * q * (1.0 / (4 * sigma ** 2) - 1j * chirp) + 1j * conj_mean * grid.points)
    return a / np.sqrt(np.sum(np.abs(a) ** 2))


def system_wavefunction(s: Scenario, grid: Grid1D) -> np.ndarray:
    sy = s.system
    return gaussian_amplitude(grid, sy.sigma_x, sy.sigma_k, sy.mean_x, sy.mean_k)


def probe_wavefunction(probe, grid: Grid1D) -> np.ndarray:
    """Uncorrelated probe in its Phi representation."""
    return gaussian_amplitude(grid, probe.delta_tilde, probe.delta, probe.mean_phi, probe.mean_j)


# --------------------------------------------------------------------------
# representation changes


def _shape_for(axis: int, v: np.ndarray) -> np.ndarray:
    shape = [1, 1, 1]
    shape[axis] = v.size
    return v.reshape(shape)


def transform_axis(state: WaveState, axis: int, to: str) -> WaveState:
    """Move one axis to the requested representation, in place."""
    if to not in (POSITION, CONJUGATE):
        raise InvalidArgumentError(f"unknown representation {to!r}")
    cur = state.reps[axis]
    if cur == to:
        return state
    ax = state.axes[axis]
    q, p = ax.q, ax.p
    q0, p0 = q.points[0], p.points[0]
    j = np.arange(q.n)
    pm = p.points
    a = state.amplitudes
    if to == CONJUGATE:
        a = a * _shape_for(axis, np.exp(-1j * p0 * j * q.spacing))
        a = sfft.fft(a, axis=axis, norm="ortho", workers=-1, overwrite_x=True)
        a *= _shape_for(axis, np.exp(-1j * pm * q0))
    else:
        a = a * _shape_for(axis, np.exp(1j * pm * q0))
        a = sfft.ifft(a, axis=axis, norm="ortho", workers=-1, overwrite_x=True)
        a *= _shape_for(axis, np.exp(1j * p0 * j * q.spacing))
    state.amplitudes = a
    state.reps[axis] = to
    return state


def init_state(sys_wave: np.ndarray, probe_wave, axes: Sequence[Axis]) -> WaveState:
    """Tensor-product state of system and probes.

    ``probe_wave`` is either a 2-axis array over (J_K, Phi_X), as produced
    by :func:`qnd_lab.gaussian_prep.preparation_wavefunction`, or a pair
    ``(phi_x_wave, phi_k_wave)`` of 1-axis amplitudes in the Phi
    representations.  ``sys_wave`` is in the X representation.
    """
    axes = tuple(axes)
    sys_wave = np.asarray(sys_wave, dtype=complex)
    if sys_wave.shape != (axes[SYSTEM].q.n,):
        raise InvalidArgumentError(f"system amplitude shape {sys_wave.shape} != ({axes[SYSTEM].q.n},)")
    _check_norm(sys_wave, "system amplitude")
    if isinstance(probe_wave, np.ndarray) and probe_wave.ndim == 2:
        expect = (axes[PROBE_K].p.n, axes[PROBE_X].q.n)
        if probe_wave.shape != expect:
            raise InvalidArgumentError(f"probe amplitude shape {probe_wave.shape} != {expect}")
        _check_norm(probe_wave, "probe amplitude")
        amp = np.einsum("s,kx->sxk", sys_wave, probe_wave)
        reps = [POSITION, POSITION, CONJUGATE]
    else:
        wx, wk = (np.asarray(w, dtype=complex) for w in probe_wave)
        if wx.shape != (axes[PROBE_X].q.n,) or wk.shape != (axes[PROBE_K].q.n,):
            raise InvalidArgumentError("probe amplitude shapes do not match the probe grids")
        _check_norm(wx, "probe X amplitude")
        _check_norm(wk, "probe K amplitude")
        amp = np.einsum("s,x,k->sxk", sys_wave, wx, wk)
        reps = [POSITION, POSITION, POSITION]
    return WaveState(amp, axes, reps)


def _check_norm(a: np.ndarray, what: str):
    n2 = float(np.vdot(a, a).real)
    if abs(n2 - 1.0) > NORM_TOL:
        raise InvalidArgumentError(f"{what} not normalized (|a|^2 = {n2!r})")


# --------------------------------------------------------------------------
# interactions


def _bilinear_phase(state: WaveState, ax_a: int, rep_a: str, ax_b: int, rep_b: str,
                    coeff: float) -> WaveState:
    transform_axis(state, ax_a, rep_a)
    transform_axis(state, ax_b, rep_b)
    va = state.values(ax_a)
    vb = state.values(ax_b)
    phase = np.exp(1j * coeff * np.outer(va, vb))
    shape = [1, 1, 1]
    shape[ax_a], shape[ax_b] = va.size, vb.size
    if ax_a > ax_b:
        phase = phase.T
        shape[ax_a], shape[ax_b] = va.size, vb.size
    state.amplitudes *= phase.reshape(shape)
    return state


def kick_x(state: WaveState, strength: float = 1.0) -> WaveState:
    """exp(i strength Phi_X X): J_X += strength X, K += strength Phi_X."""
    return _bilinear_phase(state, SYSTEM, POSITION, PROBE_X, POSITION, strength)


def kick_k(state: WaveState, strength: float = 1.0) -> WaveState:
    """exp(i strength Phi_K K): J_K += strength K, X -= strength Phi_K."""
    return _bilinear_phase(state, SYSTEM, CONJUGATE, PROBE_K, POSITION, strength)


def probe_phase(state: WaveState, strength: float = 0.5) -> WaveState:
    """exp(i strength Phi_X Phi_K)."""
    return _bilinear_phase(state, PROBE_X, POSITION, PROBE_K, POSITION, strength)


def apply_sequential(state: WaveState, ordering, first_stage: bool = True) -> WaveState:
    """Consecutive impulsive couplings with no free evolution in between.

    ``first_stage=False`` switches the first coupling off (its lambda set
    to 0), which is the reference run for the disturbance.
    """
    ordering = Ordering.parse(ordering)
    if ordering is Ordering.X_THEN_K:
        if first_stage:
            kick_x(state)
        kick_k(state)
    elif ordering is Ordering.K_THEN_X:
        if first_stage:
            kick_k(state)
        kick_x(state)
    else:
        raise InvalidArgumentError("joint ordering: use apply_joint")
    return state


def apply_joint(state: WaveState) -> WaveState:
    """exp[i(Phi_X X + Phi_K K)] via its exact three-factor decomposition."""
    probe_phase(state, 0.5)
    kick_k(state)
    kick_x(state)
    return state


def apply_joint_split_step(state: WaveState, substeps: int = 512) -> WaveState:
    """Symmetric (Strang) splitting of exp[i(Phi_X X + Phi_K K)].

    Used only as a test oracle for :func:`apply_joint`.
    """
    if substeps < 1:
        raise InvalidArgumentError("substeps must be >= 1")
    h = 1.0 / substeps
    kick_x(state, h / 2)
    for i in range(substeps):
        kick_k(state, h)
        kick_x(state, h if i < substeps - 1 else h / 2)
    return state


# --------------------------------------------------------------------------
# readout


@dataclass(frozen=True)
class ReadoutModel:
    resolution: float = 0.0
    family: str = "ideal"

    def __post_init__(self):
        if self.family not in ("ideal", "gaussian"):
            raise InvalidArgumentError(f"unknown readout family {self.family!r}")
        if self.resolution < 0:
            raise InvalidArgumentError("resolution must be >= 0")
        if self.family == "gaussian" and not self.resolution > 0:
            raise InvalidArgumentError("gaussian readout needs resolution > 0")

    @classmethod
    def for_resolution(cls, resolution: float) -> "ReadoutModel":
        return cls(resolution, "gaussian") if resolution > 0 else cls()


@dataclass(frozen=True)
class ProbabilityTable:
    """Discrete distribution on one or two regular axes.

    ``axes`` holds one value array per dimension; ``bin_widths`` the cell
    size of each (0 for a single-point axis).
    """

    axes: tuple
    probs: np.ndarray
    labels: tuple = ()

    @property
    def values(self) -> np.ndarray:
        return self.axes[0]

    @property
    def ndim(self) -> int:
        return self.probs.ndim

    @property
    def bin_widths(self) -> tuple:
        return tuple(float(v[1] - v[0]) if v.size > 1 else 0.0 for v in self.axes)

    def marginal(self, dim: int) -> "ProbabilityTable":
        if self.ndim == 1:
            return self
        other = 1 - dim
        lab = (self.labels[dim],) if self.labels else ()
        return ProbabilityTable((self.axes[dim],), self.probs.sum(axis=other), lab)

    def to_csv(self) -> str:
        if self.ndim != 1:
            raise InvalidArgumentError("CSV dump supports 1-axis tables")
        lines = ["value,probability"]
        lines += [f"{v!r},{p!r}" for v, p in zip(self.values.tolist(), self.probs.tolist())]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float


def measure_moments(dist: ProbabilityTable) -> Moments:
    """Mean and variance of a 1-axis table, treating entries as point masses."""
    if dist.ndim != 1:
        raise InvalidArgumentError("measure_moments takes a 1-axis table; use .marginal()")
    p = dist.probs
    v = dist.values
    total = p.sum()
    mean = float(np.dot(p, v) / total)
    var = float(np.dot(p, (v - mean) ** 2) / total)
    return Moments(mean, var)


def _gaussian_kernel(spacing: float, resolution: float) -> np.ndarray:
    if resolution < spacing:
        raise GridResolutionError(
            f"readout resolution {resolution:.4g} is finer than the pointer grid spacing "
            f"{spacing:.4g}; refine the grid or use an ideal readout")
    half = int(math.ceil(8.0 * resolution / spacing))
    k = np.arange(-half, half + 1) * spacing
    w = np.exp(-k * k / (2 * resolution ** 2))
    return w / w.sum()


def _convolve_axis(probs: np.ndarray, values: np.ndarray, kernel: np.ndarray, axis: int):
    half = (kernel.size - 1) // 2
    d = values[1] - values[0]
    out = np.apply_along_axis(lambda row: np.convolve(row, kernel, mode="full"), axis, probs)
    ext = values[0] + (np.arange(values.size + 2 * half) - half) * d
    return out, ext


def _pointer_marginal(state: WaveState, axes_keep: Sequence[int]) -> np.ndarray:
    for ax in axes_keep:
        transform_axis(state, ax, CONJUGATE)
    dens = np.abs(state.amplitudes) ** 2
    drop = tuple(i for i in range(3) if i not in axes_keep)
    return dens.sum(axis=drop)


def readout_distribution(state: WaveState, probe: str, model: Optional[ReadoutModel] = None
                         ) -> ProbabilityTable:
    """Distribution of the readout mu of one probe (its J axis, convolved
    with the readout kernel p(mu|J) = f(mu - J))."""
    model = model or ReadoutModel()
    axis = {"X": PROBE_X, "K": PROBE_K}[probe.upper()]
    probs = _pointer_marginal(state, [axis])
    values = state.values(axis)
    if model.family == "gaussian":
        kern = _gaussian_kernel(values[1] - values[0], model.resolution)
        probs, values = _convolve_axis(probs, values, kern, 0)
    probs = probs / probs.sum()
    return ProbabilityTable((values,), probs, (f"mu_{probe.lower()}",))


def joint_readout_distribution(state: WaveState, models: Sequence[Optional[ReadoutModel]] = (None, None)
                               ) -> ProbabilityTable:
    """Joint distribution of (mu_X, mu_K)."""
    probs = _pointer_marginal(state, [PROBE_X, PROBE_K])
    axes = [state.values(PROBE_X), state.values(PROBE_K)]
    for i, m in enumerate(models):
        if m is not None and m.family == "gaussian":
            kern = _gaussian_kernel(axes[i][1] - axes[i][0], m.resolution)
            probs, axes[i] = _convolve_axis(probs, axes[i], kern, i)
    probs = probs / probs.sum()
    return ProbabilityTable(tuple(axes), probs, ("mu_x", "mu_k"))


def system_distribution(state: WaveState, variable: str = "X") -> ProbabilityTable:
    """Marginal of the system in X or K: an ideal, noiseless reference probe."""
    rep = POSITION if variable.upper() == "X" else CONJUGATE
    transform_axis(state, SYSTEM, rep)
    probs = (np.abs(state.amplitudes) ** 2).sum(axis=(1, 2))
    return ProbabilityTable((state.values(SYSTEM),), probs / probs.sum(), (variable.lower(),))


# --------------------------------------------------------------------------
# grid selection and scenario-level runs


@dataclass(frozen=True)
class _AxisNeed:
    name: str
    q_sigma: float
    q_mean: float
    p_sigma: float
    p_mean: float


def _combo_std(var_a: float, var_b: float, cov: float, cs) -> float:
    return max(math.sqrt(max(var_a + c * c * var_b + 2 * c * cov, 0.0)) for c in cs)


def _axis_needs(s: Scenario, ordering: Ordering, lattice: bool) -> list:
    """Largest spreads each axis reaches during a run (initial moments
    pushed through the linear kick maps; no readout formula involved)."""
    sy, px, pk, cr = s.system, s.probe_x, s.probe_k, s.cross
    zero_one = (0.0, 1.0)
    if ordering is Ordering.X_THEN_K:
        c_x, c_k, c_jx, c_jk = (0.0,), zero_one, (0.0,), zero_one
    elif ordering is Ordering.K_THEN_X:
        c_x, c_k, c_jx, c_jk = zero_one, (0.0,), zero_one, (0.0,)
    else:
        c_all = (-1.0, -0.5, 0.0, 0.5, 1.0)
        c_x = c_k = c_jx = c_jk = c_all
    cmax = lambda cs: max(abs(c) for c in cs)  # noqa: E731
    sys_q = math.sqrt(sy.sigma_x ** 2 + cmax(c_x) ** 2 * pk.delta_tilde ** 2)
    sys_p = math.sqrt(sy.sigma_k ** 2 + cmax(c_k) ** 2 * px.delta_tilde ** 2)
    needs = [
        _AxisNeed("system", sys_q, abs(sy.mean_x) + cmax(c_x) * abs(pk.mean_phi),
                  sys_p, abs(sy.mean_k) + cmax(c_k) * abs(px.mean_phi)),
    ]
    if lattice:
        jx = 0.0
    else:
        jx = math.sqrt(sy.sigma_x ** 2 + _combo_std(px.delta ** 2, pk.delta_tilde ** 2, -cr.xi, c_jx) ** 2)
    needs.append(_AxisNeed("probe_x", px.delta_tilde, abs(px.mean_phi),
                           jx, abs(px.mean_j) + abs(sy.mean_x) + cmax(c_jx) * abs(pk.mean_phi)))
    jk = math.sqrt(sy.sigma_k ** 2 + _combo_std(pk.delta ** 2, px.delta_tilde ** 2, cr.kappa, c_jk) ** 2)
    needs.append(_AxisNeed("probe_k", 0.0 if lattice else pk.delta_tilde, abs(pk.mean_phi),
                           jk, abs(pk.mean_j) + abs(sy.mean_k) + cmax(c_jk) * abs(px.mean_phi)))
    return needs


def choose_axes(s: Scenario, ordering=None, n: int = 128, extent_sigmas: float = 8.0,
                lattice: bool = False) -> Tuple[Axis, Axis, Axis]:
    """Pick conjugate grid pairs so every axis spans ``extent_sigmas``
    spreads (plus any mean offset) on both sides, in both representations.

    Raises :class:`GridResolutionError` when ``n`` points cannot do it.
    """
    ordering = Ordering.parse(ordering or s.ordering)
    needs = _axis_needs(s, ordering, lattice)
    if lattice:
        return _lattice_axes(needs, n, extent_sigmas)
    axes = []
    for need in needs:
        a = extent_sigmas * need.q_sigma + need.q_mean
        b = extent_sigmas * need.p_sigma + need.p_mean
        # L/2 >= a and pi n / L >= b
        lo, hi = 2 * a, math.pi * n / b
        if lo > hi:
            n_req = 2 * a * b / math.pi
            raise GridResolutionError(
                f"{need.name} axis: {n} points cannot cover +-{extent_sigmas} spreads "
                f"(q half-width {a:.4g}, p half-width {b:.4g}); need n >= {n_req:.0f}")
        length = math.sqrt(lo * hi)
        axes.append(Axis.from_q(Grid1D(n, length)))
    return tuple(axes)


def _lattice_axes(needs, n, extent_sigmas):
    # system K, Phi_X and J_K share spacing d and centred points
    sys, px, pk = needs
    b_lo = max(2 * (extent_sigmas * sys.p_sigma + sys.p_mean),
               2 * (extent_sigmas * px.q_sigma + px.q_mean),
               2 * (extent_sigmas * pk.p_sigma + pk.p_mean)) / n
    d_hi = math.pi / (extent_sigmas * sys.q_sigma + sys.q_mean)
    if b_lo > d_hi:
        raise GridResolutionError(
            f"lattice: {n} points cannot satisfy all three axes (spacing {b_lo:.4g} > {d_hi:.4g})")
    d = math.sqrt(b_lo * d_hi)
    lat = Grid1D(n, n * d)
    return (Axis.from_p(lat), Axis.from_q(lat), Axis.from_p(lat))


def build_state(s: Scenario, prep=None, ordering=None, n: int = 128, extent_sigmas: float = 8.0,
                lattice: bool = False) -> WaveState:
    """Initial WaveState for a canonical scenario.

    Probes come from ``prep`` (a ProbePairPreparation) when given, from the
    exact anticorrelated lattice state when ``lattice`` is set, and
    otherwise from independent Gaussians (the scenario must then have
    kappa = xi = 0).
    """
    from . import gaussian_prep as gp

    if not s.canonical:
        raise InvalidArgumentError("oracle needs a canonical scenario")
    axes = choose_axes(s, ordering, n, extent_sigmas, lattice)
    sys_wave = system_wavefunction(s, axes[SYSTEM].q)
    if lattice:
        px, pk = s.probe_x, s.probe_k
        if not math.isclose(px.delta_tilde, pk.delta, rel_tol=1e-12):
            raise InvalidArgumentError("lattice state needs delta_k == delta_tilde_x")
        probe = gp.anticorrelated_lattice_wavefunction(px.delta_tilde, axes[PROBE_X].q)
    elif prep is not None:
        probe = gp.preparation_wavefunction(prep, axes[PROBE_K].p, axes[PROBE_X].q, extent_sigmas)
    else:
        if s.cross.kappa != 0.0 or s.cross.xi != 0.0:
            raise InvalidArgumentError(
                "correlated probes need a preparation (prep.* keys) for the oracle")
        probe = (probe_wavefunction(s.probe_x, axes[PROBE_X].q),
                 probe_wavefunction(s.probe_k, axes[PROBE_K].q))
    return init_state(sys_wave, probe, axes)


@dataclass(frozen=True)
class OracleResult:
    """Readout moments measured on the grid.

    Keys of ``variances`` / ``means``: ``x`` and ``k`` for the readouts of
    the full run, ``x_alone`` / ``k_alone`` with the other coupling off.
    """

    ordering: Ordering
    variances: dict
    means: dict
    tables: dict = field(default_factory=dict, repr=False)

    @property
    def eta2_k_given_x(self) -> float:
        return self.variances["k"] - self.variances["k_alone"]

    @property
    def eta2_x_given_k(self) -> float:
        return self.variances["x"] - self.variances["x_alone"]


def run_oracle(s: Scenario, prep=None, ordering=None, n: int = 128, extent_sigmas: float = 8.0,
               lattice: bool = False, keep_tables: bool = False) -> OracleResult:
    """Evolve the scenario and a reference run with the first (or, for the
    joint ordering, the other) coupling off; measure both pointers."""
    ordering = Ordering.parse(ordering or s.ordering)
    models = {"X": ReadoutModel.for_resolution(s.probe_x.resolution),
              "K": ReadoutModel.for_resolution(s.probe_k.resolution)}
    base = build_state(s, prep, ordering, n, extent_sigmas, lattice)
    tables = {}

    full = base.copy()
    if ordering is Ordering.JOINT:
        apply_joint(full)
    else:
        apply_sequential(full, ordering)
    tables["x"] = readout_distribution(full, "X", models["X"])
    tables["k"] = readout_distribution(full, "K", models["K"])
    if keep_tables:
        tables["xk"] = joint_readout_distribution(full, (models["X"], models["K"]))
    del full

    if ordering is Ordering.K_THEN_X:
        alone = apply_sequential(base.copy(), ordering, first_stage=False)
        tables["x_alone"] = readout_distribution(alone, "X", models["X"])
        tables["k_alone"] = tables["k"]
    elif ordering is Ordering.X_THEN_K:
        alone = apply_sequential(base.copy(), ordering, first_stage=False)
        tables["k_alone"] = readout_distribution(alone, "K", models["K"])
        tables["x_alone"] = tables["x"]
    else:
        kx = kick_k(base.copy())
        tables["k_alone"] = readout_distribution(kx, "K", models["K"])
        del kx
        xx = kick_x(base.copy())
        tables["x_alone"] = readout_distribution(xx, "X", models["X"])
        del xx
    if keep_tables:
        tables["system_x"] = system_distribution(base, "X")
    mom = {k: measure_moments(t) for k, t in tables.items() if t.ndim == 1 and k != "system_x"}
    return OracleResult(ordering, {k: m.variance for k, m in mom.items()},
                        {k: m.mean for k, m in mom.items()},
                        tables if keep_tables else {})


def initial_moments(state: WaveState) -> dict:
    """Second moments of the prepared state, measured on the grid.

    Returns spreads of X, K, Phi_X, J_X, Phi_K, J_K and the cross
    covariances kappa = Cov(Phi_X, J_K), xi = Cov(Phi_K, J_X).
    """
    st = state.copy()
    out = {}

    def marg(axis, rep):
        transform_axis(st, axis, rep)
        pr = (np.abs(st.amplitudes) ** 2).sum(axis=tuple(i for i in range(3) if i != axis))
        return measure_moments(ProbabilityTable((st.values(axis),), pr))

    for axis, (qn, pn) in enumerate(AXIS_VARS):
        mq = marg(axis, POSITION)
        mp = marg(axis, CONJUGATE)
        out[qn] = mq
        out[pn] = mp

    def cov(ax_a, rep_a, ax_b, rep_b):
        transform_axis(st, ax_a, rep_a)
        transform_axis(st, ax_b, rep_b)
        drop = tuple(i for i in range(3) if i not in (ax_a, ax_b))
        pr = (np.abs(st.amplitudes) ** 2).sum(axis=drop)
        if ax_a > ax_b:
            pr = pr.T
        va, vb = st.values(ax_a), st.values(ax_b)
        ma, mb = pr.sum(1) @ va, pr.sum(0) @ vb
        return float(va @ pr @ vb - ma * mb)

    out["kappa"] = cov(PROBE_X, POSITION, PROBE_K, CONJUGATE)
    out["xi"] = cov(PROBE_K, POSITION, PROBE_X, CONJUGATE)
    return out
