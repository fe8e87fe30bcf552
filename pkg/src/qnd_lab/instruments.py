"""
Finite-dimensional measurement algebra: Born rule with positive readout
families, generalized operations M_{J,I}(mu) = sqrt(p(mu|J) w(I)) <J|U|I>,
instruments and their axioms, and the two-probe chain in which initial
probe correlations prevent the joint instrument from factorizing.

Tensor order is probe (x) system for a single probe, and
probe A (x) probe B (x) system for a chain.  Dense numpy arrays throughout;
dimensions are meant to stay tiny (<= 4 per factor by default).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional, Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidArgumentError, NotUnitaryError, \
    UndefinedConditionalError

TOL = 1e-12
MAX_DIM = 4


# --------------------------------------------------------------------------
# states and readouts


@dataclass(frozen=True)
class FiniteState:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError(f"density matrix must be square, got {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > TOL:
            raise InvalidArgumentError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > TOL:
            raise InvalidArgumentError(f"trace {np.trace(m).real!r} != 1")
        if np.linalg.eigvalsh(m).min() < -TOL:
            raise InvalidArgumentError("density matrix has negative eigenvalues")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def pure(cls, ket) -> "FiniteState":
        k = np.asarray(ket, dtype=complex)
        k = k / np.linalg.norm(k)
        return cls(np.outer(k, k.conj()))

    @classmethod
    def coerce(cls, rho) -> "FiniteState":
        return rho if isinstance(rho, cls) else cls(rho)


@dataclass(frozen=True)
class ReadoutFamily:
    """Positive operators F(mu) on the probe, one per outcome label."""

    outcomes: tuple
    operators: tuple

    def __post_init__(self):
        ops = tuple(np.asarray(f, dtype=complex) for f in self.operators)
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        if len(ops) != len(self.outcomes) or not ops:
            raise InvalidArgumentError("need one operator per outcome")
        d = ops[0].shape[0]
        for f in ops:
            if f.shape != (d, d):
                raise DimensionMismatchError("readout operators differ in shape")
            if np.max(np.abs(f - f.conj().T)) > TOL or np.linalg.eigvalsh(f).min() < -TOL:
                raise InvalidArgumentError("readout operator is not positive semidefinite")
        if np.max(np.abs(sum(ops) - np.eye(d))) > TOL:
            raise InvalidArgumentError("readout operators do not sum to the identity")

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    def priors(self) -> np.ndarray:
        """pr(mu) = Tr F(mu)."""
        return np.array([np.trace(f).real for f in self.operators])

    def is_classical(self) -> bool:
        ops = self.operators
        return all(np.max(np.abs(a @ b - b @ a)) <= 1e-10 for a in ops for b in ops)

    @classmethod
    def projective(cls, dim: int, outcomes: Optional[Sequence] = None) -> "ReadoutFamily":
        outcomes = list(range(dim)) if outcomes is None else list(outcomes)
        return cls(tuple(outcomes), tuple(np.diag(np.eye(dim)[i]) for i in range(dim)))

    @classmethod
    def from_likelihood(cls, likelihood: np.ndarray, basis: Optional[np.ndarray] = None,
                        outcomes: Optional[Sequence] = None) -> "ReadoutFamily":
        """F(mu) = sum_J p(mu|J) |J><J|; ``likelihood[mu, J]`` sums to 1 over mu."""
        lik = np.asarray(likelihood, dtype=float)
        nmu, dim = lik.shape
        basis = np.eye(dim, dtype=complex) if basis is None else np.asarray(basis, dtype=complex)
        ops = tuple(basis @ np.diag(lik[m]) @ basis.conj().T for m in range(nmu))
        return cls(tuple(range(nmu)) if outcomes is None else tuple(outcomes), ops)


# --------------------------------------------------------------------------
# helpers


def _check_unitary(u: np.ndarray, dim: int):
    u = np.asarray(u, dtype=complex)
    if u.shape != (dim, dim):
        raise DimensionMismatchError(f"unitary has shape {u.shape}, expected {(dim, dim)}")
    if np.max(np.abs(u.conj().T @ u - np.eye(dim))) > TOL * 10:
        raise NotUnitaryError("interaction operator is not unitary")
    return u


def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Reduced matrix on the factors ``keep`` (in their original order)."""
    dims = list(dims)
    keep = sorted(keep)
    n = len(dims)
    t = rho.reshape(dims + dims)
    trace_out = [i for i in range(n) if i not in keep]
    for k, i in enumerate(sorted(trace_out, reverse=True)):
        nn = t.ndim // 2
        t = np.trace(t, axis1=i, axis2=i + nn)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(dk, dk)


def embed(op: np.ndarray, dims: Sequence[int], targets: Sequence[int]) -> np.ndarray:
    """Lift ``op`` acting on factors ``targets`` (in that order) to the full space."""
    dims = list(dims)
    n = len(dims)
    rest = [i for i in range(n) if i not in targets]
    order = list(targets) + rest
    d_t = int(np.prod([dims[i] for i in targets]))
    d_r = int(np.prod([dims[i] for i in rest])) if rest else 1
    full = np.kron(op, np.eye(d_r))
    # full acts on factors in ``order``; permute back to natural order
    shp = [dims[i] for i in order]
    t = full.reshape(shp + shp)
    inv = np.argsort(order)
    t = t.transpose(list(inv) + [n + i for i in inv])
    d = int(np.prod(dims))
    return t.reshape(d, d)


def _evolve(u, rho):
    return u @ rho @ u.conj().T


# --------------------------------------------------------------------------
# Born rule and conditional states


def _joint_state(U, rho_det, rho_sys):
    rho_det = FiniteState.coerce(rho_det)
    rho_sys = FiniteState.coerce(rho_sys)
    dd, ds = rho_det.dim, rho_sys.dim
    U = _check_unitary(U, dd * ds)
    return _evolve(U, np.kron(rho_det.matrix, rho_sys.matrix)), dd, ds


def born_probability(readout: ReadoutFamily, U, rho_det, rho_sys) -> Dict[Hashable, float]:
    """P(mu) = Tr[(F(mu) (x) 1) U (rho_det (x) rho_sys) U^dagger]."""
    rho, dd, ds = _joint_state(U, rho_det, rho_sys)
    if readout.dim != dd:
        raise DimensionMismatchError(f"readout acts on dim {readout.dim}, probe has dim {dd}")
    eye = np.eye(ds)
    return {mu: float(np.trace(np.kron(f, eye) @ rho).real)
            for mu, f in zip(readout.outcomes, readout.operators)}


def conditional_state(readout: ReadoutFamily, U, rho_det, rho_sys, mu) -> FiniteState:
    rho, dd, ds = _joint_state(U, rho_det, rho_sys)
    if readout.dim != dd:
        raise DimensionMismatchError(f"readout acts on dim {readout.dim}, probe has dim {dd}")
    f = readout.operators[readout.outcomes.index(mu)]
    unnorm = partial_trace(np.kron(f, np.eye(ds)) @ rho, [dd, ds], [1])
    p = np.trace(unnorm).real
    if p <= TOL:
        raise UndefinedConditionalError(f"outcome {mu!r} has probability {p:.3g}")
    m = unnorm / p
    return FiniteState(0.5 * (m + m.conj().T))


# --------------------------------------------------------------------------
# instruments


@dataclass
class Instrument:
    """Outcome-indexed Kraus lists acting on the system."""

    operations: Dict[Hashable, List[np.ndarray]]
    dim: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def outcomes(self) -> tuple:
        return tuple(self.operations)

    def apply(self, rho, outcomes: Optional[Iterable] = None) -> np.ndarray:
        """I_D(rho) for the outcome set D (all outcomes when None)."""
        rho = FiniteState.coerce(rho).matrix if not isinstance(rho, np.ndarray) else rho
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for mu in (self.outcomes if outcomes is None else outcomes):
            for m in self.operations[mu]:
                out += m @ rho @ m.conj().T
        return out

    def effect(self, outcomes: Optional[Iterable] = None) -> np.ndarray:
        """E(D) = I_D^*(1)."""
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for mu in (self.outcomes if outcomes is None else outcomes):
            for m in self.operations[mu]:
                out += m.conj().T @ m
        return out

    def probability(self, rho, outcomes: Iterable) -> float:
        return float(np.trace(self.apply(rho, outcomes)).real)

    def n_terms(self, mu) -> int:
        return len(self.operations[mu])


def _common_eigenbasis(ops: Sequence[np.ndarray], seed: int = 7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    combo = sum(c * f for c, f in zip(rng.normal(size=len(ops)), ops))
    _, vecs = np.linalg.eigh(combo)
    return vecs


def build_instrument(readout: ReadoutFamily, U, rho_det, dim_sys: int,
                     drop_tol: float = 1e-14) -> Instrument:
    """Instrument from operations M_{J,I}(mu) = sqrt(p(mu|J) w(I)) <J|U|I>.

    For a classical (mutually commuting) readout family |J> is a common
    eigenbasis.  Otherwise each outcome uses the eigenbasis |mu:J> of its
    own F(mu); ``diagnostics['basis']`` records which case applied.
    Terms with vanishing weight are dropped.
    """
    rho_det = FiniteState.coerce(rho_det)
    dd = rho_det.dim
    if readout.dim != dd:
        raise DimensionMismatchError(f"readout acts on dim {readout.dim}, probe has dim {dd}")
    U = _check_unitary(U, dd * dim_sys)
    w, ivecs = np.linalg.eigh(rho_det.matrix)
    U4 = U.reshape(dd, dim_sys, dd, dim_sys)
    classical = readout.is_classical()
    common = _common_eigenbasis(readout.operators) if classical else None
    ops: Dict[Hashable, List[np.ndarray]] = {}
    for mu, f in zip(readout.outcomes, readout.operators):
        if classical:
            jvecs = common
            pj = np.einsum("ji,jk,ki->i", jvecs.conj(), f, jvecs).real
        else:
            pj, jvecs = np.linalg.eigh(f)
        terms = []
        for j in range(dd):
            for i in range(dd):
                weight = pj[j] * w[i]
                if weight <= drop_tol:
                    continue
                # <J| U |I> as a system operator
                m = np.einsum("a,asbt,b->st", jvecs[:, j].conj(), U4, ivecs[:, i])
                terms.append(np.sqrt(weight) * m)
        ops[mu] = terms
    return Instrument(ops, dim_sys, {"basis": "common" if classical else "per-outcome"})


@dataclass(frozen=True)
class AxiomReport:
    empty_is_zero: bool
    additive: bool
    trace_preserving: bool
    max_trace_error: float

    @property
    def ok(self) -> bool:
        return self.empty_is_zero and self.additive and self.trace_preserving


def check_axioms(inst: Instrument, states: Iterable, tol: float = TOL) -> AxiomReport:
    """Axioms 1-3 on the given states; additivity over every split of the
    outcome set into a prefix and the rest."""
    empty, additive, worst = True, True, 0.0
    outs = inst.outcomes
    for rho in states:
        r = FiniteState.coerce(rho).matrix
        empty &= bool(np.max(np.abs(inst.apply(r, []))) == 0.0)
        total = inst.apply(r)
        for k in range(1, len(outs)):
            parts = inst.apply(r, outs[:k]) + inst.apply(r, outs[k:])
            additive &= bool(np.max(np.abs(parts - total)) <= tol)
        worst = max(worst, abs(np.trace(total).real - 1.0))
    return AxiomReport(empty, additive, bool(worst <= tol), float(worst))


@dataclass(frozen=True)
class PolarDiagnostic:
    sqrt_effect: np.ndarray
    feedback: Optional[np.ndarray]
    feedback_is_identity: bool


def polar_diagnostic(m: np.ndarray, tol: float = 1e-9) -> PolarDiagnostic:
    """Split M = V E^{1/2} with E = M^dagger M; report whether V is the
    identity on the support of E (no feedback on the system)."""
    e = m.conj().T @ m
    vals, vecs = np.linalg.eigh(e)
    vals = np.clip(vals, 0.0, None)
    root = vecs @ np.diag(np.sqrt(vals)) @ vecs.conj().T
    support = vals > tol
    if not support.any():
        return PolarDiagnostic(root, None, True)
    inv = vecs[:, support] @ np.diag(1 / np.sqrt(vals[support])) @ vecs[:, support].conj().T
    v = m @ inv
    proj = vecs[:, support] @ vecs[:, support].conj().T
    return PolarDiagnostic(root, v, bool(np.max(np.abs(v - proj)) <= 1e-8))


# --------------------------------------------------------------------------
# two-probe chains


def trace_norm(a: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T)))))


def _chain_dims(rho_det, dims_det, rho_sys):
    da, db = dims_det
    rho_det = FiniteState.coerce(rho_det)
    rho_sys = FiniteState.coerce(rho_sys)
    if rho_det.dim != da * db:
        raise DimensionMismatchError(f"probe state dim {rho_det.dim} != {da}*{db}")
    return rho_det, rho_sys, da, db, rho_sys.dim


def swapped_correlation(rho_det, U_A, rho_sys, dims_det=(2, 2)) -> float:
    """Trace distance between rho_{sys,B} after the first interaction and
    the product of its marginals."""
    rho_det, rho_sys, da, db, ds = _chain_dims(rho_det, dims_det, rho_sys)
    U_A = _check_unitary(U_A, da * ds)
    dims = [da, db, ds]
    rho = np.kron(rho_det.matrix, rho_sys.matrix)
    rho = _evolve(embed(U_A, dims, [0, 2]), rho)
    r_bs = partial_trace(rho, dims, [1, 2])  # order (B, sys)
    r_b = partial_trace(r_bs, [db, ds], [0])
    r_s = partial_trace(r_bs, [db, ds], [1])
    return trace_norm(r_bs - np.kron(r_b, r_s))


@dataclass(frozen=True)
class FactorizationReport:
    joint: np.ndarray
    composed: np.ndarray
    max_discrepancy: float

    @property
    def marginal_a_discrepancy(self) -> float:
        return float(np.max(np.abs(self.joint.sum(1) - self.composed.sum(1))))


def sequential_factorization_check(rho_det, U_A, U_B, readouts: Sequence[ReadoutFamily],
                                   rho_sys, dims_det=(2, 2)) -> FactorizationReport:
    """Exact P(mu_A, mu_B) from the full chain against I^B o I^A built from
    the marginal probe states."""
    rho_det, rho_sys, da, db, ds = _chain_dims(rho_det, dims_det, rho_sys)
    fa, fb = readouts
    if fa.dim != da or fb.dim != db:
        raise DimensionMismatchError("readout dimensions do not match the probes")
    U_A = _check_unitary(U_A, da * ds)
    U_B = _check_unitary(U_B, db * ds)
    dims = [da, db, ds]
    rho = np.kron(rho_det.matrix, rho_sys.matrix)
    rho = _evolve(embed(U_B, dims, [1, 2]) @ embed(U_A, dims, [0, 2]), rho)
    joint = np.empty((len(fa.outcomes), len(fb.outcomes)))
    for a, f_a in enumerate(fa.operators):
        for b, f_b in enumerate(fb.operators):
            joint[a, b] = np.trace(np.kron(np.kron(f_a, f_b), np.eye(ds)) @ rho).real

    rho_a = partial_trace(rho_det.matrix, [da, db], [0])
    rho_b = partial_trace(rho_det.matrix, [da, db], [1])
    inst_a = build_instrument(fa, U_A, rho_a, ds)
    inst_b = build_instrument(fb, U_B, rho_b, ds)
    composed = np.empty_like(joint)
    for a, mu_a in enumerate(fa.outcomes):
        after_a = inst_a.apply(rho_sys.matrix, [mu_a])
        for b, mu_b in enumerate(fb.outcomes):
            composed[a, b] = np.trace(inst_b.apply(after_a, [mu_b])).real
    return FactorizationReport(joint, composed, float(np.max(np.abs(joint - composed))))


# --------------------------------------------------------------------------
# standard small-dimension ingredients


def controlled_shift(dim_probe: int, dim_sys: int) -> np.ndarray:
    """|p, s> -> |p + s mod d_p, s>: the discrete nondemolition coupling,
    on probe (x) system."""
    d = dim_probe * dim_sys
    u = np.zeros((d, d))
    for p in range(dim_probe):
        for s in range(dim_sys):
            u[((p + s) % dim_probe) * dim_sys + s, p * dim_sys + s] = 1.0
    return u


def fourier_matrix(dim: int) -> np.ndarray:
    w = np.exp(2j * np.pi / dim)
    idx = np.arange(dim)
    return w ** np.outer(idx, idx) / np.sqrt(dim)


def conjugate_shift(dim_probe: int, dim_sys: int) -> np.ndarray:
    """Controlled shift of the probe by the system's Fourier-conjugate index."""
    f = np.kron(np.eye(dim_probe), fourier_matrix(dim_sys))
    return f.conj().T @ controlled_shift(dim_probe, dim_sys) @ f


def maximally_entangled(dim: int) -> FiniteState:
    ket = np.zeros(dim * dim)
    for i in range(dim):
        ket[i * dim + i] = 1.0
    return FiniteState.pure(ket)


def random_state(dim: int, rng: np.random.Generator, rank: Optional[int] = None) -> FiniteState:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    m = m / np.trace(m).real
    return FiniteState(0.5 * (m + m.conj().T))


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
