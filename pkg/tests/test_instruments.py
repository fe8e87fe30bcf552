"""Finite-dimensional instruments, checked against explicit index contractions."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnd_lab.errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    NotUnitaryError,
    UndefinedConditionalError,
)
from qnd_lab.instruments import (
    FiniteState,
    ReadoutFamily,
    born_probability,
    build_instrument,
    check_axioms,
    conditional_state,
    conjugate_shift,
    controlled_shift,
    embed,
    maximally_entangled,
    partial_trace,
    polar_diagnostic,
    random_state,
    random_unitary,
    sequential_factorization_check,
    swapped_correlation,
)

# exhaustive 2x2x2 computation: Bell probes, controlled shifts, system |+>
BELL_DISCREPANCY = 0.25
BELL_SWAPPED = 1.0

PLUS = FiniteState.pure([1.0, 1.0])
TOL = 1e-12


# --------------------------------------------------------------------------
# brute-force contraction oracle: u[a, s, b, t] = <a s| U |b t>


def bf_unnormalized(f, U, rho_det, rho_sys):
    """Tr_det[(f x 1) U (rho_det x rho_sys) U^dagger] by explicit indices."""
    dd, ds = rho_det.shape[0], rho_sys.shape[0]
    u = U.reshape(dd, ds, dd, ds)
    return np.einsum("ea,asbt,bg,tv,ewgv->sw", f, u, rho_det, rho_sys, u.conj(), optimize=True)


def bf_born(fs, U, rho_det, rho_sys):
    return np.array([np.trace(bf_unnormalized(f, U, rho_det, rho_sys)).real for f in fs])


def bf_chain_state(r4, rho_sys, ua, ub, first_only=False):
    """Six-index state (a, b, s, a', b', s') after U_A (and U_B)."""
    rho = np.einsum("abAB,sS->absABS", r4, rho_sys)
    rho = np.einsum("xsat,abtABT,XSAT->xbsXBS", ua, rho, ua.conj(), optimize=True)
    if first_only:
        return rho
    return np.einsum("ysbt,xbtXBT,YSBT->xysXYS", ub, rho, ub.conj(), optimize=True)


def bf_chain(fa_list, fb_list, UA, UB, rho_det, rho_sys, da, db):
    ds = rho_sys.shape[0]
    ua, ub = UA.reshape(da, ds, da, ds), UB.reshape(db, ds, db, ds)
    r4 = rho_det.reshape(da, db, da, db)
    rho = bf_chain_state(r4, rho_sys, ua, ub)
    joint = np.array([[np.einsum("Xx,Yy,xysXYs->", fa, fb, rho).real for fb in fb_list]
                      for fa in fa_list])
    rho_a = np.einsum("abcb->ac", r4)
    rho_b = np.einsum("abad->bd", r4)
    composed = np.array([[np.trace(bf_unnormalized(fb, UB, rho_b,
                                                   bf_unnormalized(fa, UA, rho_a, rho_sys))).real
                          for fb in fb_list] for fa in fa_list])
    return joint, composed


def bf_swapped(rho_det, UA, rho_sys, da, db):
    ds = rho_sys.shape[0]
    ua = UA.reshape(da, ds, da, ds)
    rho = bf_chain_state(rho_det.reshape(da, db, da, db), rho_sys, ua, None, first_only=True)
    rbs = np.einsum("xbsxBS->bsBS", rho).reshape(db * ds, db * ds)
    rb = np.einsum("bsBs->bB", rbs.reshape(db, ds, db, ds))
    rs = np.einsum("bsbS->sS", rbs.reshape(db, ds, db, ds))
    return np.abs(np.linalg.eigvalsh(rbs - np.kron(rb, rs))).sum()


def random_commuting_readout(rng, dim, n_out=3):
    lik = rng.random((n_out, dim))
    lik /= lik.sum(axis=0)
    return ReadoutFamily.from_likelihood(lik, random_unitary(dim, rng))


def random_povm(rng, dim, n_out=3):
    """Noncommuting positive family summing to the identity."""
    gs = [g @ g.conj().T for g in (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
                                   for _ in range(n_out))]
    total = sum(gs)
    w, v = np.linalg.eigh(total)
    inv_root = v @ np.diag(w ** -0.5) @ v.conj().T
    ops = [inv_root @ g @ inv_root for g in gs]
    ops = [0.5 * (o + o.conj().T) for o in ops]
    ops[-1] = np.eye(dim) - sum(ops[:-1])
    return ReadoutFamily(tuple(range(n_out)), tuple(ops))


# --------------------------------------------------------------------------


class TestStates:
    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            FiniteState(np.diag([0.7, 0.7]))
        with pytest.raises(InvalidArgumentError):
            FiniteState(np.diag([1.5, -0.5]))
        with pytest.raises(InvalidArgumentError):
            FiniteState(np.array([[0.5, 0.5], [0.0, 0.5]]))
        with pytest.raises(DimensionMismatchError):
            FiniteState(np.ones((2, 3)) / 2)

    def test_readout_completeness(self):
        with pytest.raises(InvalidArgumentError):
            ReadoutFamily((0, 1), (np.diag([1.0, 0.0]), np.diag([0.0, 0.5])))
        with pytest.raises(InvalidArgumentError):
            ReadoutFamily((0, 1), (np.diag([1.5, 0.0]), np.diag([-0.5, 1.0])))
        rf = random_commuting_readout(np.random.default_rng(0), 3)
        assert rf.is_classical() and rf.priors().sum() == pytest.approx(3.0)
        assert not random_povm(np.random.default_rng(0), 3).is_classical()


class TestBorn:
    def test_identity_coupling(self):
        rng = np.random.default_rng(1)
        rf = random_commuting_readout(rng, 2)
        det = random_state(2, rng)
        p1 = born_probability(rf, np.eye(4), det, random_state(2, rng))
        p2 = born_probability(rf, np.eye(4), det, random_state(2, rng))
        want = [np.trace(f @ det.matrix).real for f in rf.operators]
        assert list(p1.values()) == pytest.approx(want, abs=TOL)
        assert list(p2.values()) == pytest.approx(want, abs=TOL)

    def test_controlled_shift_diagonal(self):
        u = controlled_shift(2, 2)
        det = FiniteState.pure([1.0, 0.0])
        rho = u @ np.kron(det.matrix, PLUS.matrix) @ u.conj().T
        diag = np.diag(partial_trace(rho, [2, 2], [0])).real
        p = born_probability(ReadoutFamily.projective(2), u, det, PLUS)
        assert list(p.values()) == pytest.approx(diag, abs=TOL)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 3), st.integers(2, 3))
    def test_matches_contraction(self, seed, dd, ds):
        rng = np.random.default_rng(seed)
        rf = random_povm(rng, dd)
        u = random_unitary(dd * ds, rng)
        det, sysm = random_state(dd, rng), random_state(ds, rng)
        p = np.array(list(born_probability(rf, u, det, sysm).values()))
        assert p == pytest.approx(bf_born(rf.operators, u, det.matrix, sysm.matrix), abs=TOL)
        assert p.sum() == pytest.approx(1.0, abs=TOL) and p.min() >= -TOL

    def test_errors(self):
        rf = ReadoutFamily.projective(2)
        with pytest.raises(NotUnitaryError):
            born_probability(rf, 2 * np.eye(4), PLUS, PLUS)
        with pytest.raises(DimensionMismatchError):
            born_probability(rf, np.eye(4), PLUS, FiniteState(np.eye(3) / 3))
        with pytest.raises(DimensionMismatchError):
            born_probability(ReadoutFamily.projective(3), np.eye(6), FiniteState(np.eye(2) / 2),
                             FiniteState(np.eye(3) / 3))


class TestConditional:
    def test_identity_coupling(self):
        rng = np.random.default_rng(2)
        sysm = random_state(2, rng)
        c = conditional_state(ReadoutFamily.projective(2), np.eye(4), FiniteState(np.eye(2) / 2),
                              sysm, 1)
        assert np.max(np.abs(c.matrix - sysm.matrix)) < TOL

    def test_projective_nondemolition(self):
        c = conditional_state(ReadoutFamily.projective(2), controlled_shift(2, 2),
                              FiniteState.pure([1.0, 0.0]), PLUS, 1)
        assert np.max(np.abs(c.matrix - np.diag([0.0, 1.0]))) < TOL

    def test_zero_probability(self):
        with pytest.raises(UndefinedConditionalError):
            conditional_state(ReadoutFamily.projective(2), controlled_shift(2, 2),
                              FiniteState.pure([1.0, 0.0]), FiniteState.pure([1.0, 0.0]), 1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_random_valid(self, seed):
        rng = np.random.default_rng(seed)
        rf, u = random_povm(rng, 2), random_unitary(6, rng)
        det, sysm = random_state(2, rng), random_state(3, rng)
        for mu in rf.outcomes:
            c = conditional_state(rf, u, det, sysm, mu)
            want = bf_unnormalized(rf.operators[mu], u, det.matrix, sysm.matrix)
            assert np.max(np.abs(c.matrix - want / np.trace(want).real)) < 1e-10


class TestInstrument:
    def test_pure_projective_single_term(self):
        inst = build_instrument(ReadoutFamily.projective(2), controlled_shift(2, 2),
                                FiniteState.pure([1.0, 0.0]), 2)
        assert all(inst.n_terms(mu) == 1 for mu in inst.outcomes)
        assert inst.diagnostics["basis"] == "common"

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.booleans())
    def test_reproduces_conditional_and_born(self, seed, classical):
        rng = np.random.default_rng(seed)
        rf = random_commuting_readout(rng, 3) if classical else random_povm(rng, 3)
        u = random_unitary(6, rng)
        det, sysm = random_state(3, rng), random_state(2, rng)
        inst = build_instrument(rf, u, det, 2)
        assert inst.diagnostics["basis"] == ("common" if classical else "per-outcome")
        for mu, f in zip(rf.outcomes, rf.operators):
            want = bf_unnormalized(f, u, det.matrix, sysm.matrix)
            assert np.max(np.abs(inst.apply(sysm, [mu]) - want)) < 1e-12
            assert np.trace(inst.effect([mu]) @ sysm.matrix).real == pytest.approx(
                np.trace(want).real, abs=TOL)

    def test_axioms_random_states(self):
        rng = np.random.default_rng(3)
        inst = build_instrument(random_povm(rng, 3), random_unitary(9, rng), random_state(3, rng), 3)
        rep = check_axioms(inst, [random_state(3, rng) for _ in range(100)])
        assert rep.ok and rep.max_trace_error < TOL
        assert np.max(np.abs(inst.effect() - np.eye(3))) < TOL

    def test_zero_weight_dropped(self):
        det = FiniteState(np.diag([1.0, 0.0, 0.0]))
        inst = build_instrument(ReadoutFamily.projective(3), controlled_shift(3, 2), det, 2)
        assert sum(inst.n_terms(mu) for mu in inst.outcomes) == 3

    def test_polar_diagnostic(self):
        inst = build_instrument(ReadoutFamily.projective(2), controlled_shift(2, 2),
                                FiniteState(np.eye(2) / 2), 2)
        for mu in inst.outcomes:
            for m in inst.operations[mu]:
                assert polar_diagnostic(m).feedback_is_identity
        # a system rotation after the coupling is feedback
        fb = np.kron(np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])) @ controlled_shift(2, 2)
        inst = build_instrument(ReadoutFamily.projective(2), fb, FiniteState(np.eye(2) / 2), 2)
        flags = [polar_diagnostic(m).feedback_is_identity
                 for mu in inst.outcomes for m in inst.operations[mu]]
        assert not any(flags)
        m = inst.operations[0][0]
        d = polar_diagnostic(m)
        assert np.max(np.abs(d.feedback @ d.sqrt_effect - m)) < TOL


class TestChains:
    def test_bell_probes_frozen(self):
        u = controlled_shift(2, 2)
        rf = ReadoutFamily.projective(2)
        rep = sequential_factorization_check(maximally_entangled(2), u, u, (rf, rf), PLUS)
        joint, composed = bf_chain(rf.operators, rf.operators, u, u,
                                   maximally_entangled(2).matrix, PLUS.matrix, 2, 2)
        assert np.max(np.abs(rep.joint - joint)) < TOL
        assert np.max(np.abs(rep.composed - composed)) < TOL
        assert rep.max_discrepancy == pytest.approx(BELL_DISCREPANCY, abs=TOL)
        assert swapped_correlation(maximally_entangled(2), u, PLUS) == pytest.approx(BELL_SWAPPED,
                                                                                      abs=TOL)
        assert rep.marginal_a_discrepancy < TOL

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_random_chain_matches_contraction(self, seed):
        rng = np.random.default_rng(seed)
        ra, rb = random_povm(rng, 2), random_commuting_readout(rng, 2)
        ua, ub = random_unitary(4, rng), random_unitary(4, rng)
        det, sysm = random_state(4, rng), random_state(2, rng)
        rep = sequential_factorization_check(det, ua, ub, (ra, rb), sysm)
        joint, composed = bf_chain(ra.operators, rb.operators, ua, ub, det.matrix, sysm.matrix, 2, 2)
        assert np.max(np.abs(rep.joint - joint)) < TOL
        assert np.max(np.abs(rep.composed - composed)) < TOL
        assert rep.marginal_a_discrepancy < TOL
        assert swapped_correlation(det, ua, sysm) == pytest.approx(
            bf_swapped(det.matrix, ua, sysm.matrix, 2, 2), abs=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_product_probes(self, seed):
        rng = np.random.default_rng(seed)
        det = FiniteState(np.kron(random_state(2, rng).matrix, random_state(2, rng).matrix))
        ua, ub = random_unitary(4, rng), random_unitary(4, rng)
        rf = random_povm(rng, 2)
        sysm = random_state(2, rng)
        assert sequential_factorization_check(det, ua, ub, (rf, rf), sysm).max_discrepancy < TOL
        assert swapped_correlation(det, ua, sysm) < TOL

    def test_identity_first_coupling(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            assert swapped_correlation(random_state(4, rng), np.eye(4), random_state(2, rng)) < TOL

    @pytest.mark.parametrize("theta", np.linspace(0, np.pi / 2, 9))
    def test_pure_probe_family_equivalence(self, theta):
        # swapped correlation vanishes exactly when the instruments compose
        ket = np.zeros(4)
        ket[0], ket[3] = np.cos(theta), np.sin(theta)
        det = FiniteState.pure(ket)
        u, rf = controlled_shift(2, 2), ReadoutFamily.projective(2)
        disc = sequential_factorization_check(det, u, u, (rf, rf), PLUS).max_discrepancy
        sc = swapped_correlation(det, u, PLUS)
        assert (disc < 1e-12) == (sc < 1e-12)
        assert disc == pytest.approx(np.sin(2 * theta) ** 2 / 4, abs=TOL)

    def test_classical_probe_correlation_is_not_swapped(self):
        # classically correlated probes: no swapped correlation, yet no factorization
        det = FiniteState(np.diag([0.5, 0.0, 0.0, 0.5]))
        u, rf = controlled_shift(2, 2), ReadoutFamily.projective(2)
        assert swapped_correlation(det, u, PLUS) < TOL
        assert sequential_factorization_check(det, u, u, (rf, rf), PLUS).max_discrepancy == \
            pytest.approx(0.25, abs=TOL)

    def test_conjugate_shift_and_dims(self):
        u = conjugate_shift(2, 2)
        assert np.max(np.abs(u.conj().T @ u - np.eye(4))) < TOL
        with pytest.raises(DimensionMismatchError):
            swapped_correlation(maximally_entangled(2), np.eye(4), PLUS, dims_det=(2, 3))

    def test_embed_matches_kron(self):
        rng = np.random.default_rng(5)
        a = random_unitary(4, rng)
        assert np.max(np.abs(embed(a, [2, 2, 3], [0, 1]) - np.kron(a, np.eye(3)))) < TOL
        b = random_unitary(2, rng)
        assert np.max(np.abs(embed(b, [2, 3, 2], [2]) - np.kron(np.eye(6), b))) < TOL
