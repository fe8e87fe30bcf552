"""
Monte Carlo version of the calibration protocol.

Outcomes are drawn from oracle probability tables by inverse transform on
the discrete CDF, with a uniform jitter inside the chosen cell.  The jitter
adds exactly ``w^2/12`` to the variance of a table with cell width ``w``;
the estimators subtract it again (Sheppard's correction) so that they
target the point-mass moments the oracle reports.

Randomness comes from Philox counter-based generators, one independent
stream per block spawned from a single seed, so a batch is reproducible
whatever order its blocks are drawn in.  Standard errors are delete-one
block jackknife estimates over ``N_BLOCKS`` blocks.
"""
from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CalibrationError, InvalidArgumentError
from .oracle import ProbabilityTable

N_BLOCKS = 100


@dataclass(frozen=True)
class OutcomeBatch:
    """Sampled readouts.

    ``values`` has shape (n,) for single readouts or (n, 2) for (mu_X, mu_K)
    pairs.  ``bin_widths`` records the cell width of the source table per
    column, ``blocks`` the block index of every row.
    """

    values: np.ndarray
    seed: int
    scenario_id: str = ""
    bin_widths: tuple = (0.0,)
    blocks: Optional[np.ndarray] = None
    labels: tuple = ("mu",)

    def __len__(self):
        return self.values.shape[0]

    def column(self, i: int) -> "OutcomeBatch":
        if self.values.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        return OutcomeBatch(self.values[:, i], self.seed, self.scenario_id,
                            (self.bin_widths[i],), self.blocks, (self.labels[i],))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("index,mu_x,mu_k\n")
        v = self.values
        if v.ndim == 1:
            fmt = "{},,{!r}\n" if self.labels[0] == "mu_k" else "{},{!r},\n"
            for i, x in enumerate(v.tolist()):
                buf.write(fmt.format(i, x))
        else:
            for i, (x, k) in enumerate(v.tolist()):
                buf.write(f"{i},{x!r},{k!r}\n")
        return buf.getvalue()


def _block_sizes(n: int, blocks: int) -> list:
    base, extra = divmod(n, blocks)
    return [base + (1 if b < extra else 0) for b in range(blocks)]


def block_generators(seed: int, blocks: int = N_BLOCKS) -> list:
    children = np.random.SeedSequence(seed).spawn(blocks)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def sample_outcomes(dist: ProbabilityTable, n: int, seed: int, scenario_id: str = "",
                    jitter: bool = True, blocks: int = N_BLOCKS,
                    workers: Optional[int] = None) -> OutcomeBatch:
    """Draw ``n`` outcomes from a 1- or 2-axis table.

    Block ``b`` always uses stream ``b`` of ``seed``, so ``workers`` only
    changes wall time, never the values.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    p = np.asarray(dist.probs, dtype=float)
    if np.any(p < -1e-15) or abs(p.sum() - 1.0) > 1e-10:
        raise InvalidArgumentError(f"table not normalized (sum = {p.sum()!r})")
    flat = np.clip(p.ravel(), 0.0, None)
    cdf = np.cumsum(flat)
    cdf /= cdf[-1]
    # a degenerate marginal stays a point mass: no jitter, no correction
    mass = flat.reshape(p.shape)
    support = [np.count_nonzero(mass.sum(axis=tuple(a for a in range(p.ndim) if a != d)))
               for d in range(p.ndim)]
    widths = tuple(w if (jitter and k > 1) else 0.0 for w, k in zip(dist.bin_widths, support))
    blocks = min(blocks, n)
    sizes = _block_sizes(n, blocks)
    gens = block_generators(seed, blocks)

    def draw(b):
        g = gens[b]
        u = g.random(sizes[b])
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), flat.size - 1)
        coords = np.unravel_index(idx, p.shape)
        cols = []
        for d, c in enumerate(coords):
            v = dist.axes[d][c]
            if widths[d] > 0:
                v = v + (g.random(sizes[b]) - 0.5) * widths[d]
            cols.append(v)
        return np.stack(cols, axis=-1) if len(cols) > 1 else cols[0]

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(draw, range(blocks)))
    else:
        parts = [draw(b) for b in range(blocks)]
    values = np.concatenate(parts, axis=0)
    block_idx = np.repeat(np.arange(blocks), sizes)
    labels = dist.labels if dist.labels else tuple(f"mu{i}" for i in range(p.ndim))
    return OutcomeBatch(values, seed, scenario_id, widths, block_idx, labels)


# --------------------------------------------------------------------------
# jackknife


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr


def _corrected_var(x: np.ndarray, width: float) -> float:
    return float(np.var(x)) - width ** 2 / 12.0


def jackknife(batches: Sequence[OutcomeBatch], statistic: Callable) -> Estimate:
    """Delete-one-block jackknife of ``statistic(*arrays)``.

    All batches must share the same block count; block b is dropped from
    every batch at once.
    """
    nb = {int(b.blocks.max()) + 1 for b in batches}
    if len(nb) != 1:
        raise InvalidArgumentError("batches have different block counts")
    nb = nb.pop()
    full = statistic(*[b.values for b in batches])
    if nb < 2:
        return Estimate(float(full), float("nan"))
    reps = np.empty(nb)
    for k in range(nb):
        reps[k] = statistic(*[b.values[b.blocks != k] for b in batches])
    se = math.sqrt((nb - 1) / nb * float(np.sum((reps - reps.mean()) ** 2)))
    return Estimate(float(full), se)


# --------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class NoiseCalibration:
    sigma2_hat: Estimate
    epsilon2_hat: Estimate
    d_hat: Estimate


@dataclass(frozen=True)
class DisturbanceEstimate:
    eta2_hat: Estimate
    d_dist_hat: Estimate


def calibrate_noise(reference: OutcomeBatch, test: OutcomeBatch,
                    reference_noise: float = 0.0, k_fail: float = 3.0) -> NoiseCalibration:
    """Noise of ``test`` from a reference probe of known noise.

    sigma^2 = Var(reference) - eps0^2, eps^2 = Var(test) - sigma^2,
    D = mean(test) - mean(reference).
    """
    wr, wt = reference.bin_widths[0], test.bin_widths[0]
    e0 = reference_noise ** 2

    sig = jackknife([reference], lambda r: _corrected_var(r, wr) - e0)
    if sig.value < -k_fail * sig.stderr:
        raise CalibrationError(
            f"negative intrinsic variance {sig.value:.4g} +- {sig.stderr:.2g} from the reference")
    eps = jackknife([reference, test],
                    lambda r, t: _corrected_var(t, wt) - (_corrected_var(r, wr) - e0))
    d = jackknife([reference, test], lambda r, t: float(np.mean(t) - np.mean(r)))
    return NoiseCalibration(sig, eps, d)


def estimate_disturbance(with_first: OutcomeBatch, without_first: OutcomeBatch) -> DisturbanceEstimate:
    ww, wo = with_first.bin_widths[0], without_first.bin_widths[0]
    eta = jackknife([with_first, without_first],
                    lambda a, b: _corrected_var(a, ww) - _corrected_var(b, wo))
    d = jackknife([with_first, without_first], lambda a, b: float(np.mean(a) - np.mean(b)))
    return DisturbanceEstimate(eta, d)


def noise_disturbance_product(reference: OutcomeBatch, test: OutcomeBatch,
                              with_first: OutcomeBatch, without_first: OutcomeBatch,
                              reference_noise: float = 0.0) -> Estimate:
    """Jackknifed eps^2 * eta^2 (signed) from the four batches."""
    wr, wt = reference.bin_widths[0], test.bin_widths[0]
    ww, wo = with_first.bin_widths[0], without_first.bin_widths[0]
    e0 = reference_noise ** 2

    def stat(r, t, a, b):
        eps2 = _corrected_var(t, wt) - (_corrected_var(r, wr) - e0)
        return eps2 * (_corrected_var(a, ww) - _corrected_var(b, wo))

    return jackknife([reference, test, with_first, without_first], stat)


# --------------------------------------------------------------------------
# protocol driver


@dataclass(frozen=True)
class CalibrationRun:
    noise: NoiseCalibration
    disturbance: DisturbanceEstimate
    product: Estimate
    batches: dict


def run_protocol(s, prep=None, n: int = 100_000, seed: int = 0, grid_n: int = 128,
                 extent_sigmas: float = 8.0, scenario_id: str = "") -> CalibrationRun:
    """Full calibration for a sequential XthenK scenario.

    Four batches with independent streams: an ideal reference on X
    (noise 0), the (mu_X, mu_K) pairs of the full run, and mu_K with the X
    stage switched off.
    """
    from .moments import Ordering
    from .oracle import run_oracle

    if s.ordering is not Ordering.X_THEN_K:
        raise InvalidArgumentError("calibration protocol implemented for XthenK ordering")
    res = run_oracle(s, prep, Ordering.X_THEN_K, grid_n, extent_sigmas, keep_tables=True)
    seeds = np.random.SeedSequence(seed).generate_state(3)
    ref = sample_outcomes(res.tables["system_x"], n, int(seeds[0]), scenario_id)
    pair = sample_outcomes(res.tables["xk"], n, int(seeds[1]), scenario_id)
    without = sample_outcomes(res.tables["k_alone"], n, int(seeds[2]), scenario_id)
    test, with_first = pair.column(0), pair.column(1)
    noise = calibrate_noise(ref, test, 0.0)
    dist = estimate_disturbance(with_first, without)
    prod = noise_disturbance_product(ref, test, with_first, without, 0.0)
    return CalibrationRun(noise, dist, prod,
                          {"reference": ref, "pairs": pair, "without_first": without})
