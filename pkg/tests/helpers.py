"""Random physical states shared by the test modules."""
import math

import numpy as np
from scipy.linalg import expm

from qnd_lab.moments import (
    Couplings,
    ProbeMoments,
    Scenario,
    SystemMoments,
    canonicalize,
    scenario_from_covariance,
)

# symplectic form for (Phi_X, J_X, Phi_K, J_K), [Phi_A, J_A] = i
OMEGA = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def random_symplectic(rng, scale=0.6):
    h = rng.normal(scale=scale, size=(4, 4))
    return expm(OMEGA @ (h + h.T) / 2)


def random_probe_covariance(rng):
    """Covariance of a random two-mode Gaussian probe state (mixed or pure)."""
    nu = 0.5 + rng.exponential(0.3, size=2) * (rng.random(2) < 0.5)
    s = random_symplectic(rng)
    v = s @ np.diag(np.repeat(nu, 2)) @ s.T
    # Robertson-Schroedinger: V + (i/2) Omega >= 0
    assert np.linalg.eigvalsh(v + 0.5j * OMEGA).min() > -1e-10
    return v


def random_system(rng):
    sx = math.exp(rng.uniform(-1.5, 1.5))
    return SystemMoments(sx, (1.0 + rng.exponential(0.5)) / (2 * sx))


def random_physical_scenario(rng, ordering="xk"):
    return canonicalize(scenario_from_covariance(
        random_probe_covariance(rng), random_system(rng), couplings=Couplings(ordering=ordering)))


def random_uncorrelated_scenario(rng, ordering="xk"):
    def probe(label):
        d = math.exp(rng.uniform(-2, 2))
        return ProbeMoments(label, d, (1.0 + rng.exponential(0.5)) / (2 * d))

    return canonicalize(Scenario(random_system(rng), probe("X"), probe("K"),
                                 couplings=Couplings(ordering=ordering)))
