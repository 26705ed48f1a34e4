import numpy as np
import pytest
from scipy.stats import unitary_group

from pgf_disentangle.model import (
    Determinantal,
    GroundSpace,
    IntensityMeasure,
    Kernel,
    Poisson,
    Superposition,
)

WORKED_K = np.array([[0.5, 0.25], [0.25, 0.5]])
WORKED_NU = np.array([1.0, 2.0])


def random_kernel(rng, n, top=0.95, space=None):
    space = space or GroundSpace.counting(n)
    U = unitary_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    lam = rng.uniform(0, top, n)
    K = U @ np.diag(lam) @ U.conj().T
    return Kernel(space, (K + K.conj().T) / 2)


def random_model(rng, n):
    space = GroundSpace.counting(n)
    k = random_kernel(rng, n, space=space)
    nu = IntensityMeasure(space, rng.uniform(0, 2, n))
    return nu, k, Superposition((Poisson(nu), Determinantal(k)))


@pytest.fixture
def space2():
    return GroundSpace.counting(2, ["a", "b"])


@pytest.fixture
def worked(space2):
    nu = IntensityMeasure(space2, WORKED_NU)
    k = Kernel(space2, WORKED_K)
    return nu, k, Superposition((Poisson(nu), Determinantal(k)))
