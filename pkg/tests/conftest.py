from pathlib import Path

import numpy as np
import pytest

from hamspec import CoefficientField, HamiltonianSpec, load_spec

DATA = Path(__file__).parent / "data"
SYM2 = [[-1.0, 1.0], [1.0, -1.0]]


def scalar_spec(T=np.pi, blocks=None, hbar=-1.0, beta=1.0, Q=SYM2):
    """n = 1 spec with H11 = 1, H22 = H33 = H44 = -1 unless overridden."""
    values = {(1, 1): 1.0, (2, 2): -1.0, (3, 3): -1.0, (4, 4): -1.0}
    values.update(blocks or {})
    H = CoefficientField.from_constants(1, T, values)
    Hb = CoefficientField.from_constants(1, T, {(2, 2): hbar})
    return HamiltonianSpec(H=H, Hbar=Hb, Q=Q, beta=beta)


def corpus(name):
    return load_spec(DATA / f"{name}.json")


def closed_form_rho(m):
    return 1.0 + ((2 * m - 1) / 2) ** 2


@pytest.fixture(scope="session")
def constant_spec():
    return scalar_spec()


@pytest.fixture(scope="session")
def constant_records(constant_spec):
    from hamspec.spectrum import eigenvalue_1d
    return [eigenvalue_1d(constant_spec, m) for m in range(1, 11)]
