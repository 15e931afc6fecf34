from __future__ import annotations

import numpy as np
import pytest

from finslerlab.geometry import FinslerModel, PhasePoint

EUCLID2 = "0.5*(u1^2 + u2^2)"
POLAR = "0.5*(u1^2 + q1^2*u2^2)"
RANDERS = "(sqrt(u1^2 + u2^2) + 0.3*u1)^2"


@pytest.fixture(scope="session")
def euclid2():
    return FinslerModel(EUCLID2, 2)


@pytest.fixture(scope="session")
def polar():
    return FinslerModel(POLAR, 2)


@pytest.fixture(scope="session")
def randers():
    return FinslerModel(RANDERS, 2)


def point(q, u) -> PhasePoint:
    return PhasePoint(np.asarray(q, float), np.asarray(u, float))
