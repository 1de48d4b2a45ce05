"""Shared fixtures and helpers for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from vitaldyn.core import InfusionProtocol, StateSpaceParams, VitalSignSeries


def linear_params(A, B, C, Q, R, mu1, Sigma1, dt=15.0) -> StateSpaceParams:
    """Wrap raw linear-Gaussian matrices (identity observation warping)."""
    return StateSpaceParams(A=A, B=B, C=C, Q=Q, R=R, mu1=mu1,
                            Sigma1=Sigma1, eta=None, dt=dt)


def series_from_arrays(ys, mask=None, dt=15.0, names=None) -> VitalSignSeries:
    ys = np.asarray(ys, dtype=float)
    if mask is None:
        mask = np.ones_like(ys, dtype=bool)
    if names is None:
        names = tuple(f"ch{j}" for j in range(ys.shape[1]))
    return VitalSignSeries(dt=dt, channel_names=tuple(names),
                           values=ys, mask=np.asarray(mask, dtype=bool))


def protocol_from_array(us, dt=15.0) -> InfusionProtocol:
    us = np.asarray(us, dtype=float)
    if us.ndim == 1:
        us = us[:, None]
    return InfusionProtocol(dt=dt, rates=us)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
