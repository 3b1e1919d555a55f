from __future__ import annotations

import numpy as np
import pytest

from echodyn.descriptor import SectorGrid, descriptor_sequence
from echodyn.dynamics import RbfConfig, train_dynamics
from echodyn.flow import FlowParams, flow_sequence
from echodyn.seqio import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def phantom():
    """Default seeded phantom: T=32, 128x128, contraction 0.3."""
    return generate_phantom(PhantomSpec())


@pytest.fixture(scope="session")
def phantom_flows(phantom):
    seq, _ = phantom
    return flow_sequence(seq, FlowParams())


@pytest.fixture(scope="session")
def phantom_grid():
    return SectorGrid()


@pytest.fixture(scope="session")
def phantom_descriptors(phantom, phantom_flows, phantom_grid):
    seq, _ = phantom
    return descriptor_sequence(seq, phantom_flows, phantom_grid, k=10)


@pytest.fixture(scope="session")
def phantom_model(phantom_descriptors):
    z, _, _ = phantom_descriptors
    return train_dynamics(z, RbfConfig(m_centers=16, seed=11))


def make_frames(t, h, w, fn):
    """Stack fn(xs, ys, t) over t frames; helper for synthetic sequences."""
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return np.stack([np.clip(fn(xs, ys, i), 0.0, 1.0) for i in range(t)])
