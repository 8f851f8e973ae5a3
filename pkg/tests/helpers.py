"""Shared builders used across the test modules (not a test file)."""

import numpy as np

from sdelab import ModelClass, ModelSpec, PointConstant, Segment, SegmentKind


def diag_diffusion(sigma, dim=1):
    """Constant diagonal diffusion map, shape (dim, dim)."""
    mat = float(sigma) * np.eye(dim)
    mat.setflags(write=False)
    return lambda t, seg: mat


def retarded_model(drift, sigma=0.0, tau=1.0, dim=1):
    """Hand-rolled retarded model around a drift closure (generic engine path)."""
    return ModelSpec(
        model_class=ModelClass.RETARDED,
        dim=dim,
        brownian_dim=dim,
        tau=tau,
        drift=drift,
        diffusion=diag_diffusion(sigma, dim),
        delay=PointConstant(tau),
    )


def random_step_segment(rng, tau=1.0, dim=1, max_jumps=5):
    """Cadlag segment with up to ``max_jumps`` interior jumps, values in [-2, 2]."""
    n_jumps = int(rng.integers(0, max_jumps + 1))
    interior = np.sort(rng.uniform(-tau + 0.02 * tau, -0.02 * tau, size=n_jumps))
    # collapse near-duplicates so the grid stays strictly increasing
    keep = np.concatenate([[True], np.diff(interior) > 1e-4 * tau]) if n_jumps else np.array([], dtype=bool)
    interior = interior[keep]
    grid = np.concatenate([[-tau], interior, [0.0]])
    values = rng.uniform(-2.0, 2.0, size=(grid.size, dim))
    flags = np.zeros(grid.size, dtype=bool)
    flags[1:-1] = True
    return Segment(SegmentKind.CADLAG_STEP, grid, values, flags)


def indicator_step(jump_at, tau=1.0):
    """Scalar indicator 1[theta >= jump_at] as a cadlag segment on [-tau, 0]."""
    grid = np.array([-tau, jump_at, 0.0])
    values = np.array([0.0, 1.0, 1.0])
    flags = np.array([False, True, False])
    return Segment(SegmentKind.CADLAG_STEP, grid, values, flags)
