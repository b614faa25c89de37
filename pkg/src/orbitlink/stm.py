"""Reference trajectories on a node grid and per-segment transition matrices.

Segment ``i`` runs from node ``i`` to node ``i + 1``. An impulse attached to
node ``i`` is added to the Cartesian velocity at the start of segment ``i``.
``R[i]`` maps a state deviation at node ``i`` to node ``i + 1`` and ``M[i]``
maps an impulse deviation at node ``i`` to node ``i + 1``, both expressed in
the trajectory's coordinate set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import coords as cs
from .coords import CoordSet
from .dynamics import (DEFAULT_SETTINGS, AccelerationModel, PropagatorSettings,
                       propagate_many)
from .errors import DomainError, PropagationError

IMPULSE_STEP = 1e-6  # km/s
STATE_STEP = 1e-6


@dataclass(frozen=True)
class NodeGrid:
    """Node epochs plus a mask of nodes allowed to carry an impulse."""

    epochs: np.ndarray
    impulse_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        ep = np.asarray(self.epochs, dtype=float)
        if ep.ndim != 1 or ep.size < 2:
            raise DomainError("a node grid needs at least two epochs")
        if not np.all(np.diff(ep) > 0):
            raise DomainError("grid epochs must be strictly increasing")
        mask = self.impulse_mask
        if mask is None:
            mask = np.ones(ep.size, dtype=bool)
        mask = np.array(mask, dtype=bool)
        if mask.shape != ep.shape:
            raise DomainError("impulse mask must match the epoch count")
        mask[-1] = False  # the last node has no downstream segment
        object.__setattr__(self, "epochs", ep)
        object.__setattr__(self, "impulse_mask", mask)

    @classmethod
    def uniform(cls, t0: float, tf: float, n_segments: int) -> "NodeGrid":
        if n_segments < 1:
            raise DomainError("need at least one segment")
        if not tf > t0:
            raise DomainError("tf must be later than t0")
        return cls(np.linspace(t0, tf, n_segments + 1))

    @property
    def n_segments(self) -> int:
        return self.epochs.size - 1

    @property
    def t0(self) -> float:
        return float(self.epochs[0])

    @property
    def tf(self) -> float:
        return float(self.epochs[-1])


@dataclass(frozen=True)
class ReferenceTrajectory:
    grid: NodeGrid
    coords: CoordSet
    nodes: np.ndarray  # (N+1, 6) in `coords`, angles unwrapped along the arc
    cart_nodes: np.ndarray  # (N+1, 6)
    impulses: np.ndarray  # (N+1, 3) km/s, applied at each node


@dataclass(frozen=True)
class SegmentStms:
    R: np.ndarray  # (N, 6, 6)
    M: np.ndarray  # (N, 6, 3)


def _propagate_segment(model, states, dt, settings, segment):
    try:
        return propagate_many(model, states, dt, settings)
    except PropagationError as exc:
        exc.segment = segment
        raise


def build_reference(model: AccelerationModel, x0, grid: NodeGrid, coords: CoordSet,
                    impulses=None,
                    settings: PropagatorSettings = DEFAULT_SETTINGS) -> ReferenceTrajectory:
    """Nonlinear propagation through the grid, applying ``impulses`` at the nodes.

    ``x0`` is the Cartesian state at ``grid.epochs[0]``.
    """
    n = grid.n_segments
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (6,):
        raise DomainError("x0 must be a Cartesian 6-vector")
    if impulses is None:
        dv = np.zeros((n + 1, 3))
    else:
        dv = np.array(impulses, dtype=float)
        if dv.shape != (n + 1, 3) or not np.all(np.isfinite(dv)):
            raise DomainError("impulses must be a finite (N+1, 3) array")
        dv[~grid.impulse_mask] = 0.0
    cart = np.empty((n + 1, 6))
    cart[0] = x0
    dts = np.diff(grid.epochs)
    for i in range(n):
        start = cart[i].copy()
        start[3:] += dv[i]
        cart[i + 1] = _propagate_segment(model, start[None, :], dts[i], settings, i)[0]
    nodes = np.empty_like(cart)
    for i in range(n + 1):
        nodes[i] = cs.from_cart(coords, cart[i], model.mu)
        if i:
            nodes[i] = cs.unwrap_near(coords, nodes[i], nodes[i - 1])
    return ReferenceTrajectory(grid, coords, nodes, cart, dv)


def _segment_stm(model, ref: ReferenceTrajectory, i: int, settings) -> tuple[np.ndarray, np.ndarray]:
    coords = ref.coords
    mu = model.mu
    xi = ref.nodes[i]
    h = np.maximum(np.abs(xi), 1.0) * STATE_STEP
    starts = np.empty((18, 6))
    for j in range(6):
        for sgn, row in ((1.0, 2 * j), (-1.0, 2 * j + 1)):
            pert = xi.copy()
            pert[j] += sgn * h[j]
            try:
                starts[row] = cs.to_cart(coords, pert, mu)
            except DomainError as exc:
                raise DomainError(f"perturbed node {i} left the {coords.value} domain: {exc}") from exc
    starts[:12, 3:] += ref.impulses[i]
    base = ref.cart_nodes[i].copy()
    base[3:] += ref.impulses[i]
    for l in range(3):
        for sgn, row in ((1.0, 12 + 2 * l), (-1.0, 13 + 2 * l)):
            starts[row] = base
            starts[row, 3 + l] += sgn * IMPULSE_STEP
    dt = ref.grid.epochs[i + 1] - ref.grid.epochs[i]
    ends = _propagate_segment(model, starts, dt, settings, i)
    nxt = ref.nodes[i + 1]
    out = np.empty((18, 6))
    for row in range(18):
        try:
            out[row] = cs.difference(coords, cs.from_cart(coords, ends[row], mu), nxt)
        except DomainError as exc:
            raise DomainError(f"perturbed segment {i} left the {coords.value} domain: {exc}") from exc
    R = (out[0:12:2] - out[1:12:2]).T / (2 * h)
    M = (out[12::2] - out[13::2]).T / (2 * IMPULSE_STEP)
    return R, M


def compute_stms(model: AccelerationModel, ref: ReferenceTrajectory,
                 settings: PropagatorSettings = DEFAULT_SETTINGS) -> SegmentStms:
    """Central finite-difference STMs of every segment of ``ref``."""
    n = ref.grid.n_segments
    R = np.empty((n, 6, 6))
    M = np.empty((n, 6, 3))
    for i in range(n):
        R[i], M[i] = _segment_stm(model, ref, i, settings)
    if not (np.all(np.isfinite(R)) and np.all(np.isfinite(M))):
        raise DomainError("non-finite transition matrix entries")
    return SegmentStms(R, M)


def symplectic_form() -> np.ndarray:
    """Canonical 6x6 skew block matrix ``[[0, I], [-I, 0]]``."""
    J = np.zeros((6, 6))
    J[:3, 3:] = np.eye(3)
    J[3:, :3] = -np.eye(3)
    return J
