"""Maneuver linkage between two orbit estimates as a sequence of SOCPs.

The unknowns at every node are a deviation from the current reference
trajectory and an impulse. Deviations are propagated with the segment STMs,
the impulse norms are bounded by slack variables (the relaxed equality is
lossless at the optimum) and the boundary deviations are pinned, bounded by a
confidence ellipsoid, or fixed to prescribed values.

Internally every deviation is nondimensionalised by a characteristic orbit
size and divided by ``eps = dv_unit / v_char`` where ``dv_unit`` is the
impulse scale, so the solver sees O(1) data regardless of maneuver size.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from . import coords as cs
from . import conic
from .conic import ConicProgram, SolverSettings, Status
from .coords import CoordSet
from .dynamics import (DEFAULT_SETTINGS, AccelerationModel, PropagatorSettings,
                       propagate, propagate_many)
from .errors import DomainError
from .stm import NodeGrid, ReferenceTrajectory, SegmentStms, build_reference, compute_stms

log = logging.getLogger(__name__)

DEFECT_FLOOR = 1e-3


# ---------------------------------------------------------------- inputs

@dataclass(frozen=True)
class GaussianState:
    """Mean Cartesian state (km, km/s) and 6x6 covariance at an epoch."""

    epoch: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.shape != (6,) or not np.all(np.isfinite(mean)):
            raise DomainError("mean must be a finite 6-vector")
        if cov.shape != (6, 6) or not np.all(np.isfinite(cov)):
            raise DomainError("cov must be a finite 6x6 matrix")
        scale = max(np.abs(cov).max(), 1e-300)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise DomainError("cov is not symmetric")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def cholesky(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("covariance is not positive definite") from exc

    def in_coords(self, coords: CoordSet, mu: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean and linearly transported covariance in ``coords``."""
        mean = cs.from_cart(coords, self.mean, mu)
        cov = cs.transform_covariance(CoordSet.CC, coords, self.mean, self.cov, mu)
        return mean, cov


@dataclass(frozen=True)
class Perfect:
    """Boundary means are taken as exact."""


@dataclass(frozen=True)
class MahalanobisBound:
    confidence: float

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise DomainError("confidence must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class FixedDeviation:
    """Boundary deviations ``[dx0; dxN]`` (optimization coordinates, physical units)."""

    delta: np.ndarray

    def __post_init__(self):
        d = np.array(self.delta, dtype=float).ravel()
        if d.shape != (12,) or not np.all(np.isfinite(d)):
            raise DomainError("delta must be a finite 12-vector")
        object.__setattr__(self, "delta", d)


BoundaryMode = Union[Perfect, MahalanobisBound, FixedDeviation]


@dataclass(frozen=True)
class Window:
    center_search: bool = True
    half_width: float = 0.0  # s


@dataclass(frozen=True)
class ManeuverProblemSpec:
    boundary0: GaussianState
    boundaryF: GaussianState
    model: AccelerationModel
    coords: CoordSet = CoordSet.CC
    n_segments: int = 50
    dv_max: float = math.inf  # km/s per node
    mode: BoundaryMode = Perfect()
    state_trust: Optional[np.ndarray] = None  # half-widths, optimization coordinates
    scp_eps: float = 1e-6
    scp_max_iter: int = 15
    window: Optional[Window] = None
    grid: Optional[NodeGrid] = None
    propagator: PropagatorSettings = DEFAULT_SETTINGS
    solver: SolverSettings = SolverSettings()

    def __post_init__(self):
        if self.n_segments < 1:
            raise DomainError("n_segments must be >= 1")
        if not self.dv_max > 0:
            raise DomainError("dv_max must be positive")
        if not self.boundaryF.epoch > self.boundary0.epoch:
            raise DomainError("final epoch must be later than the initial epoch")
        if self.state_trust is not None:
            tr = np.broadcast_to(np.asarray(self.state_trust, dtype=float), (6,)).copy()
            if not np.all(tr > 0):
                raise DomainError("state trust half-widths must be positive")
            object.__setattr__(self, "state_trust", tr)
        if self.scp_max_iter < 1:
            raise DomainError("scp_max_iter must be >= 1")

    @property
    def span(self) -> float:
        return self.boundaryF.epoch - self.boundary0.epoch


# ---------------------------------------------------------------- scaling

@dataclass(frozen=True)
class Scaling:
    """Deviation ``dx = unit * xi`` and impulse ``dv = dv_unit * eta``."""

    a_char: float
    t_char: float
    v_char: float
    dv_unit: float
    unit: np.ndarray  # (6,) physical size of one xi unit, per coordinate

    @classmethod
    def build(cls, coords: CoordSet, mean0_cart, mu: float, dv_unit: float) -> "Scaling":
        r = np.linalg.norm(mean0_cart[:3])
        energy = 0.5 * mean0_cart[3:] @ mean0_cart[3:] - mu / r
        a_char = -mu / (2 * energy) if energy < 0 else r
        t_char = math.sqrt(a_char ** 3 / mu)
        v_char = a_char / t_char
        eps = dv_unit / v_char
        if coords is CoordSet.CC:
            base = np.array([a_char] * 3 + [v_char] * 3)
        else:
            base = np.array([a_char, 1, 1, 1, 1, 1.0])
        return cls(a_char, t_char, v_char, dv_unit, base * eps)

    @property
    def nondim(self) -> np.ndarray:
        """Characteristic size of each coordinate (a_char, v_char or 1)."""
        return self.unit * (self.v_char / self.dv_unit)


def _estimate_dv_unit(spec: ManeuverProblemSpec, ref: ReferenceTrajectory) -> float:
    miss = spec.boundaryF.mean - ref.cart_nodes[-1]
    est = np.linalg.norm(miss[3:]) + np.linalg.norm(miss[:3]) / spec.span
    # one-sigma boundary spread in the same units, so deviated problems
    # (sigma points, ellipsoids) stay well scaled when the means agree
    for b in (spec.boundary0, spec.boundaryF):
        var = np.clip(np.diag(b.cov), 0.0, None)
        est = max(est, math.sqrt(var[3:].sum()) + math.sqrt(var[:3].sum()) / spec.span)
    est = max(est, 1e-7)
    if math.isfinite(spec.dv_max):
        est = min(est, spec.dv_max)
    return est


# ---------------------------------------------------------------- program

@dataclass(frozen=True)
class VariableIndex:
    n_nodes: int
    n_slack: int
    boundary_cones: bool

    @property
    def n_xi(self) -> int:
        return 6 * self.n_nodes

    def xi(self, i: int) -> slice:
        return slice(6 * i, 6 * i + 6)

    def u(self, i: int) -> int:
        return self.n_xi + 4 * i

    def eta(self, i: int) -> slice:
        s = self.n_xi + 4 * i + 1
        return slice(s, s + 3)

    @property
    def slack0(self) -> int:
        return self.n_xi + 4 * self.n_nodes

    def boundary(self, j: int) -> slice:
        s = self.slack0 + self.n_slack + 7 * j
        return slice(s, s + 7)

    @property
    def size(self) -> int:
        return self.slack0 + self.n_slack + (14 if self.boundary_cones else 0)

    def all_xi(self, x) -> np.ndarray:
        return x[:self.n_xi].reshape(self.n_nodes, 6)

    def all_u(self, x) -> np.ndarray:
        return x[self.n_xi:self.slack0:4]

    def all_eta(self, x) -> np.ndarray:
        return x[self.n_xi:self.slack0].reshape(self.n_nodes, 4)[:, 1:]


@dataclass
class BoundaryData:
    """Boundary means and covariances expressed in optimization coordinates."""

    mean0: np.ndarray
    meanF: np.ndarray
    cov0: np.ndarray
    covF: np.ndarray

    @classmethod
    def build(cls, spec: ManeuverProblemSpec) -> "BoundaryData":
        mu = spec.model.mu
        m0, c0 = spec.boundary0.in_coords(spec.coords, mu)
        mf, cf = spec.boundaryF.in_coords(spec.coords, mu)
        return cls(m0, mf, c0, cf)

    def chol(self, which: int) -> np.ndarray:
        cov = self.cov0 if which == 0 else self.covF
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise DomainError("boundary covariance is not positive definite "
                              "in optimization coordinates") from exc


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []
        self.b = []
        self.m = 0

    def add(self, rows, cols, vals):
        rows, cols, vals = np.broadcast_arrays(np.asarray(rows, dtype=int),
                                               np.asarray(cols, dtype=int),
                                               np.asarray(vals, dtype=float))
        self.r.append(rows.ravel())
        self.c.append(cols.ravel())
        self.v.append(vals.ravel())

    def new_rows(self, k, rhs):
        start = self.m
        self.m += k
        self.b.append(np.broadcast_to(np.asarray(rhs, dtype=float), (k,)).copy())
        return np.arange(start, start + k)

    def matrix(self, n):
        if not self.r:
            return sp.csr_matrix((0, n)), np.zeros(0)
        A = sp.csr_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                          shape=(self.m, n))
        return A, np.concatenate(self.b)


def build_program(spec: ManeuverProblemSpec, ref: ReferenceTrajectory, stms: SegmentStms,
                  scaling: Scaling, bnd: Optional[BoundaryData] = None,
                  mode: Optional[BoundaryMode] = None) -> tuple[ConicProgram, VariableIndex]:
    """Assemble the SOCP linearised about ``ref`` (impulses ``ref.impulses``)."""
    mode = spec.mode if mode is None else mode
    bnd = BoundaryData.build(spec) if bnd is None else bnd
    coords = spec.coords
    grid = ref.grid
    n_seg = grid.n_segments
    n_nodes = n_seg + 1
    D = scaling.unit
    Dinv = 1.0 / D
    allowed = np.flatnonzero(grid.impulse_mask)
    masked = np.flatnonzero(~grid.impulse_mask)
    bounded = math.isfinite(spec.dv_max)
    dv_bound = spec.dv_max / scaling.dv_unit if bounded else None
    n_slack = (7 * allowed.size if bounded else 0)
    if spec.state_trust is not None:
        n_slack += 12 * n_nodes
    boundary_cones = isinstance(mode, MahalanobisBound)
    idx = VariableIndex(n_nodes, n_slack, boundary_cones)
    n = idx.size
    T = _Triplets()

    # continuity: xi_{i+1} - Rh xi_i - Mh eta_i = -D^-1 M dv_ref_i
    Rh = Dinv[None, :, None] * stms.R * D[None, None, :]
    Mh = Dinv[None, :, None] * stms.M * scaling.dv_unit
    rhs = -np.einsum("ij,ikj->ik", ref.impulses[:-1], stms.M) * Dinv[None, :]
    rows = T.new_rows(6 * n_seg, rhs.ravel()).reshape(n_seg, 6)
    seg = np.arange(n_seg)
    # +I on xi_{i+1}
    T.add(rows, 6 * (seg[:, None] + 1) + np.arange(6)[None, :], np.ones((n_seg, 6)))
    # -Rh on xi_i
    T.add(np.repeat(rows[:, :, None], 6, axis=2),
          np.broadcast_to(6 * seg[:, None, None] + np.arange(6)[None, None, :], (n_seg, 6, 6)),
          -Rh)
    # -Mh on eta_i
    eta_cols = idx.n_xi + 4 * seg[:, None, None] + 1 + np.arange(3)[None, None, :]
    T.add(np.repeat(rows[:, :, None], 3, axis=2), np.broadcast_to(eta_cols, (n_seg, 6, 3)), -Mh)

    # nodes without an impulse
    if masked.size:
        rows = T.new_rows(3 * masked.size, 0.0)
        T.add(rows, (idx.n_xi + 4 * masked[:, None] + 1 + np.arange(3)[None, :]).ravel(), 1.0)

    slack = idx.slack0
    if bounded:
        k = allowed.size
        # u_i + s = B
        rows = T.new_rows(k, dv_bound)
        T.add(rows, idx.n_xi + 4 * allowed, 1.0)
        T.add(rows, slack + np.arange(k), 1.0)
        slack += k
        # +-eta_il + s = B
        for sgn in (1.0, -1.0):
            rows = T.new_rows(3 * k, dv_bound)
            cols = (idx.n_xi + 4 * allowed[:, None] + 1 + np.arange(3)[None, :]).ravel()
            T.add(rows, cols, sgn)
            T.add(rows, slack + np.arange(3 * k), 1.0)
            slack += 3 * k
    if spec.state_trust is not None:
        half = spec.state_trust * Dinv
        for sgn in (1.0, -1.0):
            rows = T.new_rows(6 * n_nodes, np.tile(half, n_nodes))
            T.add(rows, np.arange(6 * n_nodes), sgn)
            T.add(rows, slack + np.arange(6 * n_nodes), 1.0)
            slack += 6 * n_nodes

    # boundary conditions
    off0 = cs.difference(coords, ref.nodes[0], bnd.mean0)  # reference minus mean
    offN = cs.difference(coords, ref.nodes[-1], bnd.meanF)
    if isinstance(mode, (Perfect, FixedDeviation)):
        d0 = np.zeros(6) if isinstance(mode, Perfect) else mode.delta[:6]
        dN = np.zeros(6) if isinstance(mode, Perfect) else mode.delta[6:]
        rows = T.new_rows(6, (d0 - off0) * Dinv)
        T.add(rows, np.arange(6), 1.0)
        rows = T.new_rows(6, (dN - offN) * Dinv)
        T.add(rows, 6 * n_seg + np.arange(6), 1.0)
    elif isinstance(mode, MahalanobisBound):
        from .uncertainty import chi2_quantile
        radius = math.sqrt(chi2_quantile(mode.confidence, 6))
        for j, (node, off) in enumerate(((0, off0), (n_seg, offN))):
            L = bnd.chol(j)
            G = np.linalg.solve(L, np.diag(D))  # L^-1 D
            cone = idx.boundary(j)
            rows = T.new_rows(1, radius)
            T.add(rows, [cone.start], [1.0])
            # w - L^-1 D xi = L^-1 off
            rows = T.new_rows(6, np.linalg.solve(L, off))
            T.add(rows, cone.start + 1 + np.arange(6), 1.0)
            T.add(np.repeat(rows, 6), np.tile(6 * node + np.arange(6), 6), -G.ravel())
    else:
        raise DomainError(f"unknown boundary mode {mode!r}")

    A, b = T.matrix(n)
    c = np.zeros(n)
    c[idx.n_xi:idx.slack0:4] = 1.0
    blocks = [conic.free(idx.n_xi)] + [conic.soc(4)] * n_nodes
    if n_slack:
        blocks.append(conic.nonneg(n_slack))
    if boundary_cones:
        blocks += [conic.soc(7), conic.soc(7)]
    return ConicProgram(c, A, b, blocks), idx


# ---------------------------------------------------------------- solution

@dataclass
class ManeuverSolution:
    epochs: np.ndarray
    dv_eci: np.ndarray  # (N+1, 3) km/s
    dv_rtn: np.ndarray
    dv_mags: np.ndarray
    total_dv: float
    dx0: np.ndarray
    dxN: np.ndarray
    slack: np.ndarray  # cone heads u_i, km/s
    scp_iterations: int
    validation_miss: float  # Mahalanobis units w.r.t. the solution's terminal point
    validation_miss_km: float
    status: str
    nodes: np.ndarray  # linear prediction of the node states (optimization coordinates)
    coords: CoordSet = CoordSet.CC
    history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    solver_status: Optional[Status] = None
    failed_iteration: Optional[int] = None

    @property
    def optimal(self) -> bool:
        return self.status == "Optimal"

    def active(self, rel: float = 1e-2, floor: float = 1e-9) -> np.ndarray:
        """Impulses above ``rel`` times the peak and above ``floor`` km/s."""
        peak = self.dv_mags.max() if self.dv_mags.size else 0.0
        return self.dv_mags > max(rel * peak, floor)


@dataclass
class SharedLinearization:
    """First ballistic reference and its STMs, reusable across boundary modes."""

    ref: ReferenceTrajectory
    stms: SegmentStms
    scaling: Scaling
    bnd: BoundaryData
    elapsed: float = 0.0


def node_grid(spec: ManeuverProblemSpec) -> NodeGrid:
    if spec.grid is not None:
        return spec.grid
    if spec.window is not None and spec.window.center_search:
        return restrict_window(spec)
    return NodeGrid.uniform(spec.boundary0.epoch, spec.boundaryF.epoch, spec.n_segments)


def linearize(spec: ManeuverProblemSpec, grid: Optional[NodeGrid] = None) -> SharedLinearization:
    """Ballistic reference from the initial mean plus its STMs."""
    t = time.perf_counter()
    grid = node_grid(spec) if grid is None else grid
    if abs(grid.t0 - spec.boundary0.epoch) > 1e-9 or abs(grid.tf - spec.boundaryF.epoch) > 1e-9:
        raise DomainError("grid must span the boundary epochs")
    ref = build_reference(spec.model, spec.boundary0.mean, grid, spec.coords,
                          settings=spec.propagator)
    stms = compute_stms(spec.model, ref, spec.propagator)
    scaling = Scaling.build(spec.coords, spec.boundary0.mean, spec.model.mu,
                            _estimate_dv_unit(spec, ref))
    bnd = BoundaryData.build(spec)
    return SharedLinearization(ref, stms, scaling, bnd, time.perf_counter() - t)


def _unpack(spec, ref, idx, scaling, x):
    xi = idx.all_xi(x)
    dx = xi * scaling.unit[None, :]
    dv = idx.all_eta(x) * scaling.dv_unit
    dv[~ref.grid.impulse_mask] = 0.0
    u = idx.all_u(x) * scaling.dv_unit
    return dx, dv, u


def _mahalanobis(bnd: BoundaryData, d) -> float:
    """Distance in final-covariance units; NaN when that covariance is singular."""
    try:
        L = bnd.chol(1)
    except DomainError:
        return math.nan
    return float(np.linalg.norm(np.linalg.solve(L, d)))


def run_scp(spec: ManeuverProblemSpec, shared: Optional[SharedLinearization] = None,
            mode: Optional[BoundaryMode] = None) -> ManeuverSolution:
    """Successive convexification until the linear prediction matches the
    nonlinear propagation of the solved maneuver.

    Convergence after iteration ``k``: the infinity norm, in solver units
    (``scaling.unit``), of the difference between the predicted node states
    and those obtained by re-propagating the solved initial state and
    impulses falls below ``spec.scp_eps``. The unit is floored at
    ``DEFECT_FLOOR`` times the characteristic scale so that the test stays
    above integrator noise on tiny maneuvers. Impulses are shared by both,
    so the test is equivalent to comparing consecutive solution vectors
    once the next linearisation reproduces the same optimum. The re-propagated trajectory
    is the reference of iteration ``k + 1``.
    """
    mode = spec.mode if mode is None else mode
    t_start = time.perf_counter()
    if shared is None:
        shared = linearize(spec)
    ref, stms, scaling, bnd = shared.ref, shared.stms, shared.scaling, shared.bnd
    coords = spec.coords
    mu = spec.model.mu
    timings = {"linearize": shared.elapsed, "solve": [], "repropagate": []}
    defect_unit = np.maximum(scaling.unit, DEFECT_FLOOR * scaling.nondim)
    history = []
    sol_status = "NotConverged"
    result = None
    for k in range(1, spec.scp_max_iter + 1):
        if k > 1:
            t = time.perf_counter()
            stms = compute_stms(spec.model, ref, spec.propagator)
            timings["linearize"] += time.perf_counter() - t
        prog, idx = build_program(spec, ref, stms, scaling, bnd, mode)
        t = time.perf_counter()
        csol = conic.solve(prog, spec.solver)
        timings["solve"].append(time.perf_counter() - t)
        if not csol.optimal:
            log.info("SCP iteration %d: solver status %s", k, csol.status.value)
            return _failed(spec, ref, k, csol.status, history, timings)
        dx, dv, u = _unpack(spec, ref, idx, scaling, csol.x)
        nodes = ref.nodes + dx
        # nonlinear re-propagation of the solved maneuver
        t = time.perf_counter()
        x0_cart = cs.to_cart(coords, nodes[0], mu)
        new_ref = build_reference(spec.model, x0_cart, ref.grid, coords, dv, spec.propagator)
        timings["repropagate"].append(time.perf_counter() - t)
        node_gap = cs.difference(coords, new_ref.nodes, nodes) / defect_unit[None, :]
        defect = float(np.abs(node_gap).max())
        miss = np.linalg.norm(new_ref.cart_nodes[-1, :3] - cs.to_cart(coords, nodes[-1], mu)[:3])
        history.append({"iteration": k, "defect": defect, "total_dv": float(u.sum()),
                        "terminal_miss_km": float(miss), "solver_iterations": csol.iterations})
        log.debug("SCP iteration %d: defect %.3e total dv %.6e km/s", k, defect, u.sum())
        result = (ref, idx, csol, dx, dv, u, nodes, new_ref)
        if defect < spec.scp_eps:
            sol_status = "Optimal"
            break
        # next reference: nonlinear trajectory with the current impulses
        new_nodes = new_ref.nodes.copy()
        for i in range(new_nodes.shape[0]):
            new_nodes[i] = cs.unwrap_near(coords, new_nodes[i], nodes[i])
        ref = replace(new_ref, nodes=new_nodes)
    ref, idx, csol, dx, dv, u, nodes, new_ref = result
    mags = np.linalg.norm(dv, axis=1)
    rtn = np.array([cs.rtn_frame(ref.cart_nodes[i] if i == 0 else new_ref.cart_nodes[i]) @ dv[i]
                    for i in range(dv.shape[0])])
    terminal = cs.difference(coords, new_ref.nodes[-1], nodes[-1])
    miss_cart = cs.to_cart(coords, new_ref.nodes[-1], mu) - cs.to_cart(coords, nodes[-1], mu)
    dx0 = cs.difference(coords, nodes[0], bnd.mean0)
    dxN = cs.difference(coords, nodes[-1], bnd.meanF)
    timings["total"] = time.perf_counter() - t_start
    return ManeuverSolution(
        epochs=ref.grid.epochs.copy(), dv_eci=dv, dv_rtn=rtn, dv_mags=mags,
        total_dv=float(mags.sum()), dx0=dx0, dxN=dxN, slack=u,
        scp_iterations=len(history), validation_miss=_mahalanobis(bnd, terminal),
        validation_miss_km=float(np.linalg.norm(miss_cart[:3])), status=sol_status,
        nodes=nodes, coords=coords, history=history, timings=timings,
        solver_status=csol.status)


def _failed(spec, ref, k, status, history, timings) -> ManeuverSolution:
    n = ref.grid.epochs.size
    nan3 = np.full((n, 3), np.nan)
    return ManeuverSolution(
        epochs=ref.grid.epochs.copy(), dv_eci=nan3, dv_rtn=nan3.copy(),
        dv_mags=np.full(n, np.nan), total_dv=math.nan, dx0=np.full(6, np.nan),
        dxN=np.full(6, np.nan), slack=np.full(n, np.nan), scp_iterations=k,
        validation_miss=math.nan, validation_miss_km=math.nan, status=status.value,
        nodes=np.full((n, 6), np.nan), coords=spec.coords, history=history,
        timings=timings, solver_status=status, failed_iteration=k)


# ---------------------------------------------------------------- validation

def validate(spec: ManeuverProblemSpec, sol: ManeuverSolution) -> dict:
    """Forward-propagate the solved initial state with the solved impulses.

    The miss is reported against the solution's own terminal point (which is
    the final mean in perfect mode) and, separately, against the final mean.
    """
    mu = spec.model.mu
    coords = spec.coords
    bnd = BoundaryData.build(spec)
    x0 = cs.to_cart(coords, bnd.mean0 + sol.dx0, mu)
    state = x0.copy()
    for i in range(sol.epochs.size - 1):
        state[3:] += sol.dv_eci[i]
        state = propagate(spec.model, state, sol.epochs[i], sol.epochs[i + 1], spec.propagator)
    target = cs.to_cart(coords, cs.unwrap_near(coords, bnd.meanF + sol.dxN, bnd.meanF), mu)
    final_el = cs.from_cart(coords, state, mu)
    d_target = cs.difference(coords, final_el, bnd.meanF + sol.dxN)
    d_mean = cs.difference(coords, final_el, bnd.meanF)
    return {
        "terminal_miss_mahalanobis": _mahalanobis(bnd, d_target),
        "terminal_miss_km": float(np.linalg.norm(state[:3] - target[:3])),
        "mean_distance_mahalanobis": _mahalanobis(bnd, d_mean),
        "mean_distance_km": float(np.linalg.norm(state[:3] - spec.boundaryF.mean[:3])),
        "final_state": state,
    }


# ---------------------------------------------------------------- window search

@dataclass(frozen=True)
class EpochSearch:
    epochs: np.ndarray
    distance: np.ndarray  # km
    t_star: float
    flat: bool


def find_maneuver_epoch(spec: ManeuverProblemSpec, samples: int = 500) -> EpochSearch:
    """Closest approach between the forward-propagated initial mean and the
    backward-propagated final mean over a dense epoch grid."""
    t0, tf = spec.boundary0.epoch, spec.boundaryF.epoch
    epochs = np.linspace(t0, tf, samples + 1)
    model, settings = spec.model, spec.propagator
    fwd = np.empty((epochs.size, 6))
    bwd = np.empty((epochs.size, 6))
    fwd[0] = spec.boundary0.mean
    bwd[-1] = spec.boundaryF.mean
    for k in range(epochs.size - 1):
        fwd[k + 1] = propagate_many(model, fwd[k][None], epochs[k + 1] - epochs[k], settings)[0]
        j = epochs.size - 1 - k
        bwd[j - 1] = propagate_many(model, bwd[j][None], epochs[j - 1] - epochs[j], settings)[0]
    dist = np.linalg.norm(fwd[:, :3] - bwd[:, :3], axis=1)
    k = int(np.argmin(dist))
    spread = dist.max() - dist.min()
    flat = bool(dist.max() < 1e-6 or spread <= 1e-3 * dist.max())
    return EpochSearch(epochs, dist, float(epochs[k]), flat)


def restrict_window(spec: ManeuverProblemSpec, search: Optional[EpochSearch] = None) -> NodeGrid:
    """Node grid concentrated on a window around the estimated maneuver epoch.

    The window holds ``spec.n_segments`` uniform segments; ballistic legs from
    ``t0`` and to ``tf`` keep the boundary nodes at the estimate epochs and
    carry no impulse.
    """
    t0, tf = spec.boundary0.epoch, spec.boundaryF.epoch
    span = tf - t0
    if spec.window is None:
        raise DomainError("no window options set")
    hw = spec.window.half_width
    if not hw > 0:
        raise DomainError("window half width must be positive")
    full = NodeGrid.uniform(t0, tf, spec.n_segments)
    if hw >= span / 2:
        return full
    search = find_maneuver_epoch(spec) if search is None else search
    if search.flat:
        log.warning("maneuver epoch ill-defined (flat distance profile); using full window")
        return full
    ta = max(t0, search.t_star - hw)
    tb = min(tf, search.t_star + hw)
    if not tb > ta:
        raise DomainError("degenerate window")
    inner = np.linspace(ta, tb, spec.n_segments + 1)
    epochs = list(inner)
    mask = [True] * len(inner)
    if ta > t0:
        epochs.insert(0, t0)
        mask.insert(0, False)
    if tb < tf:
        epochs.append(tf)
        mask.append(False)
        mask[-2] = True
    return NodeGrid(np.array(epochs), np.array(mask))


def sigma_trust(spec: ManeuverProblemSpec, multiple: float = 10.0,
                floor: float = 1e-6) -> np.ndarray:
    """Trust half-widths of ``multiple`` boundary standard deviations
    (larger of the two boundaries), floored in nondimensional units."""
    bnd = BoundaryData.build(spec)
    sig = np.maximum(np.sqrt(np.diag(bnd.cov0)), np.sqrt(np.diag(bnd.covF)))
    scaling = Scaling.build(spec.coords, spec.boundary0.mean, spec.model.mu, 1.0)
    nd_unit = scaling.unit / (1.0 / scaling.v_char)  # nondimensional unit per coordinate
    return np.maximum(multiple * sig, floor * nd_unit)
