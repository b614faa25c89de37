"""Ballistic dynamics: acceleration models and adaptive propagation.

States are plain ``(6,)`` arrays ``[x, y, z, vx, vy, vz]`` in km and km/s,
expressed in a single non-rotating inertial frame. Epochs are seconds past
the scenario reference instant.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, PropagationError

MU_EARTH = 398600.4418  # km^3/s^2
J2_EARTH = 1.08263e-3
R_EARTH = 6378.137  # km


class ModelKind(enum.Enum):
    TWO_BODY = "two_body"
    TWO_BODY_J2 = "two_body_j2"


@dataclass(frozen=True)
class AccelerationModel:
    """Natural-motion force model.

    Only the central term and the J2 oblateness term are modelled. Both are
    autonomous, which lets callers batch propagations of equal duration.
    """

    kind: ModelKind = ModelKind.TWO_BODY
    mu: float = MU_EARTH
    j2: float = J2_EARTH
    body_radius: float = R_EARTH

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("mu must be positive")
        if self.kind is ModelKind.TWO_BODY_J2 and not self.body_radius > 0:
            raise DomainError("body_radius must be positive for the J2 model")

    @classmethod
    def two_body(cls, mu: float = MU_EARTH) -> "AccelerationModel":
        return cls(ModelKind.TWO_BODY, mu=mu)

    @classmethod
    def two_body_j2(cls, mu: float = MU_EARTH, j2: float = J2_EARTH,
                    body_radius: float = R_EARTH) -> "AccelerationModel":
        return cls(ModelKind.TWO_BODY_J2, mu=mu, j2=j2, body_radius=body_radius)

    @property
    def autonomous(self) -> bool:
        return True


@dataclass(frozen=True)
class PropagatorSettings:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    max_step: float = np.inf

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            val = getattr(self, name)
            if not 0 < val <= 1e-3:
                raise DomainError(f"{name} must lie in (0, 1e-3], got {val}")


DEFAULT_SETTINGS = PropagatorSettings()


def _accel_batch(model: AccelerationModel, r: np.ndarray) -> np.ndarray:
    # r has shape (3, k)
    r2 = np.einsum("ik,ik->k", r, r)
    rn = np.sqrt(r2)
    a = -model.mu * r / (r2 * rn)
    if model.kind is ModelKind.TWO_BODY_J2 and model.j2 != 0.0:
        z2 = r[2] ** 2 / r2
        fac = -1.5 * model.j2 * model.mu * model.body_radius ** 2 / (r2 * r2 * rn)
        a = a + fac * np.vstack((
            r[0] * (1.0 - 5.0 * z2),
            r[1] * (1.0 - 5.0 * z2),
            r[2] * (3.0 - 5.0 * z2),
        ))
    return a


def acceleration(model: AccelerationModel, state, t: float = 0.0) -> np.ndarray:
    """Total natural acceleration (km/s^2) at a Cartesian state."""
    s = np.asarray(state, dtype=float)
    if s.shape != (6,) or not np.all(np.isfinite(s)):
        raise DomainError("state must be a finite 6-vector")
    if not np.linalg.norm(s[:3]) > 0:
        raise DomainError("position norm must be positive")
    return _accel_batch(model, s[:3].reshape(3, 1))[:, 0]


def specific_energy(model: AccelerationModel, state) -> float:
    """Specific orbital energy, including the J2 potential for J2 models."""
    s = np.asarray(state, dtype=float)
    r = np.linalg.norm(s[:3])
    energy = 0.5 * s[3:] @ s[3:] - model.mu / r
    if model.kind is ModelKind.TWO_BODY_J2:
        sin2 = (s[2] / r) ** 2
        energy += model.j2 * model.mu * model.body_radius ** 2 / (2 * r ** 3) * (3 * sin2 - 1)
    return float(energy)


def _check_states(states: np.ndarray) -> None:
    if not np.all(np.isfinite(states)):
        raise DomainError("state contains non-finite components")
    if np.any(np.linalg.norm(states[..., :3], axis=-1) <= 0):
        raise DomainError("position norm must be positive")


def propagate_many(model: AccelerationModel, states, dt: float,
                   settings: PropagatorSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Propagate ``k`` states over the same duration ``dt`` in one integration.

    ``states`` has shape ``(k, 6)``; the result has the same shape. ``dt`` may be
    negative. Valid because the supported force models are autonomous.
    """
    y0 = np.array(states, dtype=float, ndmin=2)
    _check_states(y0)
    if dt == 0.0:
        return y0.copy()
    k = y0.shape[0]

    def rhs(_t, y):
        y = y.reshape(k, 6)
        out = np.empty_like(y)
        out[:, :3] = y[:, 3:]
        out[:, 3:] = _accel_batch(model, y[:, :3].T).T
        return out.ravel()

    sol = solve_ivp(rhs, (0.0, dt), y0.ravel(), method="DOP853",
                    rtol=settings.rel_tol, atol=settings.abs_tol,
                    max_step=settings.max_step)
    if sol.status != 0:
        last = sol.y[:, -1].reshape(k, 6) if sol.y.size else y0
        raise PropagationError(f"propagation failed: {sol.message}", last_state=last,
                               last_time=float(sol.t[-1]) if sol.t.size else 0.0)
    return sol.y[:, -1].reshape(k, 6)


def propagate(model: AccelerationModel, s0, t0: float, tf: float,
              settings: PropagatorSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Propagate a Cartesian state from ``t0`` to ``tf`` (either direction)."""
    s0 = np.asarray(s0, dtype=float)
    if s0.shape != (6,):
        raise DomainError("state must be a 6-vector")
    if not (np.isfinite(t0) and np.isfinite(tf)):
        raise DomainError("epochs must be finite")
    if tf == t0:
        _check_states(s0)
        return s0.copy()
    return propagate_many(model, s0[None, :], tf - t0, settings)[0]


def propagate_grid(model: AccelerationModel, s0, grid,
                   settings: PropagatorSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """States at every epoch of a strictly monotone grid, starting from ``grid[0]``.

    Node ``k+1`` is propagated from node ``k``, i.e. the output equals a chain of
    sequential :func:`propagate` calls.
    """
    grid = np.asarray(grid, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DomainError("grid must be a non-empty 1-D sequence")
    _check_states(s0)
    steps = np.diff(grid)
    if grid.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise DomainError("grid must be strictly monotone")
    out = np.empty((grid.size, 6))
    out[0] = s0
    for k, dt in enumerate(steps):
        out[k + 1] = propagate_many(model, out[k][None, :], dt, settings)[0]
    return out
