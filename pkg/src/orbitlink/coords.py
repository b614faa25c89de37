"""Cartesian, classical-element and modified-equinoctial coordinate sets.

All element vectors are plain ``(6,)`` arrays:

* CC  ``[x, y, z, vx, vy, vz]`` (km, km/s)
* COE ``[a, e, i, raan, argp, nu]`` (km, -, rad...)
* MEE ``[p, f, g, h, k, L]`` (km, -, -, -, -, rad)

Angles returned by the conversions are normalised to ``[0, 2*pi)``; use
:func:`difference` to subtract two states so that angle components wrap.
"""

from __future__ import annotations

import enum

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * np.pi


class CoordSet(enum.Enum):
    CC = "CC"
    COE = "COE"
    MEE = "MEE"


# Indices of components that are angles and must be wrapped when differenced.
ANGLE_COMPONENTS = {
    CoordSet.CC: (),
    CoordSet.COE: (3, 4, 5),
    CoordSet.MEE: (5,),
}

_E_MAX = 1.0 - 1e-9
_I_SINGULAR = 1e-10


def _wrap(angle):
    return np.mod(angle, TWO_PI)


def wrap_pi(angle):
    """Wrap to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - angle, TWO_PI)


def cart_to_coe(state, mu: float) -> np.ndarray:
    s = np.asarray(state, dtype=float)
    if s.shape != (6,) or not np.all(np.isfinite(s)):
        raise DomainError("state must be a finite 6-vector")
    r, v = s[:3], s[3:]
    rn = np.linalg.norm(r)
    if rn <= 0:
        raise DomainError("position norm must be positive")
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if hn <= 1e-12 * rn * max(np.linalg.norm(v), 1e-300):
        raise DomainError("rectilinear orbit: angular momentum vanishes")
    evec = np.cross(v, h) / mu - r / rn
    e = np.linalg.norm(evec)
    energy = 0.5 * v @ v - mu / rn
    if e >= _E_MAX or energy >= 0:
        raise DomainError(f"eccentricity e={e:.6g} outside elliptic range")
    a = -mu / (2 * energy)
    inc = np.arctan2(np.hypot(h[0], h[1]), h[2])
    if inc < _I_SINGULAR or np.pi - inc < _I_SINGULAR:
        raise DomainError(f"inclination i={inc:.3g} rad is singular for COE")
    hhat = h / hn
    node = np.array([-h[1], h[0], 0.0])
    nhat = node / np.linalg.norm(node)
    mhat = np.cross(hhat, nhat)  # in-plane, 90 deg ahead of the node
    raan = _wrap(np.arctan2(node[1], node[0]))
    u = np.arctan2(r @ mhat, r @ nhat)  # argument of latitude
    if e < 1e-14:
        # circular: perigee undefined, measure the anomaly from the node
        argp = 0.0
    else:
        argp = np.arctan2(evec @ mhat, evec @ nhat)
    nu = u - argp
    return np.array([a, e, inc, raan, _wrap(argp), _wrap(nu)])


def coe_to_cart(el, mu: float) -> np.ndarray:
    a, e, inc, raan, argp, nu = np.asarray(el, dtype=float)
    if not a > 0:
        raise DomainError(f"semimajor axis a={a} must be positive")
    if not 0 <= e < _E_MAX:
        raise DomainError(f"eccentricity e={e} outside elliptic range")
    p = a * (1 - e * e)
    rn = p / (1 + e * np.cos(nu))
    r_pf = rn * np.array([np.cos(nu), np.sin(nu), 0.0])
    v_pf = np.sqrt(mu / p) * np.array([-np.sin(nu), e + np.cos(nu), 0.0])
    cO, sO = np.cos(raan), np.sin(raan)
    cw, sw = np.cos(argp), np.sin(argp)
    ci, si = np.cos(inc), np.sin(inc)
    rot = np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])
    return np.concatenate((rot @ r_pf, rot @ v_pf))


def coe_to_mee(el) -> np.ndarray:
    a, e, inc, raan, argp, nu = np.asarray(el, dtype=float)
    if not np.pi - inc > _I_SINGULAR:
        raise DomainError(f"inclination i={inc} is retrograde-singular for MEE")
    if not 0 <= e < _E_MAX:
        raise DomainError(f"eccentricity e={e} outside elliptic range")
    lp = raan + argp
    t = np.tan(inc / 2)
    return np.array([
        a * (1 - e * e),
        e * np.cos(lp),
        e * np.sin(lp),
        t * np.cos(raan),
        t * np.sin(raan),
        _wrap(lp + nu),
    ])


def mee_to_coe(eq) -> np.ndarray:
    p, f, g, h, k, L = np.asarray(eq, dtype=float)
    if not p > 0:
        raise DomainError(f"semi-latus rectum p={p} must be positive")
    e = np.hypot(f, g)
    if e >= _E_MAX:
        raise DomainError(f"eccentricity e={e} outside elliptic range")
    tn = np.hypot(h, k)
    inc = 2 * np.arctan(tn)
    raan = np.arctan2(k, h)
    lp = np.arctan2(g, f)
    return np.array([
        p / (1 - e * e),
        e,
        inc,
        _wrap(raan),
        _wrap(lp - raan),
        _wrap(L - lp),
    ])


def cart_to_mee(state, mu: float) -> np.ndarray:
    """Direct Cartesian to equinoctial conversion (no COE singularities)."""
    s = np.asarray(state, dtype=float)
    if s.shape != (6,) or not np.all(np.isfinite(s)):
        raise DomainError("state must be a finite 6-vector")
    r, v = s[:3], s[3:]
    rn = np.linalg.norm(r)
    if rn <= 0:
        raise DomainError("position norm must be positive")
    hvec = np.cross(r, v)
    hn = np.linalg.norm(hvec)
    if hn <= 0:
        raise DomainError("rectilinear orbit: angular momentum vanishes")
    what = hvec / hn
    if what[2] <= -1 + 1e-15:
        raise DomainError("inclination is retrograde-singular for MEE")
    p = hn * hn / mu
    hh = -what[1] / (1 + what[2])
    kk = what[0] / (1 + what[2])
    # equinoctial frame
    s2 = 1 + hh * hh + kk * kk
    fhat = np.array([1 - kk * kk + hh * hh, 2 * kk * hh, -2 * kk]) / s2
    ghat = np.array([2 * kk * hh, 1 + kk * kk - hh * hh, 2 * hh]) / s2
    evec = np.cross(v, hvec) / mu - r / rn
    f = evec @ fhat
    g = evec @ ghat
    if np.hypot(f, g) >= _E_MAX or 0.5 * v @ v - mu / rn >= 0:
        raise DomainError("eccentricity outside elliptic range")
    L = np.arctan2(r @ ghat, r @ fhat)
    return np.array([p, f, g, hh, kk, _wrap(L)])


def mee_to_cart(eq, mu: float) -> np.ndarray:
    p, f, g, h, k, L = np.asarray(eq, dtype=float)
    if not p > 0:
        raise DomainError(f"semi-latus rectum p={p} must be positive")
    cL, sL = np.cos(L), np.sin(L)
    w = 1 + f * cL + g * sL
    if not w > 0:
        raise DomainError("1 + f cos L + g sin L must be positive")
    if np.hypot(f, g) >= _E_MAX:
        raise DomainError("eccentricity outside elliptic range")
    s2 = 1 + h * h + k * k
    alpha2 = h * h - k * k
    rn = p / w
    sqmp = np.sqrt(mu / p)
    r = rn / s2 * np.array([
        cL + alpha2 * cL + 2 * h * k * sL,
        sL - alpha2 * sL + 2 * h * k * cL,
        2 * (h * sL - k * cL),
    ])
    v = -sqmp / s2 * np.array([
        sL + alpha2 * sL - 2 * h * k * cL + g - 2 * f * h * k + alpha2 * g,
        -cL + alpha2 * cL + 2 * h * k * sL - f + 2 * g * h * k + alpha2 * f,
        -2 * (h * cL + k * sL + f * h + g * k),
    ])
    return np.concatenate((r, v))


def to_cart(coords: CoordSet, x, mu: float) -> np.ndarray:
    if coords is CoordSet.CC:
        return np.array(x, dtype=float)
    if coords is CoordSet.COE:
        return coe_to_cart(x, mu)
    return mee_to_cart(x, mu)


def from_cart(coords: CoordSet, state, mu: float) -> np.ndarray:
    if coords is CoordSet.CC:
        s = np.array(state, dtype=float)
        if not np.all(np.isfinite(s)):
            raise DomainError("state contains non-finite components")
        return s
    if coords is CoordSet.COE:
        return cart_to_coe(state, mu)
    return cart_to_mee(state, mu)


def convert(src: CoordSet, dst: CoordSet, x, mu: float) -> np.ndarray:
    if src is dst:
        return np.array(x, dtype=float)
    return from_cart(dst, to_cart(src, x, mu), mu)


def difference(coords: CoordSet, a, b) -> np.ndarray:
    """``a - b`` with angle components wrapped to ``(-pi, pi]``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    idx = list(ANGLE_COMPONENTS[coords])
    if idx:
        d[..., idx] = wrap_pi(d[..., idx])
    return d


def unwrap_near(coords: CoordSet, x, ref) -> np.ndarray:
    """Shift angle components of ``x`` by multiples of 2*pi to lie within pi of ``ref``."""
    x = np.array(x, dtype=float)
    idx = list(ANGLE_COMPONENTS[coords])
    if idx:
        x[idx] = ref[idx] + wrap_pi(x[idx] - ref[idx])
    return x


def fd_step(x) -> np.ndarray:
    """Per-component central-difference step, ``max(|x_j|, 1) * 1e-7``."""
    return np.maximum(np.abs(x), 1.0) * 1e-7


def jacobian(src: CoordSet, dst: CoordSet, x, mu: float) -> np.ndarray:
    """Central finite-difference Jacobian of the ``src -> dst`` conversion at ``x``."""
    x = np.asarray(x, dtype=float)
    if src is dst:
        return np.eye(6)
    y0 = convert(src, dst, x, mu)
    h = fd_step(x)
    jac = np.empty((6, 6))
    for j in range(6):
        dx = np.zeros(6)
        dx[j] = h[j]
        try:
            yp = convert(src, dst, x + dx, mu)
            ym = convert(src, dst, x - dx, mu)
        except DomainError as exc:
            raise DomainError(f"perturbed state left the valid domain: {exc}") from exc
        jac[:, j] = difference(dst, yp, y0) - difference(dst, ym, y0)
        jac[:, j] /= 2 * h[j]
    return jac


def transform_covariance(src: CoordSet, dst: CoordSet, x, cov, mu: float) -> np.ndarray:
    """Linear covariance transport ``J cov J^T``, symmetrised."""
    jac = jacobian(src, dst, x, mu)
    out = jac @ np.asarray(cov, dtype=float) @ jac.T
    return 0.5 * (out + out.T)


def rtn_frame(state) -> np.ndarray:
    """Rotation whose rows are the radial, transverse and normal unit vectors."""
    s = np.asarray(state, dtype=float)
    r, v = s[:3], s[3:]
    rn = np.linalg.norm(r)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    if rn <= 0 or hn <= 1e-12 * rn * max(np.linalg.norm(v), 1e-300):
        raise DomainError("rectilinear orbit: RTN frame undefined")
    rhat = r / rn
    nhat = h / hn
    that = np.cross(nhat, rhat)
    return np.vstack((rhat, that, nhat))
