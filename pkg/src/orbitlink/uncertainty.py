"""Detection and estimation of maneuvers under boundary-state uncertainty.

Detection sweeps the confidence level of the boundary ellipsoids and records
the smallest total impulse compatible with each level. Estimation fixes the
boundary deviations at sigma points of the joint 12-dimensional boundary
distribution, solves one problem per point and condenses the results into
four moments, a Pearson fit and a per-node profile.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np
from scipy import integrate, optimize, stats

from .errors import DomainError, OrbitLinkError
from .problem import (BoundaryData, FixedDeviation, MahalanobisBound, ManeuverProblemSpec,
                      ManeuverSolution, SharedLinearization, linearize, run_scp)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- chi-square

def chi2_cdf_even(x: float, dof: int) -> float:
    """Closed-form chi-square CDF for an even number of degrees of freedom."""
    if dof < 2 or dof % 2:
        raise DomainError("dof must be a positive even integer")
    if x <= 0:
        return 0.0
    half = 0.5 * x
    term = 1.0
    total = 1.0
    for m in range(1, dof // 2):
        term *= half / m
        total += term
    return float(-math.expm1(-half) - math.exp(-half) * (total - 1.0))


def chi2_quantile(confidence: float, dof: int = 6) -> float:
    """``q`` with ``chi2_cdf_even(q, dof) == confidence``, by bisection."""
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence {confidence} must lie strictly inside (0, 1)")
    chi2_cdf_even(1.0, dof)  # validates dof
    lo, hi = 0.0, float(dof)
    while chi2_cdf_even(hi, dof) < confidence:
        lo, hi = hi, 2.0 * hi
    while hi - lo > 1e-13 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_cdf_even(mid, dof) < confidence:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- detection

@dataclass(frozen=True)
class CurvePoint:
    confidence: float
    total_dv: float  # km/s, NaN on failure
    status: str
    iterations: int


@dataclass(frozen=True)
class DetectionCurve:
    points: tuple

    def __post_init__(self):
        conf = [p.confidence for p in self.points]
        if any(b <= a for a, b in zip(conf, conf[1:])):
            raise DomainError("confidences must be strictly increasing")

    @property
    def confidences(self) -> np.ndarray:
        return np.array([p.confidence for p in self.points])

    @property
    def total_dv(self) -> np.ndarray:
        return np.array([p.total_dv for p in self.points])

    def at(self, confidence: float) -> CurvePoint:
        for p in self.points:
            if abs(p.confidence - confidence) <= 1e-12:
                return p
        raise DomainError(f"confidence {confidence} not present in the curve")


def mahalanobis_sweep(spec: ManeuverProblemSpec, confidences,
                      shared: Optional[SharedLinearization] = None) -> DetectionCurve:
    """Minimum total impulse for each confidence level (``spec.mode`` ignored).

    The ballistic reference and its STMs are built once and shared.
    """
    conf = [float(c) for c in confidences]
    if not conf:
        raise DomainError("need at least one confidence level")
    for c in conf:
        MahalanobisBound(c)
    if any(b <= a for a, b in zip(conf, conf[1:])):
        raise DomainError("confidences must be strictly increasing")
    shared = linearize(spec) if shared is None else shared
    points = []
    for c in conf:
        try:
            sol = run_scp(spec, shared, MahalanobisBound(c))
            dv = sol.total_dv if sol.optimal else math.nan
            points.append(CurvePoint(c, dv, sol.status, sol.scp_iterations))
        except OrbitLinkError as exc:
            log.warning("confidence %.4g failed: %s", c, exc)
            points.append(CurvePoint(c, math.nan, f"Error: {exc}", 0))
    return DetectionCurve(tuple(points))


@dataclass(frozen=True)
class Detection:
    maneuver_flag: bool
    margin: float  # km/s, positive when flagged
    total_dv: float


def detect(curve: DetectionCurve, confidence: float, threshold_dv: float) -> Detection:
    """Flag a maneuver when the minimum impulse at ``confidence`` strictly
    exceeds ``threshold_dv`` (km/s)."""
    point = curve.at(confidence)
    dv = point.total_dv
    if not math.isfinite(dv):
        return Detection(False, math.nan, dv)
    return Detection(dv > threshold_dv, dv - threshold_dv, dv)


# ---------------------------------------------------------------- sigma points

class Scheme(enum.Enum):
    CUT4 = "cut4"
    UNSCENTED = "unscented"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class SigmaPointSet:
    scheme: Scheme
    points: np.ndarray  # (count, dim), standard-normal space
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def count(self) -> int:
        return self.points.shape[0]


def cut4_points(n: int) -> SigmaPointSet:
    """Fourth-order conjugate unscented set: centre, principal axes and the
    ``2**n`` conjugate (hypercube-vertex) directions."""
    if n < 1:
        raise DomainError("dimension must be >= 1")
    if n > 20:
        raise DomainError("dimension too large for 2**n conjugate points")
    # r1 is the free parameter; the rest solves the moment equations
    #   2 w1 r1^2 + 2^n w2 r2^2 = 1,  2 w1 r1^4 = 2,  2^n w2 r2^4 = 1
    r1 = math.sqrt(n + 2.0)
    r2 = math.sqrt((n + 2.0) / n)
    w0 = 2.0 / (n + 2.0)
    w1 = 1.0 / (n + 2.0) ** 2
    w2 = n * n / (2.0 ** n * (n + 2.0) ** 2)
    eye = np.eye(n)
    axes = np.vstack((r1 * eye, -r1 * eye))
    corners = r2 * np.array(list(product((1.0, -1.0), repeat=n)))
    pts = np.vstack((np.zeros((1, n)), axes, corners))
    wts = np.concatenate(([w0], np.full(2 * n, w1), np.full(2 ** n, w2)))
    return SigmaPointSet(Scheme.CUT4, pts, wts)


def unscented_points(n: int) -> SigmaPointSet:
    if n < 1:
        raise DomainError("dimension must be >= 1")
    r = math.sqrt(n)
    eye = np.eye(n)
    pts = np.vstack((np.zeros((1, n)), r * eye, -r * eye))
    wts = np.concatenate(([0.0], np.full(2 * n, 1.0 / (2 * n))))
    return SigmaPointSet(Scheme.UNSCENTED, pts, wts)


def monte_carlo_points(n: int, count: int, seed: int) -> SigmaPointSet:
    if n < 1 or count < 1:
        raise DomainError("dimension and sample count must be >= 1")
    rng = np.random.default_rng(seed)
    return SigmaPointSet(Scheme.MONTE_CARLO, rng.standard_normal((count, n)),
                         np.full(count, 1.0 / count))


def sigma_points(scheme: Scheme, n: int = 12, count: int = 1000, seed: int = 0) -> SigmaPointSet:
    if scheme is Scheme.CUT4:
        return cut4_points(n)
    if scheme is Scheme.UNSCENTED:
        return unscented_points(n)
    return monte_carlo_points(n, count, seed)


# ---------------------------------------------------------------- moments

@dataclass(frozen=True)
class MomentSet:
    mean: float
    variance: float
    skewness: float
    kurtosis: float

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError("variance must be non-negative")

    @classmethod
    def from_samples(cls, values, weights) -> "MomentSet":
        """Weighted moments; weights are renormalised to sum to one."""
        x = np.asarray(values, dtype=float)
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        mean = float(w @ x)
        d = x - mean
        var = float(w @ d ** 2)
        scale = max(abs(mean), float(np.abs(x).max()) if x.size else 0.0, 1e-300)
        if var <= (1e-14 * scale) ** 2:
            return cls(mean, max(var, 0.0), 0.0, math.nan)
        return cls(mean, var, float(w @ d ** 3) / var ** 1.5, float(w @ d ** 4) / var ** 2)

    @property
    def degenerate(self) -> bool:
        return not math.isfinite(self.kurtosis)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


# ---------------------------------------------------------------- Pearson

class PearsonFamily(enum.Enum):
    NORMAL = "Normal"
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"
    VI = "VI"
    VII = "VII"


NORMAL_SKEW_TOL = 1e-3
NORMAL_KURT_TOL = 1e-2
_DEGENERATE_TOL = 1e-8


def pearson_kappa(skewness: float, kurtosis: float) -> float:
    b1, b2 = skewness ** 2, kurtosis
    den = 4 * (4 * b2 - 3 * b1) * (2 * b2 - 3 * b1 - 6)
    return math.inf if den == 0 else b1 * (b2 + 3) ** 2 / den


def is_near_normal(m: MomentSet, skew_tol: float = 0.05, kurt_tol: float = 0.1) -> bool:
    """Looser practical check than the family boundary used by :func:`pearson_fit`."""
    return abs(m.skewness) < skew_tol and abs(m.kurtosis - 3) < kurt_tol


class _TypeIV:
    """Pearson IV density ``exp(log_p(x - mean)) / norm`` on the real line."""

    def __init__(self, mean, a, b0, b1, b2):
        self.mean, self.a, self.b0, self.b1, self.b2 = mean, a, b0, b1, b2
        self.sqd = math.sqrt(4 * b0 * b2 - b1 * b1)
        self.scale = math.sqrt(b0)
        self.norm = 1.0
        self.norm = integrate.quad(self._raw, -np.inf, np.inf, limit=400,
                                   epsabs=0, epsrel=1e-12)[0]

    def _log_raw(self, x):
        a, b0, b1, b2 = self.a, self.b0, self.b1, self.b2
        q = b0 + b1 * x + b2 * x * x
        return (-np.log(q / b0) / (2 * b2)
                - (a - b1 / (2 * b2)) * (2 / self.sqd) * np.arctan((2 * b2 * x + b1) / self.sqd))

    def _raw(self, x):
        return float(np.exp(self._log_raw(x)))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(self._log_raw(x - self.mean)) / self.norm

    def cdf(self, x):
        def one(v):
            return integrate.quad(lambda t: self._raw(t), -np.inf, v - self.mean,
                                  limit=400, epsabs=0, epsrel=1e-10)[0] / self.norm
        return np.vectorize(one, otypes=[float])(x)


@dataclass
class PearsonFit:
    family: PearsonFamily
    parameters: dict
    support: tuple
    moments: MomentSet
    _dist: object = field(repr=False, default=None)
    _sign: float = field(repr=False, default=1.0)
    _shift: float = field(repr=False, default=0.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if isinstance(self._dist, _TypeIV):
            return self._dist.pdf(x)
        return self._dist.pdf(self._sign * (x - self._shift))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if isinstance(self._dist, _TypeIV):
            return self._dist.cdf(x)
        y = self._sign * (x - self._shift)
        return self._dist.cdf(y) if self._sign > 0 else self._dist.sf(y)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "parameters": dict(self.parameters),
                "support": [_json_float(s) for s in self.support]}


def _json_float(v):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def pearson_fit(m: MomentSet) -> PearsonFit:
    """Member of the Pearson system with the given first four moments."""
    if m.variance <= 0 or m.degenerate:
        raise DomainError("Pearson fit needs a positive variance")
    s, k = m.skewness, m.kurtosis
    if not k > s * s + 1:
        raise DomainError(f"kurtosis {k:.6g} must exceed skewness^2 + 1 = {s * s + 1:.6g}")
    mean, var, sd = m.mean, m.variance, m.std
    b1, b2 = s * s, k
    sign = 1.0 if s >= 0 else -1.0

    if abs(s) < NORMAL_SKEW_TOL and abs(k - 3) < NORMAL_KURT_TOL:
        return PearsonFit(PearsonFamily.NORMAL, {"mu": mean, "sigma": sd},
                          (-math.inf, math.inf), m, stats.norm(mean, sd))
    if s == 0.0:
        if k < 3:
            alpha = (6.0 / (3.0 - k) - 3.0) / 2.0
            c = sd * math.sqrt(2 * alpha + 1)
            return PearsonFit(PearsonFamily.II, {"alpha": alpha, "half_width": c},
                              (mean - c, mean + c), m,
                              stats.beta(alpha, alpha, loc=mean - c, scale=2 * c))
        nu = 4.0 + 6.0 / (k - 3.0)
        scale = sd * math.sqrt((nu - 2.0) / nu)
        return PearsonFit(PearsonFamily.VII, {"nu": nu, "scale": scale},
                          (-math.inf, math.inf), m, stats.t(nu, loc=mean, scale=scale))

    A = 10 * b2 - 12 * b1 - 18
    if A == 0:
        raise DomainError("moment set lies on the degenerate line 10k = 12s^2 + 18")
    b0 = (4 * b2 - 3 * b1) / A * var
    a = s * sd * (b2 + 3) / A
    c1 = a
    c2 = (2 * b2 - 3 * b1 - 6) / A

    if abs(2 * b2 - 3 * b1 - 6) < _DEGENERATE_TOL * (b2 + 3):
        shape = 4.0 / b1
        theta = sd * abs(s) / 2.0
        shift = mean - sign * shape * theta
        support = (shift, math.inf) if sign > 0 else (-math.inf, shift)
        return PearsonFit(PearsonFamily.III, {"shape": shape, "scale": theta, "location": shift},
                          support, m, stats.gamma(shape, scale=theta), sign, shift)

    kappa = pearson_kappa(s, k)
    if abs(kappa - 1.0) < _DEGENERATE_TOL:
        # skewness of the inverse gamma: 4 sqrt(alpha - 2) / (alpha - 3)
        alpha = optimize.brentq(lambda al: 4 * math.sqrt(al - 2) / (al - 3) - abs(s),
                                4.0 + 1e-12, 1e12, xtol=1e-14, rtol=1e-15)
        beta = sd * (alpha - 1) * math.sqrt(alpha - 2)
        shift = mean - sign * beta / (alpha - 1)
        support = (shift, math.inf) if sign > 0 else (-math.inf, shift)
        return PearsonFit(PearsonFamily.V, {"alpha": alpha, "beta": beta, "location": shift},
                          support, m, stats.invgamma(alpha, scale=beta), sign, shift)

    if 0 < kappa < 1:
        dist = _TypeIV(mean, a, b0, c1, c2)
        params = {"a": a, "b0": b0, "b1": c1, "b2": c2, "norm": dist.norm}
        return PearsonFit(PearsonFamily.IV, params, (-math.inf, math.inf), m, dist)

    disc = c1 * c1 - 4 * c2 * b0
    if disc < 0:
        raise DomainError("Pearson quadratic has no real roots outside type IV")
    sq = math.sqrt(disc)
    r1, r2 = sorted(((-c1 - sq) / (2 * c2), (-c1 + sq) / (2 * c2)))
    m1 = (a + r1) / (c2 * (r2 - r1))
    m2 = -(a + r2) / (c2 * (r2 - r1))
    if kappa < 0:
        if not (m1 > -1 and m2 > -1):
            raise DomainError("type I exponents out of range")
        lo, hi = mean + r1, mean + r2
        return PearsonFit(PearsonFamily.I, {"p": m1 + 1, "q": m2 + 1, "lower": lo, "upper": hi},
                          (lo, hi), m, stats.beta(m1 + 1, m2 + 1, loc=lo, scale=hi - lo))

    # type VI: beta prime on the half line beyond one root
    width = r2 - r1
    if m2 + 1 > 0 and -m1 - m2 - 1 > 0 and sign > 0:
        alpha, beta, shift, sgn = m2 + 1, -m1 - m2 - 1, mean + r2, 1.0
    elif m1 + 1 > 0 and -m1 - m2 - 1 > 0:
        alpha, beta, shift, sgn = m1 + 1, -m1 - m2 - 1, mean + r1, -1.0
    else:
        raise DomainError("type VI exponents out of range")
    support = (shift, math.inf) if sgn > 0 else (-math.inf, shift)
    return PearsonFit(PearsonFamily.VI, {"alpha": alpha, "beta": beta, "scale": width,
                                         "location": shift},
                      support, m, stats.betaprime(alpha, beta, scale=width), sgn, shift)


def fit_moments_numeric(fit: PearsonFit) -> MomentSet:
    """Mean, variance, skewness and kurtosis of ``fit.pdf`` by quadrature."""
    lo, hi = fit.support

    def mom(f):
        return integrate.quad(lambda x: f(x) * float(fit.pdf(x)), lo, hi, limit=400,
                              epsabs=0, epsrel=1e-12)[0]

    total = mom(lambda x: 1.0)
    mean = mom(lambda x: x) / total
    c = [mom(lambda x, j=j: (x - mean) ** j) / total for j in (2, 3, 4)]
    return MomentSet(mean, c[0], c[1] / c[0] ** 1.5, c[2] / c[0] ** 2)


def pdf_grid(fit: PearsonFit, points: int = 201, half_width: float = 5.0) -> np.ndarray:
    """Sample grid over ``mean +- half_width * sigma``.

    Where the support cuts the range, the grid stops half a step inside it
    (densities may be unbounded at finite support ends).
    """
    m = fit.moments
    lo, hi = m.mean - half_width * m.std, m.mean + half_width * m.std
    cut_lo, cut_hi = fit.support[0] > lo, fit.support[1] < hi
    lo, hi = max(lo, fit.support[0]), min(hi, fit.support[1])
    step = (hi - lo) / (points - 1 + 0.5 * (cut_lo + cut_hi))
    return lo + 0.5 * step * cut_lo + step * np.arange(points)


# ---------------------------------------------------------------- estimation

@dataclass(frozen=True)
class PointResult:
    index: int
    weight: float
    total_dv: float  # km/s
    status: str


@dataclass
class ManeuverStatistics:
    scheme: Scheme
    point_count: int
    moments: MomentSet
    fit: Optional[PearsonFit]
    fit_note: str
    epochs: np.ndarray
    per_node_mean: np.ndarray  # (N+1, 3) RTN km/s
    per_node_3sigma: np.ndarray
    per_point_results: list
    failures: int
    unreliable: bool
    timings: dict = field(default_factory=dict)

    def recompute_moments(self) -> MomentSet:
        ok = [p for p in self.per_point_results if p.status == "Optimal"]
        return MomentSet.from_samples([p.total_dv for p in ok], [p.weight for p in ok])


UNRELIABLE_FRACTION = 0.05


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor, or a symmetric square root for singular covariances."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        if w.min() < -1e-12 * max(abs(w).max(), 1e-300):
            raise DomainError("boundary covariance is not positive semidefinite") from None
        return v * np.sqrt(np.clip(w, 0, None))


def boundary_deviations(spec: ManeuverProblemSpec, sigma: SigmaPointSet,
                        bnd: Optional[BoundaryData] = None) -> np.ndarray:
    """Map standard-normal points to ``[dx0; dxN]`` in optimization coordinates."""
    if sigma.dim != 12:
        raise DomainError("estimation needs a 12-dimensional point set")
    bnd = BoundaryData.build(spec) if bnd is None else bnd
    L0, LF = _psd_factor(bnd.cov0), _psd_factor(bnd.covF)
    return np.hstack((sigma.points[:, :6] @ L0.T, sigma.points[:, 6:] @ LF.T))


def estimate(spec: ManeuverProblemSpec, sigma: SigmaPointSet, threads: int = 1,
             shared: Optional[SharedLinearization] = None) -> ManeuverStatistics:
    """One fixed-deviation solve per sigma point over a shared linearisation.

    Results are reduced in point order regardless of scheduling.
    """
    t_start = time.perf_counter()
    shared = linearize(spec) if shared is None else shared
    deltas = boundary_deviations(spec, sigma, shared.bnd)

    def solve_point(c):
        try:
            return run_scp(spec, shared, FixedDeviation(deltas[c]))
        except OrbitLinkError as exc:
            log.warning("sigma point %d failed: %s", c, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(solve_point, range(sigma.count)))
    else:
        sols = [solve_point(c) for c in range(sigma.count)]

    results = []
    rtn = []
    ok_w = []
    for c, sol in enumerate(sols):
        if sol is None:
            results.append(PointResult(c, float(sigma.weights[c]), math.nan, "Error"))
            continue
        dv = sol.total_dv if sol.optimal else math.nan
        results.append(PointResult(c, float(sigma.weights[c]), dv, sol.status))
        if sol.optimal:
            rtn.append(sol.dv_rtn)
            ok_w.append(sigma.weights[c])
    failures = sum(1 for r in results if r.status != "Optimal")
    if not rtn:
        raise OrbitLinkError("every sigma point failed")
    ok = [r for r in results if r.status == "Optimal"]
    moments = MomentSet.from_samples([r.total_dv for r in ok], [r.weight for r in ok])
    w = np.array(ok_w) / np.sum(ok_w)
    stack = np.array(rtn)
    mean_prof = np.einsum("c,cij->ij", w, stack)
    var_prof = np.einsum("c,cij->ij", w, (stack - mean_prof) ** 2)
    fit, note = None, ""
    if moments.degenerate:
        note = "zero variance: all sigma points give the same total impulse"
    else:
        try:
            fit = pearson_fit(moments)
        except DomainError as exc:
            note = f"fit failed: {exc}"
    unreliable = failures > UNRELIABLE_FRACTION * sigma.count
    return ManeuverStatistics(
        scheme=sigma.scheme, point_count=sigma.count, moments=moments, fit=fit,
        fit_note=note, epochs=sols[next(i for i, s in enumerate(sols) if s is not None)].epochs,
        per_node_mean=mean_prof, per_node_3sigma=3 * np.sqrt(var_prof),
        per_point_results=results, failures=failures, unreliable=unreliable,
        timings={"linearize": shared.elapsed, "total": time.perf_counter() - t_start})
