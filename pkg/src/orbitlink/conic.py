"""Second-order cone programs in standard form and a primal-dual interior-point solver.

The primal problem is::

    minimize    c'x
    subject to  A x = b,   x in K

where ``K`` is an ordered product of free, nonnegative and second-order cone
blocks. The dual is ``max b'y  s.t.  A'y + z = c,  z in K*`` (``z = 0`` on
free blocks).

The solver runs a homogeneous self-dual embedding with Nesterov-Todd scaling
and a Mehrotra predictor-corrector, so it needs no feasible starting point and
returns Farkas-type certificates for infeasible or unbounded programs.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError

log = logging.getLogger(__name__)


class ConeKind(enum.Enum):
    FREE = "F"
    NONNEG = "L"
    SOC = "Q"


@dataclass(frozen=True)
class ConeBlock:
    kind: ConeKind
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise DomainError("cone dimension must be positive")
        if self.kind is ConeKind.SOC and self.dim < 2:
            raise DomainError("second-order cone blocks need dimension >= 2")


def free(dim: int) -> ConeBlock:
    return ConeBlock(ConeKind.FREE, dim)


def nonneg(dim: int) -> ConeBlock:
    return ConeBlock(ConeKind.NONNEG, dim)


def soc(dim: int) -> ConeBlock:
    return ConeBlock(ConeKind.SOC, dim)


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    blocks: list[ConeBlock]

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csr_matrix(self.A, dtype=float)
        n = sum(blk.dim for blk in self.blocks)
        if self.c.size != n:
            raise DomainError(f"objective has {self.c.size} entries, cones cover {n}")
        if self.A.shape != (self.b.size, n):
            raise DomainError(f"A has shape {self.A.shape}, expected ({self.b.size}, {n})")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.A.data))):
            raise DomainError("program data must be finite")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def cone_count(self, kind: ConeKind = ConeKind.SOC) -> int:
        return sum(1 for blk in self.blocks if blk.kind is kind)


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_ERROR = "NumericalError"


@dataclass(frozen=True)
class SolverSettings:
    max_iter: int = 100
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    regularization: float = 1e-9
    refine_steps: int = 3
    step_fraction: float = 0.99


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    status: Status
    iterations: int
    primal_obj: float
    dual_obj: float
    certificate: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------- cone algebra

class _Cones:
    """Index bookkeeping and Jordan-algebra operations over the conic part."""

    def __init__(self, blocks):
        self.free_idx = []
        self.lin_idx = []
        self.soc = []  # start offsets into the conic sub-vector
        cone_pos = []
        off = 0
        for blk in blocks:
            rng = range(off, off + blk.dim)
            if blk.kind is ConeKind.FREE:
                self.free_idx.extend(rng)
            else:
                cone_pos.extend(rng)
            off += blk.dim
        self.n = off
        self.cone_idx = np.array(cone_pos, dtype=int)
        self.free_idx = np.array(self.free_idx, dtype=int)
        # positions inside the conic sub-vector
        k = 0
        lin = []
        for blk in blocks:
            if blk.kind is ConeKind.NONNEG:
                lin.extend(range(k, k + blk.dim))
                k += blk.dim
            elif blk.kind is ConeKind.SOC:
                self.soc.append((k, blk.dim))
                k += blk.dim
        self.lin = np.array(lin, dtype=int)
        self.nc = k
        self.degree = len(lin) + len(self.soc)
        self.e = np.zeros(k)
        self.e[self.lin] = 1.0
        for st, _ in self.soc:
            self.e[st] = 1.0

    def jdot(self, u, v):
        """Jordan product ``u o v``."""
        out = np.empty_like(u)
        out[self.lin] = u[self.lin] * v[self.lin]
        for st, d in self.soc:
            a, bb = u[st:st + d], v[st:st + d]
            out[st] = a @ bb
            out[st + 1:st + d] = a[0] * bb[1:] + bb[0] * a[1:]
        return out

    def jdiv(self, lam, d):
        """Solve ``lam o q = d`` for ``q``."""
        q = np.empty_like(d)
        q[self.lin] = d[self.lin] / lam[self.lin]
        for st, n in self.soc:
            l0, l1 = lam[st], lam[st + 1:st + n]
            d0, d1 = d[st], d[st + 1:st + n]
            q0 = (l0 * d0 - l1 @ d1) / (l0 * l0 - l1 @ l1)
            q[st] = q0
            q[st + 1:st + n] = (d1 - q0 * l1) / l0
        return q

    def max_step(self, u, du):
        """Largest ``alpha`` with ``u + alpha du`` in the cone (``inf`` if unbounded)."""
        alpha = np.inf
        if self.lin.size:
            dl = du[self.lin]
            neg = dl < 0
            if np.any(neg):
                alpha = min(alpha, np.min(-u[self.lin][neg] / dl[neg]))
        for st, n in self.soc:
            alpha = min(alpha, _soc_step(u[st:st + n], du[st:st + n]))
        return alpha

    def interior_margin(self, u):
        """Minimum over blocks of ``u_0 - ||u_1||`` (or ``u_i`` for linear parts)."""
        m = np.inf
        if self.lin.size:
            m = min(m, u[self.lin].min())
        for st, n in self.soc:
            m = min(m, u[st] - np.linalg.norm(u[st + 1:st + n]))
        return m


def _soc_step(u, du):
    # smallest positive root of (u0 + a d0)^2 - ||u1 + a d1||^2 = 0
    qa = du[0] ** 2 - du[1:] @ du[1:]
    qb = u[0] * du[0] - u[1:] @ du[1:]
    qc = u[0] ** 2 - u[1:] @ u[1:]
    if qc <= 0:
        return 0.0
    roots = []
    if abs(qa) < 1e-300:
        if qb < 0:
            roots.append(-qc / (2 * qb))
    else:
        disc = qb * qb - qa * qc
        if disc >= 0:
            sq = math.sqrt(disc)
            # numerically stable pair
            t = -(qb + math.copysign(sq, qb))
            cand = []
            if t != 0:
                cand.extend([t / qa, qc / t])
            for r in cand:
                if r > 0:
                    roots.append(r)
    alpha = min(roots) if roots else np.inf
    # the head must also stay positive along the way
    if du[0] < 0:
        alpha = min(alpha, -u[0] / du[0])
    return alpha


class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W x = W^{-1} z = lam``."""

    def __init__(self, cones: _Cones, x, z):
        self.cones = cones
        self.lin_w = np.sqrt(z[cones.lin] / x[cones.lin])
        self.soc = []
        for st, n in cones.soc:
            xb, zb = x[st:st + n], z[st:st + n]
            xj = xb[0] ** 2 - xb[1:] @ xb[1:]
            zj = zb[0] ** 2 - zb[1:] @ zb[1:]
            xj = max(xj, 1e-300)
            zj = max(zj, 1e-300)
            xn = xb / math.sqrt(xj)
            zn = zb / math.sqrt(zj)
            gamma = math.sqrt(max((1.0 + xn @ zn) / 2.0, 1e-300))
            jx = xn.copy()
            jx[1:] = -jx[1:]
            w = (zn + jx) / (2.0 * gamma)
            eta = (zj / xj) ** 0.25
            self.soc.append((st, n, w, eta))

    def apply(self, v, inverse=False):
        out = np.empty_like(v)
        c = self.cones
        out[c.lin] = v[c.lin] / self.lin_w if inverse else v[c.lin] * self.lin_w
        for st, n, w, eta in self.soc:
            blk = v[st:st + n]
            w0, w1 = w[0], w[1:]
            if inverse:
                # W^{-1} = (1/eta) J Wbar J
                t0 = w0 * blk[0] - w1 @ blk[1:]
                t1 = blk[1:] - blk[0] * w1 + (w1 @ blk[1:]) / (1 + w0) * w1
                out[st] = t0 / eta
                out[st + 1:st + n] = t1 / eta
            else:
                t0 = w0 * blk[0] + w1 @ blk[1:]
                t1 = blk[1:] + (blk[0] + (w1 @ blk[1:]) / (1 + w0)) * w1
                out[st] = eta * t0
                out[st + 1:st + n] = eta * t1
        return out

    def hessian_blocks(self):
        """Sparse block-diagonal ``W^2`` over the conic sub-vector."""
        c = self.cones
        rows, cols, vals = [c.lin], [c.lin], [self.lin_w ** 2]
        for st, n, w, eta in self.soc:
            blk = 2.0 * np.outer(w, w)
            blk[0, 0] -= 1.0
            blk[np.arange(1, n), np.arange(1, n)] += 1.0
            blk *= eta * eta
            ii, jj = np.meshgrid(np.arange(st, st + n), np.arange(st, st + n), indexing="ij")
            rows.append(ii.ravel())
            cols.append(jj.ravel())
            vals.append(blk.ravel())
        return (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


# ---------------------------------------------------------------- presolve

@dataclass
class _Presolved:
    A: sp.csr_matrix
    b: np.ndarray
    keep: np.ndarray  # original row indices retained
    infeasible_row: int | None = None


def _presolve(A: sp.csr_matrix, b: np.ndarray) -> _Presolved:
    m = A.shape[0]
    if m == 0:
        return _Presolved(A, b, np.arange(0))
    A = A.tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    row_nnz = np.diff(A.indptr)
    bscale = max(1.0, np.abs(b).max())
    keep = []
    seen = {}
    for i in range(m):
        if row_nnz[i] == 0:
            if abs(b[i]) > 1e-12 * bscale:
                return _Presolved(A, b, np.arange(m), infeasible_row=i)
            continue
        lo, hi = A.indptr[i], A.indptr[i + 1]
        cols = A.indices[lo:hi]
        vals = A.data[lo:hi]
        order = np.argsort(cols)
        piv = vals[order][0]
        key = (tuple(cols[order]), tuple(np.round(vals[order] / piv, 14)))
        if key in seen:
            j = seen[key]
            pj = A.data[A.indptr[j]:A.indptr[j + 1]][np.argsort(A.indices[A.indptr[j]:A.indptr[j + 1]])][0]
            if abs(b[i] / piv - b[j] / pj) > 1e-12 * bscale:
                return _Presolved(A, b, np.arange(m), infeasible_row=i)
            continue
        seen[key] = i
        keep.append(i)
    keep = np.array(keep, dtype=int)
    return _Presolved(A[keep], b[keep], keep)


# ---------------------------------------------------------------- KKT solve

class _Kkt:
    def __init__(self, A: sp.csr_matrix, cones: _Cones, reg: float, refine: int):
        self.A = A.tocsc()
        self.At = self.A.T.tocsc()
        self.cones = cones
        self.reg = reg
        self.refine = refine
        self.n = A.shape[1]
        self.m = A.shape[0]

    def factor(self, scaling: _Scaling):
        n, m = self.n, self.m
        r, c_, v = scaling.hessian_blocks()
        ci = self.cones.cone_idx
        H = sp.coo_matrix((v, (ci[r], ci[c_])), shape=(n, n)).tocsc()
        self.K0 = sp.vstack([sp.hstack([H, self.At]),
                             sp.hstack([self.A, sp.csc_matrix((m, m))])]).tocsc()
        reg = sp.diags(np.concatenate((np.full(n, self.reg), np.full(m, -self.reg))))
        self.K = (self.K0 + reg).tocsc()
        # Quasi-definite after regularisation: diagonal pivots in a symmetric
        # fill-reducing order, with a partial-pivoting fallback.
        try:
            self.lu = spla.splu(self.K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
            self.pivoting = False
        except RuntimeError:
            # the regularisation can be absorbed by rounding next to O(1) entries
            self.lu = spla.splu(self.K, permc_spec="COLAMD")
            self.pivoting = True

    def _refined(self, rhs):
        sol = self.lu.solve(rhs)
        scale = 1.0 + np.linalg.norm(rhs, np.inf)
        res = rhs - self.K0 @ sol
        for _ in range(self.refine):
            if np.linalg.norm(res, np.inf) <= 1e-14 * scale:
                break
            sol = sol + self.lu.solve(res)
            res = rhs - self.K0 @ sol
        return sol, np.linalg.norm(res, np.inf) / scale

    def solve(self, rx, ry):
        rhs = np.concatenate((rx, ry))
        sol, err = self._refined(rhs)
        if (err > 1e-9 or not np.all(np.isfinite(sol))) and not self.pivoting:
            self.lu = spla.splu(self.K, permc_spec="COLAMD")
            self.pivoting = True
            sol, err = self._refined(rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("KKT solve produced non-finite values")
        return sol[:self.n], sol[self.n:]


# ---------------------------------------------------------------- solver

def _embed(cones: _Cones, full: np.ndarray) -> np.ndarray:
    return full[cones.cone_idx]


def solve(p: ConicProgram, settings: SolverSettings = SolverSettings()) -> ConicSolution:
    """Solve a conic program; never raises on structurally valid input."""
    cones = _Cones(p.blocks)
    n = p.n
    pre = _presolve(p.A, p.b)
    if pre.infeasible_row is not None:
        # row is zero or duplicates another row with a different rhs
        y_cert = _zero_row_certificate(p, pre.infeasible_row)
        return ConicSolution(np.full(n, np.nan), y_cert, np.zeros(n), Status.PRIMAL_INFEASIBLE,
                             0, np.nan, np.nan, certificate=y_cert)
    A, b, keep = pre.A, pre.b, pre.keep
    m = b.size
    c = p.c
    try:
        x, y, z, status, it, info = _hsde(A, b, c, cones, settings)
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError) as exc:
        log.debug("interior point failed: %s", exc)
        return ConicSolution(np.full(n, np.nan), np.full(p.m, np.nan), np.full(n, np.nan),
                             Status.NUMERICAL_ERROR, 0, np.nan, np.nan)
    y_full = np.zeros(p.m)
    y_full[keep] = y
    cert = None
    if status is Status.PRIMAL_INFEASIBLE:
        cert = y_full / np.linalg.norm(y_full)
    elif status is Status.DUAL_INFEASIBLE:
        cert = x / np.linalg.norm(x)
    pobj = float(c @ x) if status is Status.OPTIMAL else np.nan
    dobj = float(b @ y) if status is Status.OPTIMAL else np.nan
    if status is Status.MAX_ITERATIONS:
        pobj, dobj = float(c @ x), float(b @ y)
    return ConicSolution(x, y_full, z, status, it, pobj, dobj, certificate=cert, residuals=info)


def _zero_row_certificate(p: ConicProgram, row: int) -> np.ndarray:
    A = p.A.tocsr()
    y = np.zeros(p.m)
    lo, hi = A.indptr[row], A.indptr[row + 1]
    if hi == lo:
        y[row] = math.copysign(1.0, p.b[row])
        return y
    # duplicate row: find its partner with proportional coefficients
    cols = A.indices[lo:hi]
    vals = A.data[lo:hi]
    for j in range(p.m):
        if j == row:
            continue
        lj, hj = A.indptr[j], A.indptr[j + 1]
        if hj - lj != hi - lo:
            continue
        if set(A.indices[lj:hj]) != set(cols):
            continue
        ratio = A[row].toarray().ravel()[cols] / A[j].toarray().ravel()[cols]
        if np.allclose(ratio, ratio[0], rtol=1e-12):
            y[row] = 1.0
            y[j] = -ratio[0]
            if p.b @ y < 0:
                y = -y
            return y / np.linalg.norm(y)
    y[row] = 1.0
    return y


def _hsde(A, b, c, cones: _Cones, st: SolverSettings):
    m, n = A.shape
    At = A.T.tocsr()
    ci = cones.cone_idx
    nu = cones.degree
    kkt = _Kkt(A, cones, st.regularization, st.refine_steps)

    x = np.zeros(n)
    x[ci] = cones.e
    z = np.zeros(n)
    z[ci] = cones.e
    y = np.zeros(m)
    tau = kappa = 1.0

    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(c)
    info = {}
    status = Status.MAX_ITERATIONS
    it = 0
    for it in range(1, st.max_iter + 1):
        xc, zc = x[ci], z[ci]
        mu = (xc @ zc + tau * kappa) / (nu + 1)
        rp = A @ x - b * tau
        rd = c * tau - At @ y - z
        rg = b @ y - c @ x - kappa

        # termination checks on the de-homogenised iterate
        pres = np.linalg.norm(rp) / tau / bnorm
        dres = np.linalg.norm(rd) / tau / cnorm
        pobj = c @ x / tau
        dobj = b @ y / tau
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        info = {"pres": pres, "dres": dres, "gap": gap, "mu": mu, "tau": tau, "kappa": kappa}
        log.debug("it %3d pobj %+.6e dobj %+.6e pres %.2e dres %.2e gap %.2e mu %.2e",
                  it, pobj, dobj, pres, dres, gap, mu)
        if pres <= st.feas_tol and dres <= st.feas_tol and gap <= st.gap_tol:
            status = Status.OPTIMAL
            x, y, z = x / tau, y / tau, z / tau
            break
        by = b @ y
        if by > 0:
            res = np.linalg.norm(At @ y + z) / by
            if res <= st.feas_tol and cones.interior_margin(z[ci]) >= -st.feas_tol * np.linalg.norm(z):
                status = Status.PRIMAL_INFEASIBLE
                info["certificate_residual"] = res
                y, z = y / by, z / by
                x = np.full(n, np.nan)
                break
        cx = c @ x
        if cx < 0:
            res = np.linalg.norm(A @ x) / -cx
            if res <= st.feas_tol:
                status = Status.DUAL_INFEASIBLE
                info["certificate_residual"] = res
                x = x / -cx
                y = np.full(m, np.nan)
                z = np.full(n, np.nan)
                break

        scaling = _Scaling(cones, xc, zc)
        lam = scaling.apply(xc)
        kkt.factor(scaling)
        x1, y1 = kkt.solve(-c, b)

        def direction(eta, ds, dk):
            # ds / dk are the complementarity right-hand sides
            q = cones.jdiv(lam, ds)
            rx = -eta * rd
            rx[ci] += scaling.apply(q)
            x2, y2 = kkt.solve(rx, -eta * rp)
            num = -eta * rg + b @ y2 + c @ x2 + dk / tau
            den = kappa / tau - b @ y1 - c @ x1
            dtau = num / den
            dx = x2 + dtau * x1
            dy = -(y2 + dtau * y1)
            dzc = scaling.apply(q) - scaling.apply(scaling.apply(dx[ci]))
            dz = np.zeros(n)
            dz[ci] = dzc
            dkappa = (dk - kappa * dtau) / tau
            return dx, dy, dz, dtau, dkappa

        def step_len(dx, dz, dtau, dkappa):
            a = min(cones.max_step(xc, dx[ci]), cones.max_step(zc, dz[ci]))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        lamlam = cones.jdot(lam, lam)
        dxa, dya, dza, dta, dka = direction(1.0, -lamlam, -tau * kappa)
        aa = min(1.0, step_len(dxa, dza, dta, dka))
        sigma = (1.0 - aa) ** 3
        corr = cones.jdot(scaling.apply(dza[ci], inverse=True), scaling.apply(dxa[ci]))
        ds = -lamlam - corr + sigma * mu * cones.e
        dk = -tau * kappa - dta * dka + sigma * mu
        dx, dy, dz, dt, dkap = direction(1.0 - sigma, ds, dk)
        alpha = min(1.0, st.step_fraction * step_len(dx, dz, dt, dkap))
        if not np.isfinite(alpha) or alpha <= 0:
            raise RuntimeError("step length collapsed")
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        tau = tau + alpha * dt
        kappa = kappa + alpha * dkap
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise RuntimeError("non-finite iterate")
    else:
        x, y, z = x / tau, y / tau, z / tau
    return x, y, z, status, it, info


# ---------------------------------------------------------------- rotated cones

_ROT = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


def rotated_map(dim: int) -> np.ndarray:
    """Orthogonal, self-inverse matrix taking ``(u, v, w)`` with ``2uv >= ||w||^2``,
    ``u, v >= 0`` to a point of the plain second-order cone of the same dimension."""
    if dim < 3:
        raise DomainError("rotated cones need dimension >= 3")
    Q = np.eye(dim)
    Q[:2, :2] = _ROT
    return Q


def convert_rotated(u: float, v: float, w) -> np.ndarray:
    """Map a rotated-cone point ``(u, v, w)`` into second-order cone coordinates."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    pt = np.concatenate(([u, v], w))
    return rotated_map(pt.size) @ pt


def rotated_from_soc(t) -> np.ndarray:
    """Inverse of :func:`convert_rotated`."""
    t = np.asarray(t, dtype=float)
    return rotated_map(t.size) @ t


def in_soc(t, tol: float = 0.0) -> bool:
    t = np.asarray(t, dtype=float)
    return bool(t[0] >= np.linalg.norm(t[1:]) - tol)


def kkt_residuals(p: ConicProgram, sol: ConicSolution) -> dict:
    """Primal/dual feasibility, cone membership and gap of a solution."""
    cones = _Cones(p.blocks)
    x, y, z = sol.x, sol.y, sol.z
    pres = np.linalg.norm(p.A @ x - p.b) / (1 + np.linalg.norm(p.b))
    dres = np.linalg.norm(p.A.T @ y + z - p.c) / (1 + np.linalg.norm(p.c))
    gap = abs(p.c @ x - p.b @ y) / (1 + abs(p.c @ x))
    xc, zc = x[cones.cone_idx], z[cones.cone_idx]
    scale_x = 1 + np.linalg.norm(xc, np.inf) if xc.size else 1.0
    scale_z = 1 + np.linalg.norm(zc, np.inf) if zc.size else 1.0
    px = min(0.0, cones.interior_margin(xc)) / scale_x if xc.size else 0.0
    pz = min(0.0, cones.interior_margin(zc)) / scale_z if zc.size else 0.0
    zf = np.linalg.norm(z[cones.free_idx], np.inf) if cones.free_idx.size else 0.0
    return {"primal": pres, "dual": dres, "gap": gap, "cone_x": -px, "cone_z": -pz,
            "free_z": zf}


# ---------------------------------------------------------------- text dump

_HEADER = "# orbitlink conic program v1"


def dump_program(p: ConicProgram, path) -> None:
    """Write a program in the plain-text sparse format.

    Layout: header line; ``n m nnz``; ``blocks`` line of ``<kind><dim>`` tokens
    (``F`` free, ``L`` nonnegative, ``Q`` second-order); ``c`` then ``n`` values;
    ``b`` then ``m`` values; ``A`` then ``nnz`` triplets ``row col value``
    (zero-based).
    """
    A = p.A.tocoo()
    with open(path, "w") as fh:
        fh.write(_HEADER + "\n")
        fh.write(f"{p.n} {p.m} {A.nnz}\n")
        fh.write("blocks " + " ".join(f"{blk.kind.value}{blk.dim}" for blk in p.blocks) + "\n")
        fh.write("c\n")
        fh.write("\n".join(repr(float(v)) for v in p.c) + "\n")
        fh.write("b\n")
        if p.m:
            fh.write("\n".join(repr(float(v)) for v in p.b) + "\n")
        fh.write("A\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {float(v)!r}\n")


class FormatError(DomainError):
    pass


def load_program(path) -> ConicProgram:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    try:
        n, m, nnz = (int(t) for t in lines[0].split())
        toks = lines[1].split()
        if toks[0] != "blocks":
            raise FormatError("line 2: expected 'blocks'")
        blocks = [ConeBlock(ConeKind(t[0]), int(t[1:])) for t in toks[1:]]
        pos = 2
        if lines[pos] != "c":
            raise FormatError("expected 'c' section")
        c = np.array([float(v) for v in lines[pos + 1:pos + 1 + n]])
        pos += 1 + n
        if lines[pos] != "b":
            raise FormatError("expected 'b' section")
        b = np.array([float(v) for v in lines[pos + 1:pos + 1 + m]])
        pos += 1 + m
        if lines[pos] != "A":
            raise FormatError("expected 'A' section")
        trip = [ln.split() for ln in lines[pos + 1:pos + 1 + nnz]]
        if len(trip) != nnz or len(c) != n or len(b) != m:
            raise FormatError("section length mismatch")
        rows = np.array([int(t[0]) for t in trip], dtype=int)
        cols = np.array([int(t[1]) for t in trip], dtype=int)
        vals = np.array([float(t[2]) for t in trip])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed program file: {exc}") from exc
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    return ConicProgram(c, A, b, blocks)


def dump_solution(sol: ConicSolution, target) -> None:
    """Write status, objectives and either ``x`` or the infeasibility certificate.

    ``target`` is a path or a writable text stream.
    """
    infeasible = sol.status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE)
    name, vec = ("certificate", sol.certificate) if infeasible else ("x", sol.x)
    lines = [f"status {sol.status.value}", f"iterations {sol.iterations}",
             f"primal_obj {sol.primal_obj!r}", f"dual_obj {sol.dual_obj!r}",
             f"{name} {vec.size}"] + [repr(float(v)) for v in vec]
    text = "\n".join(lines) + "\n"
    if hasattr(target, "write"):
        target.write(text)
    else:
        with open(target, "w") as fh:
            fh.write(text)


def load_solution(path) -> dict:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    out = {}
    for key in ("status", "iterations", "primal_obj", "dual_obj"):
        k, v = lines.pop(0).split(maxsplit=1)
        out[k] = v
    name, size = lines.pop(0).split()
    out[name] = np.array([float(v) for v in lines[:int(size)]])
    out["iterations"] = int(out["iterations"])
    out["primal_obj"] = float(out["primal_obj"])
    out["dual_obj"] = float(out["dual_obj"])
    return out
