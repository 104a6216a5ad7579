"""Numerical kernels shared by the estimators and strategies.

SPD solves with escalating diagonal jitter, a small dense primal active-set
QP solver, ridge regression with an unpenalized intercept, and the
(non-regularized) incomplete beta function.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg as sla
from scipy.optimize import linprog

log = logging.getLogger(__name__)

JITTER_LEVELS = (0.0, 1e-12, 1e-10, 1e-8)


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix stays singular after the full jitter policy."""


class SPDFactor:
    """Cholesky factorization of a symmetric matrix with jitter fallback.

    ``jitter`` is the relative level that succeeded (0.0 when no loading
    was needed); the absolute loading is ``jitter * trace(S) / N``.
    """

    def __init__(self, S: np.ndarray):
        S = np.asarray(S, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {S.shape}")
        n = S.shape[0]
        scale = np.trace(S) / n if n else 0.0
        if not np.isfinite(scale) or scale <= 0:
            scale = 0.0  # jitter proportional to a zero trace cannot help
        for eps in JITTER_LEVELS:
            A = S + eps * scale * np.eye(n) if eps else S
            try:
                self._cho = sla.cho_factor(A, lower=True, check_finite=True)
            except (np.linalg.LinAlgError, ValueError):
                continue
            # cho_factor accepts some numerically singular matrices; reject
            # factors whose pivots collapse relative to the diagonal scale.
            piv = np.abs(np.diag(self._cho[0]))
            if piv.min() <= 1e-15 * math.sqrt(scale):
                continue
            self.jitter = eps
            if eps:
                log.debug("SPD solve needed diagonal jitter %g", eps)
            return
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(S)
        raise SingularMatrixError(
            f"matrix is singular after jitter up to {JITTER_LEVELS[-1]:g} "
            f"(condition estimate {cond:.3g})"
        )

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self._cho, np.asarray(b, dtype=float))


def solve_spd(S: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve ``S x = b`` for symmetric positive (semi)definite ``S``.

    Returns the solution and the relative jitter that was needed.
    """
    fac = SPDFactor(S)
    return fac.solve(b), fac.jitter


# ---------------------------------------------------------------------------
# Quadratic programming
# ---------------------------------------------------------------------------

@dataclass
class QuadraticProgram:
    """minimize ½ w'Pw + q'w subject to linear equalities, optional lower
    bounds and an optional L1 ball ``‖w - anchor‖₁ ≤ radius``."""

    P: np.ndarray
    q: np.ndarray
    equality: list[tuple[np.ndarray, float]] = field(default_factory=list)
    lower: np.ndarray | None = None
    l1_anchor: tuple[np.ndarray, float] | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError("P and q dimensions disagree")
        if not np.allclose(self.P, self.P.T, atol=1e-10, rtol=0):
            raise ValueError("P must be symmetric to 1e-10")
        self.equality = [(np.asarray(a, dtype=float), float(b)) for a, b in self.equality]
        if self.lower is not None:
            self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        if self.l1_anchor is not None:
            anchor, radius = self.l1_anchor
            if radius < 0:
                raise ValueError("L1 radius must be nonnegative")
            self.l1_anchor = (np.asarray(anchor, dtype=float), float(radius))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @classmethod
    def portfolio(cls, P, q, nonneg=False, anchor=None, radius=None):
        """Budget-constrained program, the form every strategy uses."""
        n = len(q)
        return cls(
            P=P,
            q=q,
            equality=[(np.ones(n), 1.0)],
            lower=np.zeros(n) if nonneg else None,
            l1_anchor=None if anchor is None else (anchor, radius),
        )


@dataclass
class SolverReport:
    solution: np.ndarray
    objective: float
    iterations: int
    status: str  # "optimal" | "max_iter" | "infeasible"
    active_set: tuple[int, ...] = ()
    kkt_residual: float = float("nan")


class _StandardForm:
    """min ½x'Hx + c'x  s.t.  E x = e,  G x ≤ h  (dense)."""

    def __init__(self, H, c, E, e, G, h, n_w, anchor=None):
        self.H, self.c = H, c
        self.E, self.e = E, e
        self.G, self.h = G, h
        self.n_w = n_w
        self.anchor = anchor

    def to_w(self, x):
        if self.anchor is None:
            return x[: self.n_w]
        n = self.n_w
        return self.anchor + x[:n] - x[n:]


def _standard_form(qp: QuadraticProgram) -> _StandardForm:
    n = qp.n
    if qp.l1_anchor is None:
        E = np.array([a for a, _ in qp.equality]).reshape(-1, n)
        e = np.array([b for _, b in qp.equality])
        if qp.lower is not None:
            G, h = -np.eye(n), -qp.lower
        else:
            G, h = np.zeros((0, n)), np.zeros(0)
        return _StandardForm(qp.P, qp.q, E, e, G, h, n)

    # w = anchor + u - v with u, v >= 0 and 1'(u + v) <= radius.
    anchor, radius = qp.l1_anchor
    D = np.hstack([np.eye(n), -np.eye(n)])
    H = D.T @ qp.P @ D
    # Tiny proximal term on the split variables makes H positive definite;
    # it only penalizes u_i, v_i both positive, which is never optimal.
    H = H + 1e-10 * max(np.trace(qp.P) / n, 1e-300) * np.eye(2 * n)
    c = D.T @ (qp.P @ anchor + qp.q)
    E = np.array([a @ D for a, _ in qp.equality]).reshape(-1, 2 * n)
    e = np.array([b - a @ anchor for a, b in qp.equality])
    rows = [-np.eye(2 * n), np.ones((1, 2 * n))]
    rhs = [np.zeros(2 * n), np.array([radius])]
    if qp.lower is not None:
        # anchor + u - v >= lower  <=>  -u + v <= anchor - lower
        rows.append(-D)
        rhs.append(anchor - qp.lower)
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    return _StandardForm(H, c, E, e, G, h, n, anchor=anchor)


def _feasible_start(sf: _StandardForm, qp: QuadraticProgram, tol: float):
    n_x = sf.H.shape[0]
    guesses = []
    if sf.anchor is not None:
        guesses.append(np.zeros(n_x))
    else:
        n = qp.n
        guesses.append(np.full(n, 1.0 / n))
        if sf.E.shape[0]:
            guesses.append(np.linalg.lstsq(sf.E, sf.e, rcond=None)[0])
        else:
            guesses.append(np.zeros(n))
    for x in guesses:
        if _feasible(sf, x, tol):
            return x
    res = linprog(
        np.zeros(n_x),
        A_ub=sf.G if sf.G.shape[0] else None,
        b_ub=sf.h if sf.G.shape[0] else None,
        A_eq=sf.E if sf.E.shape[0] else None,
        b_eq=sf.e if sf.E.shape[0] else None,
        bounds=[(None, None)] * n_x,
        method="highs",
    )
    if res.status != 0:
        return None
    return res.x


def _feasible(sf, x, tol):
    if sf.E.shape[0] and np.max(np.abs(sf.E @ x - sf.e)) > tol:
        return False
    if sf.G.shape[0] and np.max(sf.G @ x - sf.h) > tol:
        return False
    return True


def _independent_rows(rows: np.ndarray, candidates: Sequence[int], base: np.ndarray):
    """Greedily keep candidates (in index order) that add rank to ``base``."""
    kept = []
    M = base
    rank = np.linalg.matrix_rank(M) if M.shape[0] else 0
    for i in candidates:
        trial = np.vstack([M, rows[i]]) if M.shape[0] else rows[i : i + 1]
        r = np.linalg.matrix_rank(trial)
        if r > rank:
            kept.append(i)
            M, rank = trial, r
    return kept


def solve_qp(
    qp: QuadraticProgram,
    tol: float = 1e-12,
    max_iter: int = 500,
    warm_start: Sequence[int] | None = None,
) -> SolverReport:
    """Primal active-set method for a convex quadratic program.

    Working-set changes are deterministic: the most negative multiplier
    leaves (lowest index on ties) and the first blocking constraint enters
    (lowest index on ties). ``warm_start`` suggests an initial working set
    of inequality indices of the internal standard form.
    """
    sf = _standard_form(qp)
    n_x = sf.H.shape[0]
    ftol = max(tol, 1e-12)
    x = _feasible_start(sf, qp, 1e-10)
    if x is None:
        return SolverReport(np.full(qp.n, np.nan), float("nan"), 0, "infeasible")

    E, G = sf.E, sf.G
    m_eq = E.shape[0]
    if m_eq and np.linalg.matrix_rank(E) < m_eq:
        raise ValueError("equality constraints are linearly dependent")
    slack = sf.h - G @ x if G.shape[0] else np.zeros(0)
    active_now = [i for i in range(G.shape[0]) if slack[i] <= 1e-10]
    if warm_start is not None:
        ws = set(warm_start)
        active_now = [i for i in active_now if i in ws] + [i for i in active_now if i not in ws]
    working = _independent_rows(G, active_now, E)
    working.sort()

    status = "max_iter"
    it = 0
    lam_ineq = np.zeros(0)
    while it < max_iter:
        it += 1
        A_w = np.vstack([E, G[working]]) if working else E
        m = A_w.shape[0]
        g = sf.H @ x + sf.c
        K = np.zeros((n_x + m, n_x + m))
        K[:n_x, :n_x] = sf.H
        K[:n_x, n_x:] = A_w.T
        K[n_x:, :n_x] = A_w
        rhs = np.concatenate([-g, np.zeros(m)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p = sol[:n_x]
        lam = sol[n_x:]
        if np.max(np.abs(p)) <= 1e-13 * max(1.0, np.max(np.abs(x))):
            lam_ineq = lam[m_eq:]
            if lam_ineq.size == 0 or lam_ineq.min() >= -ftol * max(1.0, np.max(np.abs(g))):
                status = "optimal"
                break
            j = int(np.argmin(lam_ineq))  # argmin returns the lowest index on ties
            del working[j]
            continue
        # Step toward the EQP minimizer, stopping at the first blocking constraint.
        alpha, block = 1.0, None
        if G.shape[0]:
            Gp = G @ p
            resid = sf.h - G @ x
            in_w = set(working)
            for i in range(G.shape[0]):
                if i in in_w or Gp[i] <= 1e-15:
                    continue
                step = max(resid[i], 0.0) / Gp[i]
                if step < alpha:
                    alpha, block = step, i
        x = x + alpha * p
        if block is not None:
            working.append(block)
            working.sort()

    w = sf.to_w(x)
    obj = float(0.5 * w @ qp.P @ w + qp.q @ w)
    # Stationarity in the split space, using the final multipliers.
    kkt = float("nan")
    if status == "optimal":
        A_w = np.vstack([E, G[working]]) if working else E
        g = sf.H @ x + sf.c
        if A_w.shape[0]:
            mult = np.linalg.lstsq(A_w.T, -g, rcond=None)[0]
            kkt = float(np.max(np.abs(g + A_w.T @ mult)))
        else:
            kkt = float(np.max(np.abs(g)))
    return SolverReport(w, obj, it, status, tuple(working), kkt)


# ---------------------------------------------------------------------------
# Ridge regression
# ---------------------------------------------------------------------------

def ridge_regression(X, Y, alpha: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Ridge fit with an unpenalized intercept on column-demeaned data.

    Returns ``(intercepts, coefficients)`` with shapes ``(m,)`` and ``(p, m)``
    so that ``Y ≈ intercepts + X @ coefficients``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("ridge regression needs at least one row")
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y must have the same number of rows")
    if X.shape[0] < 2:
        raise ValueError("ridge regression needs T >= 2")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite entries in regression data")
    xm, ym = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - xm, Y - ym
    A = Xc.T @ Xc + alpha * np.eye(X.shape[1])
    coef = np.linalg.solve(A, Xc.T @ Yc)
    intercept = ym - xm @ coef
    if squeeze:
        return intercept[0:1], coef[:, 0:1]
    return intercept, coef


# ---------------------------------------------------------------------------
# Incomplete beta function
# ---------------------------------------------------------------------------

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAXIT = 5000


def _beta_cf(z: float, a: float, b: float) -> float:
    """Continued fraction for I_z(a, b) (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * z / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * z / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * z / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (z={z}, a={a}, b={b})")


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _check_beta_args(z, a, b):
    if not (0.0 <= z <= 1.0) or math.isnan(z):
        raise ValueError(f"z must lie in [0, 1], got {z}")
    if not (a > 0 and b > 0):
        raise ValueError(f"a and b must be positive, got a={a}, b={b}")


def log_incomplete_beta(z: float, a: float, b: float) -> float:
    """log B_z(a, b); stays finite where B_z itself would underflow."""
    _check_beta_args(z, a, b)
    if z == 0.0:
        return -math.inf
    if z == 1.0:
        return log_beta(a, b)
    front = a * math.log(z) + b * math.log1p(-z)
    if z < (a + 1.0) / (a + b + 2.0):
        return front - math.log(a) + math.log(_beta_cf(z, a, b))
    # Symmetry: B_z(a,b) = B(a,b) - B_{1-z}(b,a).
    tail = math.exp(front - math.log(b) - log_beta(a, b)) * _beta_cf(1.0 - z, b, a)
    return log_beta(a, b) + math.log1p(-tail) if tail < 1.0 else -math.inf


def regularized_incomplete_beta(z: float, a: float, b: float) -> float:
    _check_beta_args(z, a, b)
    if z == 0.0:
        return 0.0
    if z == 1.0:
        return 1.0
    front = math.exp(a * math.log(z) + b * math.log1p(-z) - log_beta(a, b))
    if z < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(z, a, b) / a
    return 1.0 - front * _beta_cf(1.0 - z, b, a) / b


def incomplete_beta(z: float, a: float, b: float) -> float:
    """Non-regularized incomplete beta ∫₀^z y^(a-1) (1-y)^(b-1) dy."""
    return regularized_incomplete_beta(z, a, b) * math.exp(log_beta(a, b))
