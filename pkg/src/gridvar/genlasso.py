"""Generalized Lasso solver: min 0.5*||y - X a||^2 + lam*||D a||_1.

The penalty matrix D is a weighted signed incidence matrix of the fusion
graph (one +w/-w pair per row). The solver is ADMM with the splitting
z = D a; the a-update reuses a cached Cholesky factorization of
X'X + rho D'D, refreshed only when rho changes. Converged iterates are
polished by solving the equality-constrained problem induced by the detected
fusion pattern, so fused coefficients come out exactly equal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse

from .errors import NumericalError
from .grid import PenaltyGraph
from .likelihood import QuadraticForm
from .unionfind import UnionFind


@dataclass(frozen=True)
class PenaltyMatrix:
    """Sparse r x m difference matrix: row e is +w_e at col_i[e], -w_e at col_j[e]."""

    col_i: np.ndarray
    col_j: np.ndarray
    weights: np.ndarray
    m: int
    edges: tuple[tuple[int, int, int], ...] | None = None

    def __post_init__(self):
        ci = np.asarray(self.col_i, dtype=np.int64)
        cj = np.asarray(self.col_j, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)
        for name, arr in (("col_i", ci), ("col_j", cj), ("weights", w)):
            object.__setattr__(self, name, arr)
            arr.setflags(write=False)
        if not (ci.shape == cj.shape == w.shape):
            raise ValueError("col_i, col_j, weights must have equal length")
        if np.any(w <= 0) or np.any(np.isnan(w)):
            raise ValueError("penalty weights must be strictly positive (inf marks a hard fusion)")

    @property
    def r(self) -> int:
        return self.col_i.shape[0]

    def diffs(self, alpha: np.ndarray) -> np.ndarray:
        """Unweighted differences a[i] - a[j] per edge."""
        return alpha[self.col_i] - alpha[self.col_j]

    def matvec(self, alpha: np.ndarray) -> np.ndarray:
        return self.weights * self.diffs(alpha)

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        wv = self.weights * v
        return np.bincount(self.col_i, wv, self.m) - np.bincount(self.col_j, wv, self.m)

    def to_sparse(self) -> scipy.sparse.csr_matrix:
        rows = np.repeat(np.arange(self.r), 2)
        cols = np.column_stack([self.col_i, self.col_j]).ravel()
        vals = np.column_stack([self.weights, -self.weights]).ravel()
        return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(self.r, self.m))

    def gram(self) -> np.ndarray:
        """Dense m x m matrix D'D."""
        d = self.to_sparse()
        return (d.T @ d).toarray()

    def with_weights(self, weights: np.ndarray) -> "PenaltyMatrix":
        return replace(self, weights=np.asarray(weights, dtype=float))


def build_penalty_matrix(graph: PenaltyGraph, weights: np.ndarray | None = None) -> PenaltyMatrix:
    """Penalty matrix over the coefficient vector from the fusion graph.

    Edge (k, i, j) penalizes the difference between block-k coefficients of
    inner cells i and j; boundary columns are untouched.
    """
    part = graph.partition
    n_i = part.n_inner
    col_i = np.array([k * n_i + i for k, i, _ in graph.edges], dtype=np.int64)
    col_j = np.array([k * n_i + j for k, _, j in graph.edges], dtype=np.int64)
    if weights is None:
        weights = np.ones(len(graph.edges))
    return PenaltyMatrix(col_i=col_i, col_j=col_j, weights=weights,
                         m=part.m, edges=graph.edges)


@dataclass(frozen=True)
class GenLassoProblem:
    x: np.ndarray
    y: np.ndarray
    penalty: PenaltyMatrix
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.x.shape[1] != self.penalty.m:
            raise ValueError("design and penalty disagree on the coefficient count")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("design and response disagree on the observation count")

    @classmethod
    def from_quadratic_form(cls, quad: QuadraticForm, penalty: PenaltyMatrix,
                            lam: float) -> "GenLassoProblem":
        return cls(x=quad.x, y=quad.y, penalty=penalty, lam=lam)

    def objective(self, alpha: np.ndarray) -> float:
        r = self.y - self.x @ alpha
        return 0.5 * float(r @ r) + self.lam * float(np.sum(np.abs(self.penalty.matvec(alpha))))


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 10000
    abs_tol: float = 1e-8
    rel_tol: float = 1e-6
    kkt_tol: float = 1e-6
    rho: float = 1.0
    adapt_rho: bool = True
    polish: bool = True
    fusion_tol: float = 1e-8
    # every this many iterations, polish the current fusion pattern and stop
    # early if the polished point passes the exact stationarity certificate
    certificate_interval: int = 100


@dataclass
class AdmmState:
    """Warm-start carrier for consecutive solves on the same (X, y, D)."""

    alpha: np.ndarray
    z: np.ndarray
    u: np.ndarray
    rho: float
    lam: float = 0.0


@dataclass
class SolveResult:
    """Solver output.

    ``converged`` is set either by the primal/dual residual thresholds or by
    the exact-pattern certificate (``certified``), whichever happens first.
    """

    alpha: np.ndarray
    objective: float
    rss: float
    df: int
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    fused: np.ndarray
    fusion_tolerance: float
    polished: bool = False
    certified: bool = False
    state: AdmmState | None = field(default=None, repr=False)


def fusion_tolerance(alpha: np.ndarray, scale: float = 1e-8) -> float:
    """Threshold below which coefficient differences count as fused."""
    peak = float(np.max(np.abs(alpha))) if alpha.size else 0.0
    return scale * (1.0 + peak)


def fused_labels(alpha: np.ndarray, penalty: PenaltyMatrix, tol: float) -> np.ndarray:
    """Component label per coefficient, joining edges with |a_i - a_j| <= tol."""
    uf = UnionFind(penalty.m)
    diffs = penalty.diffs(alpha)
    for e in np.flatnonzero(np.abs(diffs) <= tol):
        uf.union(int(penalty.col_i[e]), int(penalty.col_j[e]))
    return uf.labels()


def count_df(alpha: np.ndarray, penalty: PenaltyMatrix, tol: float | None = None) -> int:
    """Distinct-value count: fused components plus isolated (unpenalized) columns."""
    if tol is None:
        tol = fusion_tolerance(alpha)
    return int(fused_labels(alpha, penalty, tol).max()) + 1


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _direct_solve(problem: GenLassoProblem) -> np.ndarray:
    gram = problem.x.T @ problem.x
    cvec = problem.x.T @ problem.y
    try:
        cho = scipy.linalg.cho_factor(gram, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError("normal equations are singular") from exc
    return scipy.linalg.cho_solve(cho, cvec, check_finite=False)


def _merge_map(penalty: PenaltyMatrix, rows: np.ndarray) -> np.ndarray:
    uf = UnionFind(penalty.m)
    for e in np.flatnonzero(rows):
        uf.union(int(penalty.col_i[e]), int(penalty.col_j[e]))
    return uf.labels()


def _polish(problem: GenLassoProblem, fused_rows: np.ndarray,
            gram: np.ndarray, cvec: np.ndarray, d_alpha: np.ndarray) -> np.ndarray | None:
    """Exact solve of the problem restricted to the detected fusion pattern.

    Fused rows become equality constraints (via column merging); the remaining
    rows keep the sign of the current iterate. Returns None if the reduced
    system is not positive definite.
    """
    pen = problem.penalty
    col_map = _merge_map(pen, fused_rows)
    m_red = int(col_map.max()) + 1
    signs = np.where(fused_rows, 0.0, np.sign(d_alpha))
    rhs_full = cvec - problem.lam * pen.rmatvec(signs)
    gram_red = np.zeros((m_red, m_red))
    np.add.at(gram_red, (col_map[:, None], col_map[None, :]), gram)
    rhs_red = np.bincount(col_map, rhs_full, m_red)
    try:
        cho = scipy.linalg.cho_factor(gram_red, check_finite=False)
    except scipy.linalg.LinAlgError:
        return None
    beta = scipy.linalg.cho_solve(cho, rhs_red, check_finite=False)
    return beta[col_map]


def _stationarity_residual(problem: GenLassoProblem, alpha: np.ndarray,
                           fusion_tol: float = 1e-8,
                           grad: np.ndarray | None = None) -> tuple[float, float]:
    """Best achievable stationarity residual at alpha, with the subgradient
    fixed to sign(D alpha) on non-fused rows and bounded on fused rows.

    Returns (inf-norm residual of X'(Xa - y) + lam D'u, max |u| on fused rows).
    """
    pen, lam = problem.penalty, problem.lam
    if grad is None:
        grad = problem.x.T @ (problem.x @ alpha - problem.y)
    if lam == 0.0 or pen.r == 0:
        return float(np.max(np.abs(grad))), 0.0
    d_alpha = pen.matvec(alpha)
    ftol = fusion_tolerance(alpha, fusion_tol)
    active = np.abs(d_alpha) > ftol
    signs = np.where(active, np.sign(d_alpha), 0.0)
    r0 = grad + lam * pen.rmatvec(signs)
    fused_idx = np.flatnonzero(~active)
    if fused_idx.size == 0:
        return float(np.max(np.abs(r0))), 0.0
    a_mat = np.zeros((pen.m, fused_idx.size))
    cols = np.arange(fused_idx.size)
    a_mat[pen.col_i[fused_idx], cols] += lam * pen.weights[fused_idx]
    a_mat[pen.col_j[fused_idx], cols] -= lam * pen.weights[fused_idx]
    sol = scipy.optimize.lsq_linear(a_mat, -r0, bounds=(-1.0, 1.0),
                                    lsq_solver="exact", tol=1e-12)
    return float(np.max(np.abs(a_mat @ sol.x + r0))), float(np.max(np.abs(sol.x)))


def solve_admm(problem: GenLassoProblem, opts: SolverOptions | None = None,
               warm: AdmmState | None = None) -> SolveResult:
    """Solve the generalized Lasso problem.

    lam = 0 (or an empty penalty) short-circuits to the normal equations.
    Otherwise runs ADMM with residual-balancing rho adaptation until either
    the primal/dual criteria pass or a polished iterate passes the exact
    stationarity certificate; the returned pattern is always polished when
    that does not raise the objective. Hitting max_iterations returns the
    best iterate with converged=False.
    """
    opts = opts or SolverOptions()
    pen = problem.penalty
    if np.any(np.isinf(pen.weights)):
        raise ValueError("penalty has infinite weights; apply merge_hard_fusions first")

    if problem.lam == 0.0 or pen.r == 0:
        alpha = _direct_solve(problem)
        ftol = fusion_tolerance(alpha, opts.fusion_tol)
        fused = np.abs(pen.matvec(alpha)) <= ftol
        return SolveResult(
            alpha=alpha, objective=problem.objective(alpha), rss=_rss(problem, alpha),
            df=count_df(alpha, pen, ftol), iterations=0,
            primal_residual=0.0, dual_residual=0.0, converged=True,
            fused=fused, fusion_tolerance=ftol,
            state=AdmmState(alpha=alpha, z=pen.matvec(alpha), u=np.zeros(pen.r),
                            rho=opts.rho, lam=problem.lam),
        )

    m, r = pen.m, pen.r
    gram = problem.x.T @ problem.x
    cvec = problem.x.T @ problem.y
    dtd = pen.gram()
    lam = problem.lam

    # Keep the soft-threshold ratio lam/rho of order one: scale rho with lam,
    # both on cold starts and across warm-started lambda jumps.
    if warm is not None:
        z, u, rho = warm.z.copy(), warm.u.copy(), warm.rho
        if warm.lam > 0 and lam != warm.lam:
            rho_new = rho * (lam / warm.lam)
            u *= rho / rho_new
            rho = rho_new
    else:
        z, u, rho = np.zeros(r), np.zeros(r), opts.rho * lam

    def factor(rho_val):
        try:
            return scipy.linalg.cho_factor(gram + rho_val * dtd, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NumericalError("ADMM linear system is singular") from exc

    cho = factor(rho)
    alpha = np.zeros(m)
    r_norm = s_norm = np.inf
    converged = False
    certified = False
    polished = False
    iterations = 0
    sqrt_r, sqrt_m = np.sqrt(r), np.sqrt(m)
    kkt_scale = 1.0 + float(np.max(np.abs(cvec)))
    pattern_prev = z == 0.0 if warm is not None else None
    cert_every = opts.certificate_interval if opts.polish else 0

    for iterations in range(1, opts.max_iterations + 1):
        alpha = scipy.linalg.cho_solve(cho, cvec + rho * pen.rmatvec(z - u), check_finite=False)
        d_alpha = pen.matvec(alpha)
        z_old = z
        z = _soft_threshold(d_alpha + u, lam / rho)
        u = u + d_alpha - z

        r_norm = float(np.linalg.norm(d_alpha - z))
        s_norm = rho * float(np.linalg.norm(pen.rmatvec(z - z_old)))
        eps_pri = sqrt_r * opts.abs_tol + opts.rel_tol * max(
            np.linalg.norm(d_alpha), np.linalg.norm(z))
        eps_dual = sqrt_m * opts.abs_tol + opts.rel_tol * rho * float(
            np.linalg.norm(pen.rmatvec(u)))
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break

        if cert_every and iterations % cert_every == 0:
            pattern = z == 0.0
            if pattern_prev is not None and np.array_equal(pattern, pattern_prev):
                candidate = _polish(problem, pattern, gram, cvec, d_alpha)
                if candidate is not None:
                    obj_now = problem.objective(alpha)
                    if problem.objective(candidate) <= obj_now + 1e-9 * (1.0 + abs(obj_now)):
                        resid, _ = _stationarity_residual(
                            problem, candidate, opts.fusion_tol,
                            grad=gram @ candidate - cvec)
                        if resid <= opts.kkt_tol * kkt_scale:
                            alpha = candidate
                            converged = certified = polished = True
                            break
            pattern_prev = pattern

        if opts.adapt_rho:
            if r_norm > 10.0 * s_norm:
                rho *= 2.0
                u = u / 2.0
                cho = factor(rho)
            elif s_norm > 10.0 * r_norm:
                rho /= 2.0
                u = u * 2.0
                cho = factor(rho)

    state = AdmmState(alpha=alpha.copy(), z=z.copy(), u=u.copy(), rho=rho, lam=lam)

    if opts.polish and not certified:
        d_alpha = pen.matvec(alpha)
        candidate = _polish(problem, z == 0.0, gram, cvec, d_alpha)
        if candidate is not None:
            obj_now = problem.objective(alpha)
            if problem.objective(candidate) <= obj_now + 1e-9 * (1.0 + abs(obj_now)):
                alpha = candidate
                polished = True

    ftol = fusion_tolerance(alpha, opts.fusion_tol)
    fused = np.abs(pen.matvec(alpha)) <= ftol
    return SolveResult(
        alpha=alpha, objective=problem.objective(alpha), rss=_rss(problem, alpha),
        df=count_df(alpha, pen, ftol), iterations=iterations,
        primal_residual=r_norm, dual_residual=s_norm, converged=converged,
        fused=fused, fusion_tolerance=ftol, polished=polished, certified=certified,
        state=state,
    )


def _rss(problem: GenLassoProblem, alpha: np.ndarray) -> float:
    resid = problem.y - problem.x @ alpha
    return float(resid @ resid)


@dataclass
class KKTReport:
    residual: float
    max_subgradient: float
    scale: float
    tol: float
    ok: bool


def kkt_check(problem: GenLassoProblem, alpha: np.ndarray,
              tol: float = 1e-6, fusion_tol: float = 1e-8) -> KKTReport:
    """Certify stationarity: X'(Xa - y) + lam D'u = 0 for a feasible subgradient.

    u is fixed to the sign of D a on rows above the fusion tolerance and
    chosen by bounded least squares on the remaining rows. The residual is
    reported relative to 1 + ||X'y||_inf.
    """
    scale = 1.0 + float(np.max(np.abs(problem.x.T @ problem.y)))
    resid, max_sub = _stationarity_residual(problem, alpha, fusion_tol)
    ok = resid <= tol * scale and max_sub <= 1.0 + tol
    return KKTReport(residual=resid / scale, max_subgradient=max_sub,
                     scale=scale, tol=tol, ok=ok)


def _fully_fused_candidate(gram: np.ndarray, cvec: np.ndarray,
                           penalty: PenaltyMatrix) -> np.ndarray | None:
    """Least-squares solution constrained to zero differences on every edge."""
    col_map = _merge_map(penalty, np.ones(penalty.r, dtype=bool))
    m_red = int(col_map.max()) + 1
    gram_red = np.zeros((m_red, m_red))
    np.add.at(gram_red, (col_map[:, None], col_map[None, :]), gram)
    rhs_red = np.bincount(col_map, cvec, m_red)
    try:
        cho = scipy.linalg.cho_factor(gram_red, check_finite=False)
    except scipy.linalg.LinAlgError:
        return None
    return scipy.linalg.cho_solve(cho, rhs_red, check_finite=False)[col_map]


def lambda_grid(x: np.ndarray, y: np.ndarray, penalty: PenaltyMatrix,
                n_lambdas: int = 50, opts: SolverOptions | None = None) -> np.ndarray:
    """Log-spaced grid from lambda_max down to lambda_max * 1e-4.

    lambda_max is the smallest tested value of a doubling search whose solution
    is fully fused. Whether a candidate lambda fully fuses is decided by the
    stationarity certificate of the everything-fused least-squares point, with
    an ADMM solve as fallback when that point is unavailable.
    """
    if n_lambdas < 2:
        raise ValueError("need at least two grid points")
    opts = opts or SolverOptions()
    if penalty.r == 0:
        return np.geomspace(1.0, 1e-4, n_lambdas)
    scale = float(np.max(np.abs(x.T @ y)))
    if scale <= 0 or not np.isfinite(scale):
        scale = 1.0
    gram = x.T @ x
    cvec = x.T @ y
    flat = _fully_fused_candidate(gram, cvec, penalty)
    kkt_scale = 1.0 + float(np.max(np.abs(cvec)))
    grad_flat = gram @ flat - cvec if flat is not None else None

    def fully_fused_at(lam, warm):
        if flat is not None:
            prob = GenLassoProblem(x=x, y=y, penalty=penalty, lam=lam)
            resid, _ = _stationarity_residual(prob, flat, opts.fusion_tol, grad=grad_flat)
            return resid <= opts.kkt_tol * kkt_scale, warm
        res = solve_admm(GenLassoProblem(x=x, y=y, penalty=penalty, lam=lam),
                         opts, warm=warm)
        diffs = penalty.diffs(res.alpha)
        fused = bool(np.all(np.abs(diffs) <= fusion_tolerance(res.alpha, opts.fusion_tol)))
        return fused, res.state

    lam = 1e-3 * scale
    warm = None
    lam_max = None
    for _ in range(80):
        fused, warm = fully_fused_at(float(lam), warm)
        if fused:
            lam_max = float(lam)
            break
        lam *= 2.0
    if lam_max is None:
        raise NumericalError("doubling search for lambda_max did not terminate")
    return np.geomspace(lam_max, lam_max * 1e-4, n_lambdas)


def bic(result: SolveResult, t: int) -> float:
    """Model-selection criterion: rss + log(T-1) * distinct-value count."""
    return result.rss + float(np.log(t - 1)) * result.df


@dataclass
class LambdaTraceEntry:
    lam: float
    bic: float
    df: int
    converged: bool


@dataclass
class LambdaSelection:
    lam: float
    result: SolveResult
    trace: list[LambdaTraceEntry]


def select_lambda(x: np.ndarray, y: np.ndarray, penalty: PenaltyMatrix, t: int,
                  lambdas: np.ndarray | None = None, n_lambdas: int = 50,
                  opts: SolverOptions | None = None) -> LambdaSelection:
    """Sweep a descending lambda grid with warm starts; pick the BIC minimizer.

    Ties break toward the larger (more parsimonious) lambda. A lambda whose
    solve fails is dropped with a warning.
    """
    opts = opts or SolverOptions()
    if lambdas is None:
        lambdas = lambda_grid(x, y, penalty, n_lambdas=n_lambdas, opts=opts)
    order = np.sort(np.asarray(lambdas, dtype=float))[::-1]
    warm = None
    best: tuple[float, SolveResult] | None = None
    best_bic = np.inf
    trace: list[LambdaTraceEntry] = []
    for lam in order:
        try:
            res = solve_admm(GenLassoProblem(x=x, y=y, penalty=penalty, lam=float(lam)),
                             opts, warm=warm)
        except NumericalError as exc:
            warnings.warn(f"lambda={lam:.6g} dropped: {exc}", stacklevel=2)
            continue
        warm = res.state
        val = bic(res, t)
        trace.append(LambdaTraceEntry(lam=float(lam), bic=val, df=res.df,
                                      converged=res.converged))
        if val < best_bic:
            best_bic = val
            best = (float(lam), res)
    if best is None:
        raise NumericalError("every lambda in the grid failed to solve")
    return LambdaSelection(lam=best[0], result=best[1], trace=trace)


@dataclass(frozen=True)
class FusionReduction:
    """Column merging induced by hard (infinite-weight) fusion edges."""

    col_map: np.ndarray
    m_reduced: int
    penalty: PenaltyMatrix

    def reduce_design(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros((self.m_reduced, x.shape[0]))
        np.add.at(out, self.col_map, x.T)
        return out.T

    def expand(self, beta: np.ndarray) -> np.ndarray:
        return beta[self.col_map]


def merge_hard_fusions(penalty: PenaltyMatrix,
                       infinite: np.ndarray | None = None) -> FusionReduction:
    """Collapse variables joined by infinite-weight edges into representatives.

    Returns the column map plus the reduced penalty (hard rows removed, and any
    row whose endpoints got merged through other hard edges dropped as well).
    """
    if infinite is None:
        infinite = np.isinf(penalty.weights)
    infinite = np.asarray(infinite, dtype=bool)
    col_map = _merge_map(penalty, infinite)
    m_red = int(col_map.max()) + 1 if penalty.m else 0
    ci = col_map[penalty.col_i]
    cj = col_map[penalty.col_j]
    keep = (~infinite) & (ci != cj)
    reduced = PenaltyMatrix(col_i=ci[keep], col_j=cj[keep],
                            weights=penalty.weights[keep], m=m_red)
    return FusionReduction(col_map=col_map, m_reduced=m_red, penalty=reduced)
