"""Generic linearized-ADMM loop with pluggable prox callbacks.

One iteration performs, in order,

    x_{t+1} = argmin_x { f_c(x) + <x, grad f_d(x_t) + A'u_t>
                         + 0.5*||Ax + By_t - c||^2_Sigma + 0.5*||x - x_t||^2_{H_f} }
    y_{t+1} = argmin_y { g_c(y) + <y, grad g_d(y_t) + B'u_t>
                         + 0.5*||Ax_{t+1} + By - c||^2_Sigma + 0.5*||y - y_t||^2_{H_g} }
    u_{t+1} = u_t + Sigma (A x_{t+1} + B y_{t+1} - c)

The x subproblem is handed to the objective's prox callback in the canonical
form  argmin_v { h_c(v) + <v, lin> + 0.5*||v - center||^2_D }  with
D = H_f + A'Sigma A, center = x_t, and
lin = grad f_d(x_t) + A'(u_t + Sigma(Ax_t + By_t - c));
the y subproblem is analogous with D = H_g + B'Sigma B evaluated at x_{t+1}.
Completing the square shows this is the same minimization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .numerics import DiagonalMatrix, SparseMatrix, check_psd

__all__ = [
    "DenseMap",
    "ScaledIdentity",
    "KronEye",
    "DenseQuadratic",
    "CompositeObjective",
    "AdmmProblem",
    "AdmmState",
    "TraceRecord",
    "AdmmStepError",
    "KahanSum",
    "RunResult",
    "admm_step",
    "run",
    "quadratic_prox",
    "validate_stepsizes",
    "StepsizeReport",
    "save_trace",
    "load_trace",
    "TRACE_HEADER",
]


# ---------------------------------------------------------------------------
# Linear maps: anything with shape/matvec/rmatvec works for A and B.
# SparseMatrix (numerics) already satisfies the protocol.


class DenseMap:
    """Dense matrix as a linear map (BLAS-backed products)."""

    def __init__(self, a: np.ndarray):
        self.a = np.asarray(a, dtype=float)
        if self.a.ndim != 2:
            raise ValueError("expected a 2-D array")

    @property
    def shape(self):
        return self.a.shape

    def matvec(self, v):
        return self.a @ v

    def rmatvec(self, v):
        return self.a.T @ v

    def dense(self):
        return self.a


class ScaledIdentity:
    """c * I as a linear map."""

    def __init__(self, n: int, scale: float = 1.0):
        self.n = int(n)
        self.scale = float(scale)

    @property
    def shape(self):
        return (self.n, self.n)

    def matvec(self, v):
        return self.scale * np.asarray(v, dtype=float)

    rmatvec = matvec

    def dense(self):
        return self.scale * np.eye(self.n)


class KronEye:
    """(P kron I_m) acting on C-order flattenings of (cols, m) matrices.

    Avoids materializing the Kronecker product: matvec reshapes, applies P to
    the stacked columns, and flattens back.
    """

    def __init__(self, p: SparseMatrix, m: int):
        self.p = p
        self.m = int(m)

    @property
    def shape(self):
        return (self.p.rows * self.m, self.p.cols * self.m)

    def matvec(self, v):
        x = np.asarray(v, dtype=float).reshape(self.p.cols, self.m)
        return self.p.matmat(x).ravel()

    def rmatvec(self, v):
        y = np.asarray(v, dtype=float).reshape(self.p.rows, self.m)
        return self.p.rmatmat(y).ravel()

    def dense(self):
        return np.kron(self.p.dense(), np.eye(self.m))


class DenseQuadratic:
    """Symmetric positive-definite dense operator with a cached factorization."""

    def __init__(self, a: np.ndarray):
        a = np.asarray(a, dtype=float)
        self.a = 0.5 * (a + a.T)
        self._chol = np.linalg.cholesky(self.a)

    @property
    def shape(self):
        return self.a.shape

    def matvec(self, v):
        return self.a @ v

    rmatvec = matvec

    def solve(self, v):
        z = np.linalg.solve(self._chol, v)
        return np.linalg.solve(self._chol.T, z)

    def dense(self):
        return self.a


def _map_dense(op) -> np.ndarray:
    if op is None:
        raise ValueError("cannot densify a missing operator")
    if isinstance(op, np.ndarray):
        return op
    return op.dense()


# ---------------------------------------------------------------------------


@dataclass
class CompositeObjective:
    """One side of the split objective h = h_c + h_d.

    prox_step(lin, D, center) must return
    argmin_v { h_c(v) + <v, lin> + 0.5*||v - center||^2_D }
    to first-order residual <= 1e-8; D is a positive-definite operator with a
    `solve` method (DiagonalMatrix or DenseQuadratic). grad_d/hessian_d may be
    None when the differentiable part is absent.
    """

    prox_step: Callable[[np.ndarray, object, np.ndarray], np.ndarray]
    grad_d: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian_d: Optional[Callable[[np.ndarray], np.ndarray]] = None


def quadratic_prox(lin: np.ndarray, D, center: np.ndarray) -> np.ndarray:
    """Default prox for h_c = 0: the exact quadratic minimizer center - D^{-1} lin."""
    return center - D.solve(lin)


@dataclass
class AdmmProblem:
    """Problem data for the linearized-ADMM loop.

    D_f / D_g are the subproblem quadratics H_f + A'Sigma A and
    H_g + B'Sigma B. Either supply them directly (diagonal at scale) or leave
    them None to have dense versions built for small problems. H_f / H_g may
    be None (meaning zero), a DiagonalMatrix, or a dense ndarray; they are
    only consulted by `validate_stepsizes`, never by the iteration itself.
    """

    A: object
    B: object
    c: np.ndarray
    sigma: DiagonalMatrix
    f: CompositeObjective
    g: CompositeObjective
    H_f: object = None
    H_g: object = None
    D_f: object = None
    D_g: object = None
    objective: Optional[Callable[[np.ndarray, np.ndarray], float]] = None

    def __post_init__(self):
        k_a, self.dim_x = self.A.shape
        k_b, self.dim_y = self.B.shape
        self.c = np.asarray(self.c, dtype=float)
        if k_a != k_b or self.c.shape != (k_a,):
            raise ValueError("A, B, c have inconsistent constraint dimensions")
        if self.sigma.diag.shape != (k_a,):
            raise ValueError("Sigma dimension does not match the constraint")
        if not self.sigma.is_positive():
            raise ValueError("Sigma must have strictly positive entries")
        self.dim_u = k_a
        if self.D_f is None:
            self.D_f = self._build_quadratic(self.A, self.H_f, "D_f")
        if self.D_g is None:
            self.D_g = self._build_quadratic(self.B, self.H_g, "D_g")

    def _build_quadratic(self, lin_map, step_matrix, name: str):
        # Dense fallback for small problems; large problems must pass D_* in.
        n = lin_map.shape[1]
        if n > 2000:
            raise ValueError(f"{name} must be supplied explicitly for large problems")
        a = _map_dense(lin_map)
        quad = a.T @ (self.sigma.diag[:, None] * a)
        if step_matrix is not None:
            h = step_matrix.dense() if hasattr(step_matrix, "dense") else np.asarray(step_matrix)
            quad = quad + h
        try:
            return DenseQuadratic(quad)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"{name} = H + M'Sigma M is not positive definite") from exc


@dataclass
class TraceRecord:
    t: int
    objective: float
    primal_residual: float
    alpha_t: Optional[float]
    seconds: float


class KahanSum:
    """Compensated vector accumulator, so long running averages stay trustworthy."""

    def __init__(self, n: int):
        self.total = np.zeros(n)
        self._comp = np.zeros(n)

    def add(self, v: np.ndarray) -> None:
        y = v - self._comp
        t = self.total + y
        self._comp = (t - self.total) - y
        self.total = t

    def copy(self) -> "KahanSum":
        out = KahanSum(self.total.size)
        out.total = self.total.copy()
        out._comp = self._comp.copy()
        return out


@dataclass
class AdmmState:
    t: int
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    sum_x: KahanSum
    sum_y: KahanSum
    trace: list = field(default_factory=list)

    @classmethod
    def initial(cls, x0: np.ndarray, y0: np.ndarray, u0: np.ndarray) -> "AdmmState":
        return cls(
            t=0,
            x=np.asarray(x0, dtype=float),
            y=np.asarray(y0, dtype=float),
            u=np.asarray(u0, dtype=float),
            sum_x=KahanSum(np.asarray(x0).size),
            sum_y=KahanSum(np.asarray(y0).size),
        )

    @property
    def x_bar(self) -> np.ndarray:
        if self.t == 0:
            return self.x.copy()
        return self.sum_x.total / self.t

    @property
    def y_bar(self) -> np.ndarray:
        if self.t == 0:
            return self.y.copy()
        return self.sum_y.total / self.t


class AdmmStepError(RuntimeError):
    """Raised when a subproblem solve fails; carries the iteration index."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


def _check_finite(v: np.ndarray, iteration: int, what: str) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise AdmmStepError(iteration, f"{what} produced non-finite values")
    return v


def admm_step(
    problem: AdmmProblem,
    state: AdmmState,
    alpha_hook: Optional[Callable] = None,
    record_time: bool = True,
) -> AdmmState:
    """Run one full x/y/u cycle and return the advanced state."""
    t0 = time.perf_counter()
    it = state.t + 1
    x, y, u = state.x, state.y, state.u
    sig = problem.sigma

    ax = problem.A.matvec(x)
    by = problem.B.matvec(y)
    lin_x = problem.A.rmatvec(u + sig.matvec(ax + by - problem.c))
    if problem.f.grad_d is not None:
        lin_x = lin_x + problem.f.grad_d(x)
    try:
        x_new = problem.f.prox_step(lin_x, problem.D_f, x)
    except AdmmStepError:
        raise
    except Exception as exc:
        raise AdmmStepError(it, f"x prox_step failed: {exc}") from exc
    x_new = _check_finite(np.asarray(x_new, dtype=float), it, "x update")

    ax_new = problem.A.matvec(x_new)
    lin_y = problem.B.rmatvec(u + sig.matvec(ax_new + by - problem.c))
    if problem.g.grad_d is not None:
        lin_y = lin_y + problem.g.grad_d(y)
    try:
        y_new = problem.g.prox_step(lin_y, problem.D_g, y)
    except AdmmStepError:
        raise
    except Exception as exc:
        raise AdmmStepError(it, f"y prox_step failed: {exc}") from exc
    y_new = _check_finite(np.asarray(y_new, dtype=float), it, "y update")

    residual = ax_new + problem.B.matvec(y_new) - problem.c
    u_new = _check_finite(u + sig.matvec(residual), it, "u update")

    sum_x = state.sum_x.copy()
    sum_y = state.sum_y.copy()
    sum_x.add(x_new)
    sum_y.add(y_new)

    obj = float("nan")
    if problem.objective is not None:
        obj = float(problem.objective(x_new, y_new))
    alpha = None
    if alpha_hook is not None:
        alpha = alpha_hook(it, x_new, y_new, u_new)
    seconds = time.perf_counter() - t0 if record_time else 0.0
    record = TraceRecord(
        t=it,
        objective=obj,
        primal_residual=float(np.linalg.norm(residual)),
        alpha_t=alpha,
        seconds=seconds,
    )
    return AdmmState(
        t=it,
        x=x_new,
        y=y_new,
        u=u_new,
        sum_x=sum_x,
        sum_y=sum_y,
        trace=state.trace + [record],
    )


@dataclass
class RunResult:
    state: AdmmState
    x_bar: np.ndarray
    y_bar: np.ndarray
    trace: list


def run(
    problem: AdmmProblem,
    init: Optional[tuple] = None,
    iters: int = 100,
    alpha_hook: Optional[Callable] = None,
    iteration_hook: Optional[Callable] = None,
    primal_tol: Optional[float] = None,
    record_time: bool = True,
) -> RunResult:
    """Run `iters` cycles from `init` (default all-zeros) and return averages.

    `alpha_hook(t, x, y, u)` may return a diagnostic scalar recorded in the
    trace; `iteration_hook(t, state)` is called after every step (used by the
    experiments to log extra per-iteration quantities). `primal_tol` adds an
    optional early stop on the primal residual.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if init is None:
        init = (
            np.zeros(problem.dim_x),
            np.zeros(problem.dim_y),
            np.zeros(problem.dim_u),
        )
    state = AdmmState.initial(*init)
    for _ in range(iters):
        state = admm_step(problem, state, alpha_hook=alpha_hook, record_time=record_time)
        if iteration_hook is not None:
            iteration_hook(state.t, state)
        if primal_tol is not None and state.trace[-1].primal_residual <= primal_tol:
            break
    return RunResult(state=state, x_bar=state.x_bar, y_bar=state.y_bar, trace=state.trace)


# ---------------------------------------------------------------------------
# Step-size validation


@dataclass
class StepsizeReport:
    checks: list  # (condition name, passed, detail)

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def failures(self) -> list:
        return [name for name, passed, _ in self.checks if not passed]


def _min_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])


def validate_stepsizes(
    problem: AdmmProblem,
    probe_points: Sequence[np.ndarray] = (),
    probe_points_y: Sequence[np.ndarray] = (),
    tol: float = 1e-8,
) -> StepsizeReport:
    """Check the step-size conditions on dense representations.

    Verifies H >= 0 and H + M'Sigma M > 0 for both blocks, and, where an
    analytic Hessian of the differentiable part is available, H - hess(point)
    >= 0 at every probe point. Violations are reported, not raised.
    """
    checks = []

    def psd_ok(mat, what):
        try:
            ok = check_psd(mat, tol)
            detail = f"min eig {_min_eig(mat):.3e}"
        except ValueError as exc:
            ok, detail = False, str(exc)
        checks.append((what, ok, detail))

    for side, lin_map, h, obj, probes in (
        ("H_f", problem.A, problem.H_f, problem.f, probe_points),
        ("H_g", problem.B, problem.H_g, problem.g, probe_points_y),
    ):
        n = lin_map.shape[1]
        h_dense = np.zeros((n, n)) if h is None else _map_dense(h)
        psd_ok(h_dense, f"{side} PSD")
        gram = _map_dense(lin_map).T @ (problem.sigma.diag[:, None] * _map_dense(lin_map))
        full = h_dense + gram
        min_eig = _min_eig(full)
        checks.append(
            (f"{side} + M'Sigma M positive definite", min_eig > tol, f"min eig {min_eig:.3e}")
        )
        if obj.hessian_d is not None:
            for i, point in enumerate(probes):
                psd_ok(h_dense - np.asarray(obj.hessian_d(point)), f"{side} dominates hess_d at probe {i}")
    return StepsizeReport(checks)


# ---------------------------------------------------------------------------
# Trace persistence

TRACE_HEADER = "iter,objective,primal_residual,alpha_t,seconds"


def _fmt(x: float) -> str:
    return repr(float(x))


def save_trace(path, trace: Sequence[TraceRecord], extra_columns: Optional[dict] = None) -> None:
    """Write the delimited-text trace; extra_columns maps name -> per-iteration list."""
    extra_columns = extra_columns or {}
    for name, values in extra_columns.items():
        if len(values) != len(trace):
            raise ValueError(f"extra column {name!r} has wrong length")
    header = TRACE_HEADER + "".join(f",{name}" for name in extra_columns)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i, rec in enumerate(trace):
            alpha = "" if rec.alpha_t is None else _fmt(rec.alpha_t)
            row = f"{rec.t},{_fmt(rec.objective)},{_fmt(rec.primal_residual)},{alpha},{_fmt(rec.seconds)}"
            row += "".join(f",{_fmt(values[i])}" for values in extra_columns.values())
            fh.write(row + "\n")


def load_trace(path) -> tuple[list[TraceRecord], dict]:
    """Read a trace file back; returns (records, extra column dict)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        base = TRACE_HEADER.split(",")
        if header[: len(base)] != base:
            raise ValueError("unrecognized trace header")
        extra_names = header[len(base):]
        records = []
        extras = {name: [] for name in extra_names}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            records.append(
                TraceRecord(
                    t=int(parts[0]),
                    objective=float(parts[1]),
                    primal_residual=float(parts[2]),
                    alpha_t=None if parts[3] == "" else float(parts[3]),
                    seconds=float(parts[4]),
                )
            )
            for name, val in zip(extra_names, parts[5:]):
                extras[name].append(float(val))
    return records, extras
