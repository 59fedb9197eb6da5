"""Empirical probes of the convergence conditions.

These evaluate, at chosen points, the curvature inner product that the
restricted-strong-convexity condition bounds from below, and the three
residual norms of an approximately stationary triple. Probing one
subgradient selection per point is an empirical check, not a proof: the
underlying condition quantifies over every subgradient, which is not
exhaustively checkable at nonsmooth points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RscProbeResult",
    "FospResidual",
    "rsc_probe",
    "fosp_residuals",
    "probe_trajectory",
    "write_probe_report",
]


@dataclass(frozen=True)
class RscProbeResult:
    t: int | None
    lhs: float          # <(x-x*, y-y*), (xi_x - xi*, zeta_y - zeta*)>
    penalty: float      # 0.5 ||Ax + By - c||^2_Sigma
    dist_x: float
    dist_y: float

    @property
    def slack(self) -> float:
        """lhs plus the constraint-violation allowance."""
        return self.lhs + self.penalty


@dataclass(frozen=True)
class FospResidual:
    primal: float   # ||A x* + B y* - c||
    dual_x: float   # ||-A'u* - xi*||
    dual_y: float   # ||-B'u* - zeta*||


def rsc_probe(
    problem,
    subgrad_selector,
    x: np.ndarray,
    y: np.ndarray,
    x_star: np.ndarray,
    y_star: np.ndarray,
    xi_star: np.ndarray,
    zeta_star: np.ndarray,
    t: int | None = None,
) -> RscProbeResult:
    """Curvature inner product and slack terms at one probe point.

    `subgrad_selector(x, y)` supplies one subgradient pair at the probe; the
    caller fixes (xi_star, zeta_star) once at the anchor.
    """
    xi, zeta = subgrad_selector(x, y)
    lhs = float((x - x_star) @ (xi - xi_star)) + float((y - y_star) @ (zeta - zeta_star))
    violation = problem.A.matvec(x) + problem.B.matvec(y) - problem.c
    penalty = 0.5 * float(violation @ problem.sigma.matvec(violation))
    return RscProbeResult(
        t=t,
        lhs=lhs,
        penalty=penalty,
        dist_x=float(np.linalg.norm(x - x_star)),
        dist_y=float(np.linalg.norm(y - y_star)),
    )


def fosp_residuals(
    problem,
    x_star: np.ndarray,
    y_star: np.ndarray,
    u_star: np.ndarray,
    xi_star: np.ndarray,
    zeta_star: np.ndarray,
) -> FospResidual:
    """Feasibility and dual-alignment residuals of a candidate triple."""
    primal = problem.A.matvec(x_star) + problem.B.matvec(y_star) - problem.c
    dual_x = -problem.A.rmatvec(u_star) - xi_star
    dual_y = -problem.B.rmatvec(u_star) - zeta_star
    return FospResidual(
        primal=float(np.linalg.norm(primal)),
        dual_x=float(np.linalg.norm(dual_x)),
        dual_y=float(np.linalg.norm(dual_y)),
    )


def probe_trajectory(
    problem,
    subgrad_selector,
    iterates,
    x_star: np.ndarray,
    y_star: np.ndarray,
    xi_star: np.ndarray,
    zeta_star: np.ndarray,
) -> list[RscProbeResult]:
    """Probe along a list of (x_t, y_t) pairs; summary data only, no pass/fail."""
    return [
        rsc_probe(problem, subgrad_selector, x, y, x_star, y_star, xi_star, zeta_star, t=t)
        for t, (x, y) in enumerate(iterates, start=1)
    ]


def write_probe_report(path, results) -> None:
    """Sidecar report: one row per probe with the raw curvature quantities."""
    with open(path, "w") as fh:
        fh.write("t,lhs,penalty,slack,dist_x,dist_y\n")
        for r in results:
            t = "" if r.t is None else str(r.t)
            fh.write(
                f"{t},{r.lhs!r},{r.penalty!r},{r.slack!r},{r.dist_x!r},{r.dist_y!r}\n"
            )
