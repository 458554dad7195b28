"""Small dense Levenberg-Marquardt for manifold-valued parameters.

The problem is described by two callables:

* ``evaluate(x) -> (r, J)``: stacked (already whitened) residuals and their
  Jacobian with respect to a local tangent perturbation of ``x``;
* ``retract(x, dx) -> x'``: applies a tangent step.

``J`` may be a dense array or a ``scipy.sparse`` matrix. Cost is ``r @ r``. Robust kernels are handled by the caller through
``cost_fn``, which must return the true (robustified) cost of a state; the
whitened ``r`` is then the IRLS-reweighted residual at that state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass(frozen=True)
class LMConfig:
    damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 3.0
    max_iterations: int = 50
    step_tol: float = 1e-10
    # absolute threshold, applied as cost_tol * (1 + cost)
    cost_tol: float = 1e-14
    # a small cost decrease only counts as convergence once |J^T r| <= grad_tol * (1 + cost)
    grad_tol: float = 1e-6
    max_rejections: int = 12


@dataclass
class LMResult:
    x: Any
    cost: float
    initial_cost: float
    iterations: int
    accepted: int
    converged: bool
    history: list = field(default_factory=list)
    jacobian: np.ndarray | None = None
    residual: np.ndarray | None = None


def levenberg_marquardt(
    evaluate: Callable,
    x0,
    retract: Callable,
    config: LMConfig | None = None,
    cost_fn: Callable | None = None,
    solve: Callable | None = None,
    project: Callable | None = None,
) -> LMResult:
    """Minimize ``cost(x)`` from ``x0``.

    ``solve(H, g, J, r) -> dx`` may replace the default dense solve of the
    damped normal equations ``H dx = -g`` (e.g. for Schur elimination).
    ``project(x) -> x`` enforces box constraints after each retraction.
    The returned state is the best one seen; cost never increases across
    accepted iterations.
    """
    cfg = config or LMConfig()
    x = x0
    r, J = evaluate(x)
    cost = float(cost_fn(x)) if cost_fn is not None else float(r @ r)
    initial = cost
    history = [cost]
    mu = cfg.damping
    accepted = 0
    converged = False
    it = 0
    while it < cfg.max_iterations:
        it += 1
        H = J.T @ J
        g = np.asarray(J.T @ r).ravel()
        if not np.any(g):
            converged = True
            break
        hdiag = np.asarray(H.diagonal())
        diag = np.maximum(hdiag, 1e-12 * max(1.0, float(np.max(hdiag))))
        step_taken = False
        for _ in range(cfg.max_rejections):
            Hd = H + (sp.diags(mu * diag, format="csr") if sp.issparse(H) else np.diag(mu * diag))
            try:
                dx = solve(Hd, g, J, r) if solve is not None else _solve(Hd, -g)
            except np.linalg.LinAlgError:
                mu *= cfg.damping_up
                continue
            if not np.all(np.isfinite(dx)):
                mu *= cfg.damping_up
                continue
            tiny = np.linalg.norm(dx) < cfg.step_tol
            x_new = retract(x, dx)
            if project is not None:
                x_new = project(x_new)
            r_new, J_new = evaluate(x_new)
            cost_new = float(cost_fn(x_new)) if cost_fn is not None else float(r_new @ r_new)
            if tiny:
                # keep a final polishing step when it does not hurt, then stop
                if np.isfinite(cost_new) and cost_new <= cost:
                    x, r, J, cost = x_new, r_new, J_new, cost_new
                    history.append(cost)
                    accepted += 1
                converged = True
                break
            if np.isfinite(cost_new) and cost_new < cost:
                decrease = cost - cost_new
                x, r, J, cost = x_new, r_new, J_new, cost_new
                history.append(cost)
                accepted += 1
                mu = max(mu / cfg.damping_down, 1e-15)
                step_taken = True
                if decrease < cfg.cost_tol * (1.0 + cost):
                    g_new = np.asarray(J.T @ r).ravel()
                    converged = bool(np.linalg.norm(g_new) <= cfg.grad_tol * (1.0 + cost))
                break
            mu *= cfg.damping_up
        if converged:
            break
        if not step_taken:
            # no decrease possible from here at any damping tried
            converged = bool(np.linalg.norm(g) <= cfg.grad_tol * (1.0 + cost) or cost <= cfg.cost_tol)
            break
    return LMResult(
        x=x,
        cost=cost,
        initial_cost=initial,
        iterations=it,
        accepted=accepted,
        converged=converged,
        history=history,
        jacobian=J,
        residual=r,
    )


def _solve(H, b):
    if sp.issparse(H):
        x = spla.spsolve(H.tocsc(), b)
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError("singular normal equations")
        return x
    try:
        c = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return np.linalg.solve(H, b)
    y = np.linalg.solve(c, b)
    return np.linalg.solve(c.T, y)
