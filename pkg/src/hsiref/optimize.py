"""Dense Levenberg-Marquardt with fixed, reproducible internals.

Damping starts at 1e-3 and moves by x10 on rejection / x0.1 on acceptance;
the normal equations use Marquardt diagonal scaling; Jacobians are forward
finite differences.  Convergence is declared when the relative cost change
of an accepted step falls below ``rel_cost_tol`` (or the optimizer stalls at
a stationary point); running out of iterations reports ``converged=False``
with the best parameters so far.

Besides the plain residual-vector interface there is a Gram-matrix interface
for problems whose residual vector is too large to materialize: the caller
supplies ``cost_fn`` and ``gram_fn`` returning (cost, J^T J, J^T r) computed
from the same finite-difference scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

_MAX_DAMPING = 1e14
_MIN_DAMPING = 1e-12


@dataclass
class LMResult:
    params: np.ndarray
    cost: float
    n_iter: int
    converged: bool


def finite_difference_steps(params: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    return rel_step * np.maximum(np.abs(params), 1.0)


def _lm_core(
    cost_fn: Callable[[np.ndarray], float],
    gram_fn: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    p0: np.ndarray,
    *,
    max_iter: int,
    rel_cost_tol: float,
    damping_init: float,
    damping_up: float,
    damping_down: float,
) -> LMResult:
    params = np.asarray(p0, dtype=np.float64).copy()
    damping = damping_init
    converged = False
    n_iter = 0
    cost = None

    for _ in range(max_iter):
        n_iter += 1
        cost0, jtj, jtr = gram_fn(params)
        cost = cost0
        if cost0 <= 0.0:
            converged = True
            break
        diag = np.diag(jtj).copy()
        diag_floor = 1e-30 * max(float(diag.max(initial=0.0)), 1.0)
        diag = np.maximum(diag, diag_floor)

        accepted = False
        new_cost = cost0
        while damping <= _MAX_DAMPING:
            try:
                step = np.linalg.solve(jtj + damping * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                damping *= damping_up
                continue
            trial = params + step
            trial_cost = cost_fn(trial)
            if np.isfinite(trial_cost) and trial_cost < cost0:
                params = trial
                new_cost = trial_cost
                damping = max(damping * damping_down, _MIN_DAMPING)
                accepted = True
                break
            damping *= damping_up
        if not accepted:
            # no descent direction at maximal damping: numerically stationary
            converged = True
            break
        rel_change = (cost0 - new_cost) / max(cost0, np.finfo(np.float64).tiny)
        cost = new_cost
        if rel_change < rel_cost_tol:
            converged = True
            break

    if cost is None:
        cost = cost_fn(params)
    return LMResult(params=params, cost=float(cost), n_iter=n_iter, converged=converged)


def levenberg_marquardt(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    p0,
    *,
    max_iter: int = 200,
    rel_cost_tol: float = 1e-10,
    damping_init: float = 1e-3,
    damping_up: float = 10.0,
    damping_down: float = 0.1,
    fd_rel_step: float = 1e-6,
    cost_offset: float = 0.0,
) -> LMResult:
    """Minimize ``sum(residual_fn(p)**2) + cost_offset`` over p.

    ``cost_offset`` lets callers minimize a reduced residual whose squared
    norm differs from the real objective by a parameter-independent constant
    while keeping cost reporting and the relative-change criterion faithful.
    """

    def cost_fn(p: np.ndarray) -> float:
        r = residual_fn(p)
        return float(r @ r) + cost_offset

    def gram_fn(p: np.ndarray):
        r0 = residual_fn(p)
        cost0 = float(r0 @ r0) + cost_offset
        steps = finite_difference_steps(p, fd_rel_step)
        n = p.size
        cols = []
        for k in range(n):
            shifted = p.copy()
            shifted[k] += steps[k]
            cols.append((residual_fn(shifted) - r0) / steps[k])
        jtj = np.empty((n, n))
        jtr = np.empty(n)
        for a in range(n):
            jtr[a] = float(cols[a] @ r0)
            for b in range(a, n):
                jtj[a, b] = jtj[b, a] = float(cols[a] @ cols[b])
        return cost0, jtj, jtr

    return _lm_core(
        cost_fn,
        gram_fn,
        np.asarray(p0, dtype=np.float64),
        max_iter=max_iter,
        rel_cost_tol=rel_cost_tol,
        damping_init=damping_init,
        damping_up=damping_up,
        damping_down=damping_down,
    )


def levenberg_marquardt_gram(
    cost_fn: Callable[[np.ndarray], float],
    gram_fn: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    p0,
    *,
    max_iter: int = 200,
    rel_cost_tol: float = 1e-10,
    damping_init: float = 1e-3,
    damping_up: float = 10.0,
    damping_down: float = 0.1,
) -> LMResult:
    """LM for callers that assemble the normal equations themselves."""
    return _lm_core(
        cost_fn,
        gram_fn,
        np.asarray(p0, dtype=np.float64),
        max_iter=max_iter,
        rel_cost_tol=rel_cost_tol,
        damping_init=damping_init,
        damping_up=damping_up,
        damping_down=damping_down,
    )
