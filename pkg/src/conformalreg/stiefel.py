"""Minimization over the Stiefel manifold {X : X^T X = I} using curvilinear
search along Cayley-transform curves with Barzilai-Borwein step sizes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class SingularCayleyStep(RuntimeError):
    """The (I + dt/2 D) system of a Cayley step is singular; retry with a
    smaller dt."""


@dataclass(frozen=True)
class StiefelProblem:
    n: int
    k: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]  # Euclidean coordinate gradient


@dataclass
class StiefelOptions:
    max_iter: int = 1000
    grad_tol: float = 1e-6  # relative tangent-gradient norm
    dt0: float = 1e-2
    dt_min: float = 1e-10
    dt_max: float = 1e2
    window: int = 5  # nonmonotone line-search history
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    reorth_threshold: float = 1e-8

    def __post_init__(self):
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("require 0 < dt_min <= dt_max")
        if self.window < 1:
            raise ValueError("line-search window must be >= 1")


@dataclass
class StiefelResult:
    X: np.ndarray
    objective_trace: list = field(default_factory=list)
    grad_norm: float = np.nan
    iterations: int = 0
    reorthonormalizations: int = 0
    converged: bool = False


def cayley_step(X: np.ndarray, Y: np.ndarray, dt: float) -> np.ndarray:
    """One Cayley-transform step X -> Q X with Q = (I + dt/2 D)^-1 (I - dt/2 D)
    and D = Y X^T - X Y^T.

    The rank-2k structure of D is exploited via a Woodbury solve of a 2k x 2k
    system, so the cost is O(n k^2).
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return X
    k = X.shape[1]
    U = np.hstack([Y, X])  # D = U V^T
    V = np.hstack([X, -Y])
    B = np.eye(2 * k) + (dt / 2.0) * (V.T @ U)
    try:
        sol = np.linalg.solve(B, V.T @ X)
    except np.linalg.LinAlgError as exc:
        raise SingularCayleyStep(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularCayleyStep("non-finite Woodbury solve")
    return X - dt * (U @ sol)


def _tangent_gradient(X: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Projection G - X G^T X; vanishes exactly at manifold critical points."""
    return G - X @ (G.T @ X)


def _reorthonormalize(X: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(X)
    return Q * np.sign(np.diag(R))  # keep column orientation


def minimize(problem: StiefelProblem, X0: np.ndarray, opts: StiefelOptions | None = None) -> StiefelResult:
    """Curvilinear descent with alternating BB steps and a nonmonotone
    (windowed max) Armijo line search.

    The returned objective never exceeds the starting objective.
    """
    opts = opts or StiefelOptions()
    X = np.array(X0, dtype=np.float64)
    if X.shape != (problem.n, problem.k):
        raise ValueError(f"X0 must have shape ({problem.n}, {problem.k})")
    feas = np.abs(X.T @ X - np.eye(problem.k)).max()
    if feas > 1e-8:
        raise ValueError(f"X0 infeasible: ||X^T X - I|| = {feas:.2e}")

    f = float(problem.objective(X))
    G = np.asarray(problem.gradient(X), dtype=np.float64)
    if not np.isfinite(f) or not np.all(np.isfinite(G)):
        raise ValueError("non-finite objective or gradient at X0")

    result = StiefelResult(X=X, objective_trace=[f])
    tangent = _tangent_gradient(X, G)
    gnorm0 = max(np.linalg.norm(tangent), 1e-30)
    dt = opts.dt0
    history = [f]
    s_prev = y_prev = None

    for it in range(opts.max_iter):
        gnorm = np.linalg.norm(tangent)
        result.grad_norm = gnorm
        if gnorm <= opts.grad_tol * max(1.0, gnorm0):
            result.converged = True
            break

        # directional derivative of f(Q(dt) X) at dt = 0 is -||D||_F^2 / 2
        XtG = X.T @ G
        d2 = 2.0 * (np.einsum("ij,ij->", G, G) - np.einsum("ij,ji->", XtG, XtG))
        deriv0 = -0.5 * d2
        if deriv0 >= 0:  # numerically flat; nothing to gain
            result.converged = True
            break

        # alternating Barzilai-Borwein step
        if s_prev is not None:
            ss = np.einsum("ij,ij->", s_prev, s_prev)
            sy = abs(np.einsum("ij,ij->", s_prev, y_prev))
            yy = np.einsum("ij,ij->", y_prev, y_prev)
            if sy > 1e-30:
                dt = ss / sy if it % 2 == 0 else sy / max(yy, 1e-30)
        dt = float(np.clip(dt, opts.dt_min, opts.dt_max))

        f_ref = max(history[-opts.window:])
        accepted = False
        for _ in range(opts.max_backtracks):
            try:
                X_new = cayley_step(X, G, dt)
            except SingularCayleyStep:
                dt *= opts.backtrack
                continue
            f_new = float(problem.objective(X_new))
            if np.isfinite(f_new) and f_new <= f_ref + opts.armijo * dt * deriv0:
                accepted = True
                break
            dt *= opts.backtrack
        if not accepted:
            break

        drift = np.abs(X_new.T @ X_new - np.eye(problem.k)).max()
        if drift > opts.reorth_threshold:
            X_new = _reorthonormalize(X_new)
            result.reorthonormalizations += 1

        G_new = np.asarray(problem.gradient(X_new), dtype=np.float64)
        if not np.all(np.isfinite(G_new)):
            raise ValueError("non-finite gradient during minimization")
        s_prev, y_prev = X_new - X, G_new - G
        X, G, f = X_new, G_new, f_new
        tangent = _tangent_gradient(X, G)
        history.append(f)
        result.objective_trace.append(f)
        result.iterations = it + 1

    result.X = X
    return result
