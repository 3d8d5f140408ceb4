"""Joint minimization of the spectral-coefficient alignment energy over the
conformal factor w and an orthonormal frame, by proximal alternating
minimization hybridized with an augmented Lagrangian for the area constraint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from . import spectrum, stiefel
from .features import FeatureSet, recompute_features
from .fem import FemOperators, deform

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PursuitProblem:
    """Immutable data of one registration instance.

    The source side contributes only its mass matrix, truncated eigenbasis
    ``basis_src`` (n1 x k, mass-orthonormal) and feature matrix. The target
    side contributes full operators plus the corresponding features, ordered
    identically to the source features.
    """

    mass_src: np.ndarray  # (n1,) lumped mass diagonal
    basis_src: np.ndarray  # (n1, k)
    feats_src: FeatureSet
    fem_tgt: FemOperators
    feats_tgt: FeatureSet
    area_budget: float  # A = total source area
    r1: float = 10.0
    r2: float = 10.0
    r3: float = 1.0
    r4: float = 0.01

    def __post_init__(self):
        if self.feats_src.n_features != self.feats_tgt.n_features:
            raise ValueError("source and target feature counts differ")
        if self.area_budget <= 0:
            raise ValueError("area budget must be positive")
        if min(self.r1, self.r2, self.r3, self.r4) <= 0:
            raise ValueError("all weights must be positive")
        gram = self.basis_src.T @ (self.basis_src * self.mass_src[:, None])
        err = np.abs(gram - np.eye(self.k)).max()
        if err > 1e-6:
            raise ValueError(f"source basis not mass-orthonormal (err {err:.2e})")
        # coefficient target K = F^T M1 Phi, fixed for the whole solve
        K = self.feats_src.values.T @ (self.basis_src * self.mass_src[:, None])
        object.__setattr__(self, "_coeff_target", K)

    @property
    def k(self) -> int:
        return self.basis_src.shape[1]

    @property
    def coeff_target(self) -> np.ndarray:
        return self._coeff_target


@dataclass
class PursuitState:
    """Current iterate: factor w, orthonormal frame, multiplier b.

    ``w_ref``/``psibar_ref`` are the proximal anchors (previous outer
    iterate); ``eta`` and ``eta_w`` are the proximal step weights of the frame
    and factor blocks, ``inf`` disables the corresponding proximal term. The
    factor block uses a much smaller step: the eigen-trace term rewards metric
    concentration at fixed area, and a strong proximal anchor keeps the factor
    near the constrained critical point instead of drifting toward degenerate
    metrics.
    """

    w: np.ndarray
    psibar: np.ndarray
    b: float = 0.0
    eta: float = 100.0
    eta_w: float = 1e-5
    w_ref: np.ndarray | None = None
    psibar_ref: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.psibar = np.asarray(self.psibar, dtype=np.float64)
        if np.any(self.w <= 0):
            raise ValueError("w must be strictly positive")
        if self.w_ref is None:
            self.w_ref = self.w.copy()
        if self.psibar_ref is None:
            self.psibar_ref = self.psibar.copy()

    @property
    def inv_eta(self) -> float:
        return 0.0 if np.isinf(self.eta) else 1.0 / self.eta

    @property
    def inv_eta_w(self) -> float:
        return 0.0 if np.isinf(self.eta_w) else 1.0 / self.eta_w


@dataclass(frozen=True)
class EnergyBreakdown:
    coefficient: float
    eigen: float
    harmonic: float
    area_residual: float
    penalty: float
    prox_psibar: float
    prox_w: float

    @property
    def total(self) -> float:
        """Model energy plus the multiplier penalty, without proximal terms."""
        return self.coefficient + self.eigen + self.harmonic + self.penalty

    @property
    def model(self) -> float:
        """Model energy alone (coefficient + eigen + harmonic)."""
        return self.coefficient + self.eigen + self.harmonic

    @property
    def total_with_prox(self) -> float:
        return self.total + self.prox_psibar + self.prox_w


@dataclass
class PursuitConfig:
    eta: float = 100.0
    eta_w: float = 1e-5  # factor block: strong anchor, see PursuitState
    warm_start_multiplier: bool = True
    rounds: int = 1  # multiplier rounds per outer step
    max_outer: int = 500
    energy_tol: float = 1e-6
    step_tol: float = 1e-3  # relative block-step stagnation threshold
    patience: int = 10
    stall_tol: float = 1e-4  # reinit trigger on relative decrease
    stall_window: int = 10
    max_reinits: int = 5
    inner_max_iter: int = 100  # Stiefel iterations per outer step
    inner_grad_tol: float = 1e-6
    lbfgs_memory: int = 10
    lbfgs_max_iter: int = 50
    w_floor: float = 1e-10
    seed: int = 0

    def stiefel_options(self) -> stiefel.StiefelOptions:
        return stiefel.StiefelOptions(
            max_iter=self.inner_max_iter, grad_tol=self.inner_grad_tol
        )


@dataclass
class PursuitResult:
    w: np.ndarray
    psibar: np.ndarray
    b: float
    history: list
    converged: bool
    n_reinits: int = 0
    problem: PursuitProblem | None = None


# ---------------------------------------------------------------------------
# Energy and gradients


def _coeff_residual(problem: PursuitProblem, w: np.ndarray, psibar: np.ndarray) -> np.ndarray:
    """K - G^T diag(w) L^T Psi_bar (l x k)."""
    scale = w * problem.fem_tgt.lump_sqrt
    return problem.coeff_target - problem.feats_tgt.values.T @ (scale[:, None] * psibar)


def energy(problem: PursuitProblem, state: PursuitState) -> EnergyBreakdown:
    """Evaluate every term of the augmented Lagrangian plus proximal terms."""
    w, psibar = state.w, state.psibar
    fem = problem.fem_tgt
    C = _coeff_residual(problem, w, psibar)
    dops = deform(fem, w)
    residual = dops.deformed_area - problem.area_budget
    inv_eta = state.inv_eta
    out = EnergyBreakdown(
        coefficient=0.5 * problem.r1 * float(np.sum(C * C)),
        eigen=0.5 * problem.r2 * dops.sbar_quadratic(psibar),
        harmonic=0.5 * problem.r3 * float(w @ (fem.stiffness @ w)),
        area_residual=float(residual),
        penalty=0.5 * problem.r4 * float(residual + state.b) ** 2,
        prox_psibar=0.5 * inv_eta * float(np.sum((psibar - state.psibar_ref) ** 2)),
        prox_w=0.5 * state.inv_eta_w * float(np.sum((w - state.w_ref) ** 2)),
    )
    if not np.isfinite(out.total_with_prox):
        raise FloatingPointError("non-finite energy; state is invalid")
    return out


def grad_psibar(problem: PursuitProblem, state: PursuitState) -> np.ndarray:
    """Euclidean gradient of energy + proximal term with respect to the frame."""
    w, psibar = state.w, state.psibar
    fem = problem.fem_tgt
    scale = w * fem.lump_sqrt
    C = _coeff_residual(problem, w, psibar)
    g = -problem.r1 * scale[:, None] * (problem.feats_tgt.values @ C)
    g += problem.r2 * deform(fem, w).apply_sbar(psibar)
    g += state.inv_eta * (psibar - state.psibar_ref)
    return g


def grad_w(problem: PursuitProblem, state: PursuitState) -> np.ndarray:
    """Gradient of the augmented Lagrangian + proximal term with respect to w.

    Derived analytically as the exact differential of :func:`energy`; checked
    against central finite differences in the test suite.
    """
    w, psibar = state.w, state.psibar
    fem = problem.fem_tgt
    l = fem.lump_sqrt
    C = _coeff_residual(problem, w, psibar)
    GC = problem.feats_tgt.values @ C  # (n2, k)
    g = -problem.r1 * l * np.einsum("ij,ij->i", GC, psibar)

    Z = psibar / (w * l)[:, None]
    SZ = fem.stiffness @ Z
    g += -problem.r2 / w * np.einsum("ij,ij->i", SZ, Z)

    g += problem.r3 * (fem.stiffness @ w)
    residual = float(np.dot(w**2, fem.mass)) - problem.area_budget
    g += problem.r4 * (residual + state.b) * 2.0 * fem.mass * w
    g += state.inv_eta_w * (w - state.w_ref)
    return g


# ---------------------------------------------------------------------------
# PAM outer iteration


def _solve_psibar(problem: PursuitProblem, state: PursuitState, config: PursuitConfig) -> np.ndarray:
    """Frame subproblem: minimize the psibar-dependent energy terms plus the
    proximal anchor over the orthonormality manifold."""
    n, k = state.psibar.shape

    def make_state(X):
        return PursuitState(
            w=state.w, psibar=X, b=state.b, eta=state.eta, eta_w=state.eta_w,
            w_ref=state.w_ref, psibar_ref=state.psibar_ref,
        )

    def obj(X):
        e = energy(problem, make_state(X))
        return e.coefficient + e.eigen + e.prox_psibar

    sproblem = stiefel.StiefelProblem(
        n=n, k=k, objective=obj,
        gradient=lambda X: grad_psibar(problem, make_state(X)),
    )
    return stiefel.minimize(sproblem, state.psibar, config.stiefel_options()).X


def _solve_w(problem: PursuitProblem, state: PursuitState, config: PursuitConfig) -> np.ndarray:
    """Factor subproblem via bounded limited-memory quasi-Newton; the lower
    bound keeps w strictly positive. Never returns a worse point."""

    def make_state(w):
        return PursuitState(
            w=w, psibar=state.psibar, b=state.b, eta=state.eta, eta_w=state.eta_w,
            w_ref=state.w_ref, psibar_ref=state.psibar_ref,
        )

    def fun(wvec):
        st = make_state(wvec)
        e = energy(problem, st)
        return e.total_with_prox, grad_w(problem, st)

    f0 = fun(state.w)[0]
    res = scipy_minimize(
        fun,
        state.w,
        jac=True,
        method="L-BFGS-B",
        bounds=[(config.w_floor, None)] * len(state.w),
        options={"maxcor": config.lbfgs_memory, "maxiter": config.lbfgs_max_iter},
    )
    if not np.all(np.isfinite(res.x)) or res.fun > f0:
        return state.w  # safeguard: keep the current iterate
    return np.maximum(res.x, config.w_floor)


def pam_step(problem: PursuitProblem, state: PursuitState, config: PursuitConfig) -> tuple[PursuitState, dict]:
    """One outer iteration: frame update, then ``rounds`` alternations of
    factor update and multiplier update.

    The returned record carries energies before/after evaluated at the
    multiplier value in effect during the step, so the descent inequality
    (new energy + proximal steps <= old energy) is checkable row by row.
    """
    b_start = state.b
    anchored = PursuitState(
        w=state.w, psibar=state.psibar, b=b_start, eta=config.eta, eta_w=config.eta_w,
        w_ref=state.w, psibar_ref=state.psibar,
    )
    e_before = energy(problem, anchored)

    psibar_new = _solve_psibar(problem, anchored, config)
    anchored.psibar = psibar_new

    b = b_start
    w_new = anchored.w
    for _ in range(max(config.rounds, 1)):
        anchored.b = b
        w_new = _solve_w(problem, anchored, config)
        anchored.w = w_new
        residual = float(np.dot(w_new**2, problem.fem_tgt.mass)) - problem.area_budget
        b = b + residual

    anchored.b = b_start  # evaluate descent at the multiplier used by the step
    e_after = energy(problem, anchored)
    prox = 0.5 / config.eta * float(np.sum((psibar_new - state.psibar) ** 2)) + (
        0.5 / config.eta_w * float(np.sum((w_new - state.w) ** 2))
    )
    if e_after.total + prox > e_before.total + 1e-12 * max(1.0, abs(e_before.total)):
        # numerical safeguard: reject the factor update, keep the frame step
        anchored.w = w_new = state.w.copy()
        b = b_start
        e_after = energy(problem, anchored)
        prox = 0.5 / config.eta * float(np.sum((psibar_new - state.psibar) ** 2))

    new_state = PursuitState(
        w=w_new, psibar=psibar_new, b=b, eta=config.eta, eta_w=config.eta_w,
        w_ref=w_new.copy(), psibar_ref=psibar_new.copy(),
        iteration=state.iteration + 1,
    )
    record = {
        "iteration": new_state.iteration,
        "coefficient_term": e_after.coefficient,
        "eigen_term": e_after.eigen,
        "harmonic_term": e_after.harmonic,
        "area_residual": e_after.area_residual,
        "penalty_term": e_after.penalty,
        "total": e_after.total,
        "total_before": e_before.total,
        "prox": prox,
        "model": e_after.model,
        "step_norm_w": float(np.linalg.norm(w_new - state.w)),
        "step_norm_psibar": float(np.linalg.norm(psibar_new - state.psibar)),
        "step_rel_w": float(
            np.linalg.norm(w_new - state.w) / max(np.linalg.norm(state.w), 1e-30)
        ),
        "step_rel_psibar": float(
            np.linalg.norm(psibar_new - state.psibar) / np.sqrt(psibar_new.shape[1])
        ),
        "reinit": 0,
    }
    return new_state, record


def initial_state(problem: PursuitProblem, psi0: np.ndarray, config: PursuitConfig) -> PursuitState:
    """Start from the constant factor satisfying the area constraint and the
    frame built from the target's natural truncated basis.

    psi0 must be mass-orthonormal on the target, which makes L psi0 an
    orthonormal frame regardless of the starting factor.

    With ``warm_start_multiplier`` the multiplier starts at the value that
    makes the starting factor stationary along uniform rescaling: the
    eigen-trace term always profits from inflating the metric, and a zero
    multiplier would let the area drift far out before the updates b += r
    accumulate enough to pull it back.
    """
    fem = problem.fem_tgt
    w0 = np.full(fem.n, np.sqrt(problem.area_budget / fem.total_area()))
    psibar0 = fem.lump_sqrt[:, None] * psi0
    b0 = 0.0
    if config.warm_start_multiplier:
        trace0 = deform(fem, w0).sbar_quadratic(psibar0)
        b0 = problem.r2 * trace0 / (2.0 * problem.area_budget * problem.r4)
    return PursuitState(w=w0, psibar=psibar0, b=b0, eta=config.eta, eta_w=config.eta_w)


def _default_psi0(problem: PursuitProblem) -> np.ndarray:
    basis = spectrum.lb_basis(problem.fem_tgt, problem.k + 1)
    return basis.vectors[:, 1:]


def _converged(history: list, config: PursuitConfig) -> bool:
    """Stop on stagnation of the model energy (coefficient + eigen + harmonic;
    the multiplier penalty carries a large constant offset that would mask
    real progress) or when both block updates have become negligibly small
    relative to the iterate for ``patience`` consecutive iterations."""
    if len(history) <= config.patience:
        return False
    recent = [h for h in history[-config.patience - 1 :] if not h.get("reinit")]
    if len(recent) <= config.patience:
        return False
    ref, last = recent[0]["model"], recent[-1]["model"]
    if abs(ref - last) <= config.energy_tol * max(abs(ref), 1.0):
        return True
    return all(
        h["step_rel_w"] <= config.step_tol and h["step_rel_psibar"] <= config.step_tol
        for h in recent[1:]
    )


def solve(
    problem: PursuitProblem,
    config: PursuitConfig | None = None,
    psi0: np.ndarray | None = None,
) -> PursuitResult:
    """Plain PAM solve (no reinitialization)."""
    config = config or PursuitConfig()
    state = initial_state(problem, psi0 if psi0 is not None else _default_psi0(problem), config)
    history: list[dict] = []
    totals: list[float] = []
    converged = False
    for _ in range(config.max_outer):
        state, record = pam_step(problem, state, config)
        history.append(record)
        totals.append(record["total"])
        if _converged(history, config):
            converged = True
            break
    if not converged:
        logger.warning("pursuit did not converge within %d outer iterations", config.max_outer)
    return PursuitResult(
        w=state.w, psibar=state.psibar, b=state.b,
        history=history, converged=converged, problem=problem,
    )


def _stalled(totals: list, config: PursuitConfig) -> bool:
    if len(totals) <= config.stall_window:
        return False
    ref = totals[-config.stall_window - 1]
    return (ref - totals[-1]) < config.stall_tol * max(abs(ref), 1.0)


def _reinit(problem, state, config):
    """Reset the frame to the warm-started deformed-trace minimizer and
    recompute metric-dependent features; accepted only when the total energy
    does not increase."""
    dops = deform(problem.fem_tgt, state.w)
    psibar_new = spectrum.reinit_basis(dops, state.psibar, config.stiefel_options())
    feats = problem.feats_tgt
    if feats.kind == "wks":
        deformed_ops = FemOperators(mass=dops.mass_deformed, stiffness=problem.fem_tgt.stiffness)
        basis = spectrum.lb_basis(deformed_ops, feats.params["k"])
        feats_new = recompute_features(feats, deformed_ops, basis=basis)
    else:
        feats_new = recompute_features(feats, dops)
    candidate = replace(problem, feats_tgt=feats_new)
    before = energy(problem, state).total
    trial = PursuitState(
        w=state.w, psibar=psibar_new, b=state.b, eta=state.eta, eta_w=state.eta_w,
        w_ref=state.w, psibar_ref=psibar_new,
    )
    after = energy(candidate, trial).total
    if after <= before + 1e-12 * max(1.0, abs(before)):
        return candidate, psibar_new, before, after, True
    return problem, state.psibar, before, before, False


def solve_with_reinit(
    problem: PursuitProblem,
    config: PursuitConfig | None = None,
    psi0: np.ndarray | None = None,
) -> PursuitResult:
    """PAM solve with stall-triggered reinitialization of the frame (and of
    metric-dependent features)."""
    config = config or PursuitConfig()
    state = initial_state(problem, psi0 if psi0 is not None else _default_psi0(problem), config)
    history: list[dict] = []
    totals: list[float] = []
    n_reinits = 0
    converged = False
    since_reinit = 0
    for _ in range(config.max_outer):
        state, record = pam_step(problem, state, config)
        history.append(record)
        totals.append(record["total"])
        since_reinit += 1
        if _converged(history, config):
            converged = True
            break
        if (
            n_reinits < config.max_reinits
            and since_reinit > config.stall_window
            and _stalled(totals, config)
        ):
            problem, psibar, e_before, e_after, accepted = _reinit(state=state, problem=problem, config=config)
            since_reinit = 0  # space out attempts even when one is rejected
            if accepted:
                n_reinits += 1
                state = PursuitState(
                    w=state.w, psibar=psibar, b=state.b, eta=config.eta, eta_w=config.eta_w,
                    iteration=state.iteration,
                )
                history.append({
                    **{k: np.nan for k in history[-1]},
                    "iteration": state.iteration,
                    "reinit": 1,
                    "total_before": e_before,
                    "total": e_after,
                    "prox": 0.0,
                })
                totals.append(e_after)
    if not converged:
        logger.warning("pursuit (reinit) did not converge within %d outer iterations", config.max_outer)
    return PursuitResult(
        w=state.w, psibar=state.psibar, b=state.b,
        history=history, converged=converged, n_reinits=n_reinits, problem=problem,
    )


HISTORY_COLUMNS = (
    "iteration",
    "coefficient_term",
    "eigen_term",
    "harmonic_term",
    "area_residual",
    "total",
    "penalty_term",
    "total_before",
    "prox",
    "reinit",
)


def write_history_csv(history: list, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join(f"{row.get(c, np.nan)}" for c in HISTORY_COLUMNS) + "\n")
