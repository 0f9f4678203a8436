"""Joint estimation of term-topic loadings and regression coefficients.

Minimizes ``||y - X L b||^2`` over non-negative loadings ``L`` (p x m) and
unconstrained coefficients ``b`` (m) by alternating an exact least-squares
solve for ``b`` with one projected gradient step on ``L`` per iteration.
The step size is chosen by a backtracking search against a sufficient-
decrease condition, warm-started from the previous iteration's step.

Gradients here are of the half squared error ``f(L) = 0.5 ||y - X L b||^2``,
so ``grad = X'(X L b - y) b'`` with no stray factor of two; the search
condition compares the same ``f`` on both sides and is therefore
scale-consistent.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    InvalidRank,
    RankDeficientWarning,
    ShapeMismatch,
    StepSearchExhausted,
)

FORMAT_NORMAL_FIT = "ssmf-normal-fit-v1"

# Above this column count X'X is kept sparse rather than densified.
_DENSE_GRAM_MAX_TERMS = 4096


@dataclass(frozen=True)
class FitConfig:
    """Optimizer constants shared by the normal and ordinal fits.

    ``sigma`` is the sufficient-decrease constant, ``gamma_shrink`` the
    backtracking multiplier (steps grow by its inverse while the condition
    holds). ``window`` is the rolling-window width, in periods, for the
    dynamic ordinal fit. Defaults follow the reference constants
    (sigma 0.01, shrink 0.9, relative tolerance 1e-4).
    """

    sigma: float = 0.01
    gamma_shrink: float = 0.9
    rel_tol: float = 1e-4
    max_iters: int = 500
    max_substeps: int = 60
    seed: int = 0
    window: int = 2
    logistic_tol: float = 1e-8
    logistic_max_iter: int = 100
    ridge: float = 1e-6

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if not 0 < self.gamma_shrink < 1:
            raise ValueError("gamma_shrink must lie in (0, 1)")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1 or self.max_substeps < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")


@dataclass
class NormalFit:
    """Result of the normal-response fit.

    ``loadings`` is p x m and elementwise non-negative; ``coef`` is the
    m-vector of regression coefficients. ``objective_trace`` holds the
    squared-error objective at initialization and after each iteration and
    is non-increasing.
    """

    loadings: np.ndarray
    coef: np.ndarray
    objective_trace: list[float]
    iterations: int
    converged: bool
    config: FitConfig

    @property
    def n_terms(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_topics(self) -> int:
        return self.loadings.shape[1]

    def predict(self, x):
        return predict_normal(x, self)

    def to_json(self) -> str:
        doc = {
            "format": FORMAT_NORMAL_FIT,
            "n_terms": self.n_terms,
            "n_topics": self.n_topics,
            "loadings": [float(v) for v in self.loadings.ravel()],
            "coef": [float(v) for v in self.coef],
            "objective_trace": [float(v) for v in self.objective_trace],
            "iterations": self.iterations,
            "converged": self.converged,
            "config": _config_dict(self.config),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NormalFit":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_NORMAL_FIT:
            raise ValueError(f"unexpected format tag {doc.get('format')!r}")
        p, m = doc["n_terms"], doc["n_topics"]
        return cls(
            loadings=np.asarray(doc["loadings"], dtype=float).reshape(p, m),
            coef=np.asarray(doc["coef"], dtype=float),
            objective_trace=[float(v) for v in doc["objective_trace"]],
            iterations=int(doc["iterations"]),
            converged=bool(doc["converged"]),
            config=FitConfig(**doc["config"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NormalFit":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _config_dict(config: FitConfig) -> dict:
    return {
        "sigma": config.sigma,
        "gamma_shrink": config.gamma_shrink,
        "rel_tol": config.rel_tol,
        "max_iters": config.max_iters,
        "max_substeps": config.max_substeps,
        "seed": config.seed,
        "window": config.window,
        "logistic_tol": config.logistic_tol,
        "logistic_max_iter": config.logistic_max_iter,
        "ridge": config.ridge,
    }


def init_params(p: int, m: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded starting point: coef ~ N(0,1), loadings ~ Uniform[0,1].

    The uniform start keeps the loadings inside the feasible region.
    """
    if m < 1:
        raise InvalidRank("need at least one topic")
    if m > p:
        raise InvalidRank(f"m={m} topics exceed p={p} terms")
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(m)
    loadings = rng.uniform(size=(p, m))
    return loadings, coef


def objective(y, X, loadings, coef) -> float:
    """Squared Euclidean norm of the residual ``y - X L b``."""
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0] or X.shape[1] != loadings.shape[0]:
        raise ShapeMismatch(
            f"X {X.shape} incompatible with y {y.shape} / loadings {loadings.shape}"
        )
    if loadings.shape[1] != np.shape(coef)[0]:
        raise ShapeMismatch("coef length must equal topic count")
    resid = y - X @ (loadings @ coef)
    return float(resid @ resid)


def gradient_lambda(xtx, xty, loadings, coef) -> np.ndarray:
    """Gradient of half the squared error w.r.t. the loadings.

    Equals ``X'X L bb' - X'y b'``, computed in rank-one form.
    ``xtx`` (p x p) and ``xty`` (p,) are precomputed once per fit.
    """
    if xtx.shape[1] != loadings.shape[0] or xty.shape[0] != loadings.shape[0]:
        raise ShapeMismatch("precomputed grams do not match the loadings")
    if loadings.shape[1] != np.shape(coef)[0]:
        raise ShapeMismatch("coef length must equal topic count")
    fitted = xtx @ (loadings @ coef)
    return np.outer(fitted - xty, coef)


def project(M):
    """Elementwise projection onto the non-negative orthant."""
    return np.maximum(M, 0.0)


def _armijo_search(lam, grad, f_old, f_of, config: FitConfig, gamma_init: float):
    """Backtracking step search for minimizing ``f`` from ``lam``.

    Accepts a step when ``f(P(lam - g*grad)) - f_old <= sigma * <grad,
    P(lam - g*grad) - lam>``. If the warm-started step already passes, the
    step grows by ``1/gamma_shrink`` while the condition keeps holding and
    the last passing candidate wins; otherwise it shrinks until it passes.
    Returns ``(lam_new, f_new, gamma_used, substeps)``.
    """

    def trial(g):
        cand = np.maximum(lam - g * grad, 0.0)
        fval = f_of(cand)
        gain = float(np.multiply(grad, cand - lam).sum())
        return cand, fval, (fval - f_old) <= config.sigma * gain

    substeps = 1
    gamma = gamma_init
    cand, fval, ok = trial(gamma)
    if ok:
        best = (cand, fval, gamma)
        while substeps < config.max_substeps:
            grown = gamma / config.gamma_shrink
            cand2, fval2, ok2 = trial(grown)
            substeps += 1
            if not ok2:
                break
            if np.array_equal(cand2, best[0]):
                # projection has pinned every moving entry; growing is futile
                break
            best = (cand2, fval2, grown)
            gamma = grown
        return (*best, substeps)
    while substeps < config.max_substeps:
        gamma *= config.gamma_shrink
        cand, fval, ok = trial(gamma)
        substeps += 1
        if ok:
            return cand, fval, gamma, substeps
    raise StepSearchExhausted(
        f"no acceptable step within {config.max_substeps} substeps"
    )


@dataclass
class GramState:
    """Precomputed products for the loadings update (see ``make_gram_state``).

    ``gamma`` carries the warm-started step size between iterations.
    """

    xtx: object
    xty: np.ndarray
    yty: float
    gamma: float = 1.0


def make_gram_state(X, y) -> GramState:
    y = np.asarray(y, dtype=float)
    xtx = X.T @ X
    if sp.issparse(xtx) and X.shape[1] <= _DENSE_GRAM_MAX_TERMS:
        xtx = np.asarray(xtx.todense())
    xty = np.asarray(X.T @ y).ravel()
    return GramState(xtx=xtx, xty=xty, yty=float(y @ y))


def _half_objective(state: GramState, loadings, coef) -> float:
    v = loadings @ coef
    return 0.5 * float(state.yty - 2.0 * (state.xty @ v) + v @ (state.xtx @ v))


def armijo_step(loadings, coef, state: GramState, config: FitConfig):
    """One projected gradient step on the loadings at fixed coefficients.

    Returns ``(loadings_next, gamma_used, substeps)`` and stores
    ``gamma_used`` back on ``state`` as the next warm start. Raises
    StepSearchExhausted when no step passes within the substep cap.
    """
    grad = gradient_lambda(state.xtx, state.xty, loadings, coef)
    f_old = _half_objective(state, loadings, coef)
    lam_new, _, gamma, substeps = _armijo_search(
        loadings,
        grad,
        f_old,
        lambda cand: _half_objective(state, cand, coef),
        config,
        state.gamma,
    )
    state.gamma = gamma
    return lam_new, gamma, substeps


def solve_beta(X, loadings, y) -> np.ndarray:
    """Least-squares coefficients of ``y`` on the reduced design ``X L``.

    Falls back to the minimum-norm solution (with a RankDeficientWarning)
    when the reduced design loses column rank.
    """
    reduced = X @ loadings
    if sp.issparse(reduced):  # pragma: no cover - loadings are always dense
        reduced = np.asarray(reduced.todense())
    y = np.asarray(y, dtype=float)
    coef, _, rank, sv = np.linalg.lstsq(reduced, y, rcond=None)
    if rank < loadings.shape[1]:
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        warnings.warn(
            f"reduced design is rank deficient (rank {rank} < {loadings.shape[1]}, "
            f"condition ~{cond:.2e}); returning the minimum-norm solution",
            RankDeficientWarning,
            stacklevel=2,
        )
    return coef


def fit_normal(X, y, m: int, config: FitConfig | None = None) -> NormalFit:
    """Alternating fit: step the loadings, re-solve the coefficients.

    Stops when the relative objective change drops below
    ``config.rel_tol`` or after ``config.max_iters`` iterations. If the
    step search is ever exhausted the best parameters so far are returned
    with ``converged=False``.
    """
    if config is None:
        config = FitConfig()
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape[0] != n:
        raise ShapeMismatch(f"X has {n} rows but y has {y.shape[0]}")
    loadings, coef = init_params(p, m, config.seed)
    state = make_gram_state(X, y)

    obj = objective(y, X, loadings, coef)
    trace = [obj]
    iterations = 0
    converged = False
    for i in range(1, config.max_iters + 1):
        try:
            lam_new, _, _ = armijo_step(loadings, coef, state, config)
        except StepSearchExhausted:
            break
        coef_new = solve_beta(X, lam_new, y)
        obj_new = objective(y, X, lam_new, coef_new)
        if obj_new > obj:
            # only reachable through floating-point stagnation: both steps
            # are descent steps, so no representable progress remains
            converged = True
            break
        iterations = i
        trace.append(obj_new)
        loadings, coef = lam_new, coef_new
        if obj == 0.0:
            converged = True
            break
        delta = (obj_new - obj) / obj
        obj = obj_new
        if abs(delta) < config.rel_tol:
            converged = True
            break
    return NormalFit(
        loadings=loadings,
        coef=coef,
        objective_trace=trace,
        iterations=iterations,
        converged=converged,
        config=config,
    )


def predict_normal(x, fit: NormalFit):
    """Prediction ``x L b``; accepts one p-vector or an (n, p) matrix."""
    if not sp.issparse(x):
        x = np.asarray(x, dtype=float)
    if x.shape[-1] != fit.n_terms:
        raise ShapeMismatch(
            f"input has {x.shape[-1]} terms, fit expects {fit.n_terms}"
        )
    scores = x @ fit.loadings
    if sp.issparse(scores):
        scores = np.asarray(scores.todense())
    scores = np.asarray(scores)
    if scores.ndim == 1:
        return float(scores @ fit.coef)
    return scores @ fit.coef
