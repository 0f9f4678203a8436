"""Continuation-ratio ordinal regression with embedded topic loadings.

Ratings in 1..K are modeled through level-wise logits
``logit P(Y = k | Y >= k) = alpha_k + x L b`` with shared non-negative
loadings ``L`` and per-(time, app) intercepts and coefficients. The
likelihood factors into independent binomial terms per level, so holding
``L`` fixed the coefficients of each (time, app) cell are fit by one
stacked binary logistic regression; holding the coefficients fixed, ``L``
takes one projected gradient ascent step per round under a sufficient-
increase condition. Coefficients for period ``t`` are estimated from a
rolling window of data (periods ``t-window+1 .. t``), which smooths their
evolution; the recorded ``loglik_trace`` is the window-weighted
log-likelihood that the alternation actually maximizes, and it is
non-decreasing by construction. With ``window=1`` it coincides with the
model log-likelihood returned by ``cr_loglik``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, gammaincc

from .exceptions import (
    DegenerateLevel,
    DegenerateLevelWarning,
    InvalidRank,
    NegativeStatisticWarning,
    OutOfRangeRating,
    SeparationWarning,
    ShapeMismatch,
    StepSearchExhausted,
    UnknownGroupKey,
)
from .factorization import FitConfig, _armijo_search, _config_dict

FORMAT_DYNAMIC = "ssmf-ordinal-dynamic-v1"
FORMAT_SATURATED = "ssmf-ordinal-saturated-v1"

GroupKey = tuple[str, str]  # (time_bucket, app)


@dataclass(frozen=True)
class RecodedResponse:
    """Indicator decomposition of ratings: row k of ``indicators`` is the
    binary vector 1{Y = k+1}. Exactly one indicator fires per document."""

    indicators: np.ndarray  # (K, n)
    n_levels: int

    def __post_init__(self):
        if self.indicators.shape[0] != self.n_levels:
            raise ShapeMismatch("indicator rows must equal the level count")
        colsums = self.indicators.sum(axis=0)
        if self.indicators.size and not np.array_equal(
            colsums, np.ones_like(colsums)
        ):
            raise ValueError("each document must light exactly one indicator")

    def levels(self) -> np.ndarray:
        """Recover the integer ratings 1..K."""
        return self.indicators.argmax(axis=0) + 1


def recode(y, n_levels: int) -> RecodedResponse:
    """Split integer ratings into K binary indicator vectors."""
    y = np.asarray(y)
    if y.size and (y.min() < 1 or y.max() > n_levels):
        raise OutOfRangeRating(
            f"ratings must lie in 1..{n_levels}, saw [{y.min()}, {y.max()}]"
        )
    indicators = np.zeros((n_levels, y.shape[0]), dtype=np.int8)
    for k in range(n_levels):
        indicators[k] = y == k + 1
    return RecodedResponse(indicators=indicators, n_levels=n_levels)


def _stack_levels(reduced, y, level_idx):
    """Stacked design/response over the given 0-based level indices.

    Block k keeps rows with ``y >= k+1``, responds 1{y == k+1}, and gets
    its own intercept dummy column (ordered as in ``level_idx``).
    """
    reduced = np.asarray(reduced, dtype=float)
    n_dummies = len(level_idx)
    blocks, responses = [], []
    for pos, k0 in enumerate(level_idx):
        rows = y >= k0 + 1
        dummies = np.zeros((int(rows.sum()), n_dummies))
        dummies[:, pos] = 1.0
        blocks.append(np.hstack([dummies, reduced[rows]]))
        responses.append((y[rows] == k0 + 1).astype(float))
    return np.vstack(blocks), np.concatenate(responses)


def stack_for_logistic(reduced, rec: RecodedResponse):
    """Stack the level-wise binomial problems into one logistic problem.

    For each level k = 1..K-1 the rows with ``Y >= k`` are appended with
    response 1{Y = k}; K-1 intercept dummy columns come first. Raises
    DegenerateLevel if some level has no eligible rows.
    """
    reduced = np.asarray(reduced, dtype=float)
    y = rec.levels()
    if reduced.shape[0] != y.shape[0]:
        raise ShapeMismatch("design rows must match the response length")
    for k0 in range(rec.n_levels - 1):
        if not (y >= k0 + 1).any():
            raise DegenerateLevel(f"no observations with rating >= {k0 + 1}")
    return _stack_levels(reduced, y, list(range(rec.n_levels - 1)))


def _binomial_loglik(X, y, theta):
    eta = X @ theta
    return float(y @ eta - np.logaddexp(0.0, eta).sum())


def _newton_logistic(X, y, theta, tol, max_iter, ridge):
    """Damped Newton ascent on the (optionally ridge-penalized) logistic
    log-likelihood. Returns (theta, converged)."""
    eye = ridge * np.eye(X.shape[1]) if ridge else None
    ll = _binomial_loglik(X, y, theta) - 0.5 * ridge * float(theta @ theta)
    for _ in range(max_iter):
        eta = X @ theta
        mu = expit(eta)
        score = X.T @ (y - mu) - ridge * theta
        if np.linalg.norm(score) < tol:
            return theta, True
        w = mu * (1.0 - mu)
        hess = X.T @ (X * w[:, None])
        if eye is not None:
            hess = hess + eye
        try:
            step = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            return theta, False
        scale, accepted = 1.0, False
        for _ in range(30):
            cand = theta + scale * step
            ll_cand = _binomial_loglik(X, y, cand) - 0.5 * ridge * float(
                cand @ cand
            )
            if ll_cand >= ll - 1e-12 * (1.0 + abs(ll)):
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            return theta, False
        theta, ll = cand, ll_cand
    eta = X @ theta
    score = X.T @ (y - expit(eta)) - ridge * theta
    return theta, bool(np.linalg.norm(score) < tol)


def fit_logistic(design, response, tol=1e-8, max_iter=100, ridge=1e-6):
    """Maximum-likelihood binary logistic coefficients.

    Iteratively reweighted least squares (damped Newton), converged when
    the score norm drops below ``tol``. On (quasi-)separation the fit is
    rerun with an L2 penalty of ``ridge`` and a SeparationWarning.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ShapeMismatch("design rows must match the response length")
    theta0 = np.zeros(X.shape[1])
    theta, converged = _newton_logistic(X, y, theta0, tol, max_iter, 0.0)
    if converged and np.isfinite(theta).all():
        return theta
    warnings.warn(
        "logistic fit did not converge (separation suspected); "
        f"refitting with ridge {ridge:g}",
        SeparationWarning,
        stacklevel=2,
    )
    theta, _ = _newton_logistic(X, y, np.zeros(X.shape[1]), tol, max_iter, ridge)
    return theta


# ---------------------------------------------------------------------------
# log-likelihood and gradient


def _group_loglik(alpha, coef, reduced, y, saturated):
    """Continuation-ratio log-likelihood of one (time, app) cell.

    ``alpha`` may contain NaN for levels with no training data: those
    levels carry probability zero, so documents at them yield -inf.
    """
    ll = 0.0
    shared = None if saturated else reduced @ coef
    for k0, a in enumerate(alpha):
        at = y == k0 + 1
        above = y > k0 + 1
        if np.isnan(a):
            if at.any():
                return -np.inf
            continue
        s = reduced @ coef[k0] if saturated else shared
        eta = a + s
        lse = np.logaddexp(0.0, eta)
        ll += float((eta[at] - lse[at]).sum()) - float(lse[above].sum())
    return ll


def _objective(loadings, alphas, coefs, groups, saturated):
    total = 0.0
    for key in sorted(groups):
        X, y = groups[key]
        total += _group_loglik(alphas[key], coefs[key], X @ loadings, y, saturated)
    return total


def _gradient(loadings, alphas, coefs, groups, saturated):
    grad = np.zeros_like(loadings)
    for key in sorted(groups):
        X, y = groups[key]
        alpha, coef = alphas[key], coefs[key]
        reduced = X @ loadings
        if saturated:
            for k0, a in enumerate(alpha):
                if np.isnan(a):
                    continue
                sig = expit(a + reduced @ coef[k0])
                c = np.zeros(y.shape[0])
                at = y == k0 + 1
                above = y > k0 + 1
                c[at] = 1.0 - sig[at]
                c[above] = -sig[above]
                grad += np.outer(X.T @ c, coef[k0])
        else:
            s = reduced @ coef
            c = np.zeros(y.shape[0])
            for k0, a in enumerate(alpha):
                if np.isnan(a):
                    continue
                sig = expit(a + s)
                at = y == k0 + 1
                above = y > k0 + 1
                c[at] += 1.0 - sig[at]
                c[above] -= sig[above]
            grad += np.outer(X.T @ c, coef)
    return grad


# ---------------------------------------------------------------------------
# models


@dataclass
class DynamicOrdinalModel:
    """Shared loadings with per-(time, app) intercepts and coefficients.

    ``alphas[(t, a)]`` is a (K-1)-vector of level intercepts (NaN marks a
    level that had no eligible observations in the cell's window);
    ``coefs[(t, a)]`` is the m-vector shared across levels.
    ``loglik_trace`` is non-decreasing.
    """

    saturated = False

    loadings: np.ndarray
    alphas: dict[GroupKey, np.ndarray]
    coefs: dict[GroupKey, np.ndarray]
    n_levels: int
    window: int
    loglik_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    config: FitConfig | None = None

    @property
    def n_terms(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_topics(self) -> int:
        return self.loadings.shape[1]

    def group_keys(self) -> list[GroupKey]:
        return sorted(self.alphas)

    def coefficients_for(self, time_bucket: str, app: str, policy: str = "own"):
        """Look up ``(alpha, coef)`` for a (time, app) cell.

        ``policy`` selects what happens when the exact key is absent:
        ``"own"`` raises; ``"latest"`` falls back to the app's most recent
        fitted period (how out-of-sample periods are scored); any other
        string names an explicit period to borrow from.
        """
        key = (time_bucket, app)
        if policy == "own":
            if key not in self.alphas:
                raise UnknownGroupKey(f"no coefficients for {key}")
        elif policy == "latest":
            if key not in self.alphas:
                periods = sorted(t for (t, a) in self.alphas if a == app)
                if not periods:
                    raise UnknownGroupKey(f"no fitted periods for app {app!r}")
                key = (periods[-1], app)
        else:
            key = (policy, app)
            if key not in self.alphas:
                raise UnknownGroupKey(f"no coefficients for {key}")
        return self.alphas[key], self.coefs[key]

    def predict_probs(self, x, time_bucket: str, app: str, policy: str = "own"):
        alpha, coef = self.coefficients_for(time_bucket, app, policy)
        return predict_rating_probs(x, self.loadings, alpha, coef)

    def to_json(self) -> str:
        doc = self._json_dict(FORMAT_DYNAMIC)
        doc["coefs"] = {
            _join_key(key): _floats(self.coefs[key]) for key in self.group_keys()
        }
        return json.dumps(doc, sort_keys=True)

    def _json_dict(self, fmt):
        return {
            "format": fmt,
            "n_terms": self.n_terms,
            "n_topics": self.n_topics,
            "n_levels": self.n_levels,
            "window": self.window,
            "loadings": [float(v) for v in self.loadings.ravel()],
            "alphas": {
                _join_key(key): _floats(self.alphas[key])
                for key in self.group_keys()
            },
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "iterations": self.iterations,
            "converged": self.converged,
            "config": None if self.config is None else _config_dict(self.config),
        }

    @classmethod
    def from_json(cls, text: str) -> "DynamicOrdinalModel":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_DYNAMIC:
            raise ValueError(f"unexpected format tag {doc.get('format')!r}")
        base = _parse_json_base(doc)
        coefs = {
            _split_key(raw): np.asarray(vals, dtype=float)
            for raw, vals in doc["coefs"].items()
        }
        return cls(coefs=coefs, **base)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DynamicOrdinalModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


@dataclass
class SaturatedOrdinalModel(DynamicOrdinalModel):
    """Level-specific variant: ``coefs[(t, a)]`` is (K-1) x m, one
    coefficient vector per rating level (NaN rows mark dropped levels)."""

    saturated = True

    def predict_probs(self, x, time_bucket: str, app: str, policy: str = "own"):
        alpha, coef = self.coefficients_for(time_bucket, app, policy)
        scores = _reduced_scores(x, self.loadings)
        per_level = np.array(
            [
                0.0 if np.isnan(alpha[k0]) else float(scores @ coef[k0])
                for k0 in range(self.n_levels - 1)
            ]
        )
        return _level_probs(alpha, per_level[None, :])[0]

    def to_json(self) -> str:
        doc = self._json_dict(FORMAT_SATURATED)
        betas = {}
        for key in self.group_keys():
            coef = self.coefs[key]
            for k0 in range(self.n_levels - 1):
                if np.isnan(self.alphas[key][k0]):
                    continue
                betas[_join_key(key) + f"|{k0 + 1}"] = _floats(coef[k0])
        doc["coefs"] = betas
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SaturatedOrdinalModel":
        doc = json.loads(text)
        if doc.get("format") != FORMAT_SATURATED:
            raise ValueError(f"unexpected format tag {doc.get('format')!r}")
        base = _parse_json_base(doc)
        m = doc["n_topics"]
        n_levels = doc["n_levels"]
        coefs = {
            key: np.full((n_levels - 1, m), np.nan) for key in base["alphas"]
        }
        for raw, vals in doc["coefs"].items():
            t, a, k = raw.split("|")
            coefs[(t, a)][int(k) - 1] = np.asarray(vals, dtype=float)
        return cls(coefs=coefs, **base)


def _join_key(key: GroupKey) -> str:
    return f"{key[0]}|{key[1]}"


def _split_key(raw: str) -> GroupKey:
    t, a = raw.split("|")
    return (t, a)


def _floats(arr) -> list:
    return [None if np.isnan(v) else float(v) for v in np.asarray(arr).ravel()]


def _parse_json_base(doc) -> dict:
    p, m = doc["n_terms"], doc["n_topics"]
    alphas = {
        _split_key(raw): np.asarray(
            [np.nan if v is None else v for v in vals], dtype=float
        )
        for raw, vals in doc["alphas"].items()
    }
    return {
        "loadings": np.asarray(doc["loadings"], dtype=float).reshape(p, m),
        "alphas": alphas,
        "n_levels": int(doc["n_levels"]),
        "window": int(doc["window"]),
        "loglik_trace": [float(v) for v in doc["loglik_trace"]],
        "iterations": int(doc["iterations"]),
        "converged": bool(doc["converged"]),
        "config": None if doc["config"] is None else FitConfig(**doc["config"]),
    }


# ---------------------------------------------------------------------------
# public likelihood surface


def cr_loglik(model, groups) -> float:
    """Model log-likelihood of grouped data: each (time, app) cell is
    scored with its own fitted coefficients."""
    _check_group_shapes(model, groups)
    return _objective(
        model.loadings, model.alphas, model.coefs, groups, model.saturated
    )


def gradient_lambda_cr(model, groups) -> np.ndarray:
    """Gradient of ``cr_loglik`` with respect to the loadings."""
    _check_group_shapes(model, groups)
    return _gradient(
        model.loadings, model.alphas, model.coefs, groups, model.saturated
    )


def _check_group_shapes(model, groups):
    for key, (X, y) in groups.items():
        if key not in model.alphas:
            raise UnknownGroupKey(f"model has no coefficients for {key}")
        if X.shape[1] != model.n_terms:
            raise ShapeMismatch(
                f"group {key}: {X.shape[1]} columns, model expects {model.n_terms}"
            )
        if X.shape[0] != np.shape(y)[0]:
            raise ShapeMismatch(f"group {key}: X rows and y length differ")


# ---------------------------------------------------------------------------
# fitting


def _validate_groups(groups, n_levels):
    if not groups:
        raise ValueError("at least one (time, app) group is required")
    keys = sorted(groups)
    p = None
    for key in keys:
        t, a = key
        if "|" in t or "|" in a:
            raise ValueError(f"group labels may not contain '|': {key}")
        X, y = groups[key]
        y = np.asarray(y)
        if y.size == 0:
            raise ValueError(f"group {key} is empty")
        if y.min() < 1 or y.max() > n_levels:
            raise OutOfRangeRating(
                f"group {key}: ratings must lie in 1..{n_levels}"
            )
        if X.shape[0] != y.shape[0]:
            raise ShapeMismatch(f"group {key}: X rows and y length differ")
        if p is None:
            p = X.shape[1]
        elif X.shape[1] != p:
            raise ShapeMismatch(
                "all groups must share one vocabulary "
                f"(group {key} has {X.shape[1]} columns, expected {p})"
            )
    return keys, p


def _vstack(mats):
    if len(mats) == 1:
        return mats[0]
    if any(sp.issparse(m) for m in mats):
        return sp.vstack([sp.csr_matrix(m) for m in mats], format="csr")
    return np.vstack(mats)


def _windowed_groups(groups, window):
    """Per-cell training data: periods ``t-window+1 .. t`` for the same app.

    The first periods simply use whatever exists; the global period order
    is the sorted set of observed time buckets.
    """
    periods = sorted({t for (t, _) in groups})
    pos = {t: i for i, t in enumerate(periods)}
    out = {}
    for (t, a) in sorted(groups):
        span = periods[max(0, pos[t] - window + 1): pos[t] + 1]
        members = [(tt, a) for tt in span if (tt, a) in groups]
        out[(t, a)] = (
            _vstack([groups[k][0] for k in members]),
            np.concatenate([np.asarray(groups[k][1]) for k in members]),
        )
    return out


def _level_block_loglik(a, b, reduced, y, k0):
    at = y == k0 + 1
    above = y > k0 + 1
    eta = a + reduced @ b
    lse = np.logaddexp(0.0, eta)
    return float((eta[at] - lse[at]).sum()) - float(lse[above].sum())


def _refit_block(reduced, y, n_levels, config, saturated, alpha_old, coef_old):
    """One maximum-likelihood coefficient refit for a cell's window data,
    keeping the old values if the (rare, ridge-stabilized) new ones score
    worse on the same data."""
    present = [k0 for k0 in range(n_levels - 1) if np.isfinite(alpha_old[k0])]
    if not saturated:
        design, response = _stack_levels(reduced, y, present)
        theta = fit_logistic(
            design, response, config.logistic_tol, config.logistic_max_iter,
            config.ridge,
        )
        alpha_new = np.full(n_levels - 1, np.nan)
        alpha_new[present] = theta[: len(present)]
        coef_new = theta[len(present):]
        old = _group_loglik(alpha_old, coef_old, reduced, y, False)
        new = _group_loglik(alpha_new, coef_new, reduced, y, False)
        return (alpha_new, coef_new) if new >= old else (alpha_old, coef_old)
    alpha_new = alpha_old.copy()
    coef_new = coef_old.copy()
    for k0 in present:
        rows = y >= k0 + 1
        design = np.column_stack(
            [np.ones(int(rows.sum())), np.asarray(reduced[rows], dtype=float)]
        )
        response = (y[rows] == k0 + 1).astype(float)
        theta = fit_logistic(
            design, response, config.logistic_tol, config.logistic_max_iter,
            config.ridge,
        )
        old = _level_block_loglik(alpha_old[k0], coef_old[k0], reduced, y, k0)
        new = _level_block_loglik(theta[0], theta[1:], reduced, y, k0)
        if new >= old:
            alpha_new[k0] = theta[0]
            coef_new[k0] = theta[1:]
    return alpha_new, coef_new


def _init_coefficients(windowed, n_levels, n_topics, saturated):
    alphas, coefs = {}, {}
    for key, (_, yw) in windowed.items():
        present = [k0 for k0 in range(n_levels - 1) if (yw >= k0 + 1).any()]
        if len(present) < n_levels - 1:
            dropped = sorted(set(range(n_levels - 1)) - set(present))
            warnings.warn(
                f"group {key}: dropping intercept level(s) "
                f"{[k0 + 1 for k0 in dropped]} with no eligible observations",
                DegenerateLevelWarning,
                stacklevel=3,
            )
        alpha = np.full(n_levels - 1, np.nan)
        alpha[present] = 0.0
        alphas[key] = alpha
        if saturated:
            coef = np.full((n_levels - 1, n_topics), np.nan)
            coef[present] = 0.0
        else:
            coef = np.zeros(n_topics)
        coefs[key] = coef
    return alphas, coefs


def fit_coefficients(loadings, groups, n_levels, config=None, saturated=False):
    """Fit all per-(time, app) coefficient blocks at fixed loadings.

    Returns ``(alphas, coefs)`` dicts keyed like ``groups``. Each cell is
    fit on its rolling window (``config.window`` periods).
    """
    if config is None:
        config = FitConfig()
    _validate_groups(groups, n_levels)
    windowed = _windowed_groups(groups, config.window)
    alphas, coefs = _init_coefficients(
        windowed, n_levels, loadings.shape[1], saturated
    )
    for key, (Xw, yw) in windowed.items():
        reduced = np.asarray(Xw @ loadings, dtype=float)
        alphas[key], coefs[key] = _refit_block(
            reduced, yw, n_levels, config, saturated, alphas[key], coefs[key]
        )
    return alphas, coefs


def _fit_ordinal(groups, n_topics, n_levels, config, saturated):
    keys, p = _validate_groups(groups, n_levels)
    if n_levels < 2:
        raise ValueError("need at least two rating levels")
    if n_topics < 1:
        raise InvalidRank("need at least one topic")
    if n_topics > p:
        raise InvalidRank(f"m={n_topics} topics exceed p={p} terms")
    rng = np.random.default_rng(config.seed)
    loadings = rng.uniform(size=(p, n_topics))
    windowed = _windowed_groups(groups, config.window)
    alphas, coefs = _init_coefficients(windowed, n_levels, n_topics, saturated)

    current = _objective(loadings, alphas, coefs, windowed, saturated)
    trace = [current]
    gamma = 1.0
    iterations = 0
    converged = False
    for it in range(1, config.max_iters + 1):
        grad = _gradient(loadings, alphas, coefs, windowed, saturated)
        try:
            loadings, neg_obj, gamma, _ = _armijo_search(
                loadings,
                -grad,
                -current,
                lambda cand: -_objective(cand, alphas, coefs, windowed, saturated),
                config,
                gamma,
            )
            current = -neg_obj
        except StepSearchExhausted:
            # ascent stalled at floating-point resolution; the coefficient
            # refits below can still make progress
            pass
        for key in keys:
            Xw, yw = windowed[key]
            reduced = np.asarray(Xw @ loadings, dtype=float)
            alphas[key], coefs[key] = _refit_block(
                reduced, yw, n_levels, config, saturated, alphas[key], coefs[key]
            )
        new = _objective(loadings, alphas, coefs, windowed, saturated)
        iterations = it
        trace.append(new)
        denom = abs(trace[-2])
        delta = abs(new - trace[-2]) / denom if denom > 0 else 0.0
        current = new
        if delta < config.rel_tol:
            converged = True
            break
    cls = SaturatedOrdinalModel if saturated else DynamicOrdinalModel
    return cls(
        loadings=loadings,
        alphas=alphas,
        coefs=coefs,
        n_levels=n_levels,
        window=config.window,
        loglik_trace=trace,
        iterations=iterations,
        converged=converged,
        config=config,
    )


def fit_dynamic(groups, n_topics, n_levels, config=None) -> DynamicOrdinalModel:
    """Fit the constrained dynamic model (coefficients shared across levels).

    ``groups`` maps ``(time_bucket, app)`` to ``(X, y)`` with a shared
    vocabulary across cells. Alternates one projected gradient ascent step
    on the loadings with rolling-window logistic refits of every cell
    until the relative log-likelihood change drops below
    ``config.rel_tol``.
    """
    return _fit_ordinal(groups, n_topics, n_levels, config or FitConfig(), False)


def fit_saturated(groups, n_topics, n_levels, config=None) -> SaturatedOrdinalModel:
    """Fit the saturated variant: separate coefficients per rating level,
    one plain logistic regression per (cell, level) instead of stacking."""
    return _fit_ordinal(groups, n_topics, n_levels, config or FitConfig(), True)


# ---------------------------------------------------------------------------
# prediction


def _reduced_scores(x, loadings):
    if not sp.issparse(x):
        x = np.asarray(x, dtype=float)
    if x.shape[-1] != loadings.shape[0]:
        raise ShapeMismatch(
            f"input has {x.shape[-1]} terms, loadings expect {loadings.shape[0]}"
        )
    scores = x @ loadings
    if sp.issparse(scores):
        scores = np.asarray(scores.todense())
    return np.asarray(scores, dtype=float)


def _level_probs(alpha, scores):
    """Sequential-conditioning probabilities for one or more documents.

    ``scores`` is (n, K-1): the linear term of each level's logit (columns
    are identical for the constrained model). NaN intercepts contribute
    probability zero. Rows sum to one.
    """
    n_levels = len(alpha) + 1
    n = scores.shape[0]
    probs = np.zeros((n, n_levels))
    remaining = np.ones(n)
    for k0 in range(n_levels - 1):
        a = alpha[k0]
        p_k = np.zeros(n) if np.isnan(a) else expit(a + scores[:, k0])
        probs[:, k0] = remaining * p_k
        remaining = remaining * (1.0 - p_k)
    probs[:, n_levels - 1] = remaining
    return probs


def predict_rating_probs(x, loadings, alpha, coef) -> np.ndarray:
    """Rating-level probabilities for one document (constrained model).

    ``P(Y=1) = p(1)``, ``P(Y=k) = p(k) * prod_{j<k} (1 - p(j))``, and the
    top level absorbs the remainder, with
    ``p(k) = expit(alpha_k + x L b)``. The output sums to one.
    """
    alpha = np.asarray(alpha, dtype=float)
    coef = np.asarray(coef, dtype=float)
    if loadings.shape[1] != coef.shape[0]:
        raise ShapeMismatch("coef length must equal topic count")
    scores = _reduced_scores(x, loadings)
    s = float(scores @ coef)
    tiled = np.full((1, alpha.shape[0]), s)
    return _level_probs(alpha, tiled)[0]


def predict_rating(x, loadings, alpha, coef) -> int:
    """Most probable rating level; exact ties resolve to the lower level."""
    probs = predict_rating_probs(x, loadings, alpha, coef)
    return int(np.argmax(probs)) + 1


# ---------------------------------------------------------------------------
# model comparison


def lrt_degrees_of_freedom(n_topics, n_apps, n_times, n_levels):
    """Parameter counts of the constrained and saturated models."""
    df1 = n_topics * n_apps * n_times
    df2 = df1 * (n_levels - 1)
    return df1, df2


@dataclass(frozen=True)
class LrtResult:
    statistic: float
    df: int
    p_value: float
    loglik_constrained: float
    loglik_saturated: float


def _chi2_upper_tail(g, df):
    if df == 0:
        return 1.0
    return float(gammaincc(df / 2.0, max(g, 0.0) / 2.0))


def lrt(
    constrained: DynamicOrdinalModel,
    saturated: SaturatedOrdinalModel,
    groups,
) -> LrtResult:
    """Likelihood-ratio test of level-specific versus shared coefficients.

    ``G = 2 (l_saturated - l_constrained)`` referred to a chi-squared
    distribution whose degrees of freedom are the parameter-count gap.
    G >= 0 is only guaranteed when both models share the same loadings
    (see ``lrt_shared_loadings``); independently fitted models can give a
    slightly negative G, reported raw with a warning.
    """
    if constrained.loadings.shape != saturated.loadings.shape:
        raise ShapeMismatch("models have different loading dimensions")
    if constrained.n_levels != saturated.n_levels:
        raise ShapeMismatch("models have different level counts")
    l_con = cr_loglik(constrained, groups)
    l_sat = cr_loglik(saturated, groups)
    g = 2.0 * (l_sat - l_con)
    if g < 0:
        warnings.warn(
            f"negative likelihood-ratio statistic ({g:.3g}); the models were "
            "optimized separately, so this is optimization noise",
            NegativeStatisticWarning,
            stacklevel=2,
        )
    times = {t for (t, _) in constrained.alphas}
    apps = {a for (_, a) in constrained.alphas}
    df1, df2 = lrt_degrees_of_freedom(
        constrained.n_topics, len(apps), len(times), constrained.n_levels
    )
    ddf = df2 - df1
    return LrtResult(
        statistic=g,
        df=ddf,
        p_value=_chi2_upper_tail(g, ddf),
        loglik_constrained=l_con,
        loglik_saturated=l_sat,
    )


def lrt_shared_loadings(
    constrained: DynamicOrdinalModel, groups, config=None
) -> LrtResult:
    """LRT with the saturated coefficients refit at the constrained model's
    loadings, which guarantees a non-negative statistic."""
    config = config or constrained.config or FitConfig()
    alphas, coefs = fit_coefficients(
        constrained.loadings, groups, constrained.n_levels, config, saturated=True
    )
    shadow = SaturatedOrdinalModel(
        loadings=constrained.loadings,
        alphas=alphas,
        coefs=coefs,
        n_levels=constrained.n_levels,
        window=config.window,
        loglik_trace=[],
        iterations=0,
        converged=True,
        config=config,
    )
    return lrt(constrained, shadow, groups)
