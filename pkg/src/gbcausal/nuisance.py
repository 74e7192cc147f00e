"""Nuisance estimation: fixed feature map, logistic-ridge propensity,
per-arm ridge outcome regressions (T-learner), and K-fold cross-fitting.

All models share one fixed feature map Phi(X) = [X, X^2, sin(X), x_extra, 1]
with x_extra = X1*X2 for d >= 2 and X1^3 for d = 1. Propensity predictions
are clipped to [clip_eps, 1 - clip_eps] at prediction time, so the clip
applies uniformly wherever a fit is evaluated.
"""

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.special import expit

from .dataset import Dataset, FoldAssignment, make_folds
from .errors import DegenerateTreatment, DomainError, EmptyArm, FoldArmCollapse
from .numerics import Rng, cholesky_solve


def featurize(x) -> np.ndarray:
    """Feature vector of a single covariate vector, in the pinned order."""
    return feature_matrix(np.atleast_2d(np.asarray(x, dtype=float)))[0]


def feature_matrix(x) -> np.ndarray:
    """(n, 3d+2) feature matrix: [X, X^2, sin(X), x_extra, 1]."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n, d = x.shape
    extra = x[:, 0] * x[:, 1] if d >= 2 else x[:, 0] ** 3
    return np.hstack(
        [x, x**2, np.sin(x), extra.reshape(n, 1), np.ones((n, 1))]
    )


def feature_dim(d) -> int:
    return 3 * d + 2


@dataclass(frozen=True)
class NuisanceConfig:
    """Scalar knobs not pinned by the models themselves; defaults chosen for
    stability under limited overlap."""

    clip_eps: float = 0.01
    lambda_prop: float = 1.0
    lambda_out: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 0.5:
            raise DomainError("clip_eps must lie in (0, 0.5)")
        if self.lambda_prop < 0 or self.lambda_out < 0:
            raise DomainError("ridge penalties must be >= 0")


def fit_outcome(x, y, lam) -> np.ndarray:
    """Ridge coefficients minimizing ||Phi w - y||^2 + lam ||w||^2.

    Solved through the SPD normal equations; the intercept inside Phi is
    penalized like any other feature.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0:
        raise EmptyArm("outcome regression needs at least one observation in the arm")
    phi = feature_matrix(x)
    gram = phi.T @ phi + lam * np.eye(phi.shape[1])
    return cholesky_solve(gram, phi.T @ y)


def _penalized_loglik(phi, a, w, lam):
    z = phi @ w
    # log(1 + e^z) via logaddexp for stability at large |z|
    return float(a @ z - np.logaddexp(0.0, z).sum() - 0.5 * lam * (w @ w))


def fit_propensity(x, a, lam, max_iter=100, grad_tol=1e-6) -> np.ndarray:
    """Penalized logistic regression via iteratively reweighted SPD solves.

    Newton steps with step halving whenever the penalized log-likelihood
    would decrease; stops at gradient norm <= 1e-6 or 100 iterations.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    if np.all(a == a[0]):
        raise DegenerateTreatment("treatment vector is constant; cannot fit a propensity")
    phi = feature_matrix(x)
    w = np.zeros(phi.shape[1])
    eye = np.eye(phi.shape[1])
    ll = _penalized_loglik(phi, a, w, lam)
    for _ in range(max_iter):
        p = expit(phi @ w)
        grad = phi.T @ (a - p) - lam * w
        if np.linalg.norm(grad) <= grad_tol:
            break
        wgt = np.maximum(p * (1.0 - p), 1e-10)
        hess = phi.T @ (phi * wgt[:, None]) + lam * eye
        delta = cholesky_solve(hess, grad)
        step = 1.0
        while step >= 1e-8:
            w_new = w + step * delta
            ll_new = _penalized_loglik(phi, a, w_new, lam)
            if ll_new >= ll:
                w, ll = w_new, ll_new
                break
            step *= 0.5
        else:
            break  # no ascent direction left at the smallest step
    return w


@dataclass(frozen=True)
class NuisanceFit:
    """Fitted propensity and per-arm outcome coefficients over Phi."""

    propensity_coef: np.ndarray
    outcome_coef_treated: np.ndarray
    outcome_coef_control: np.ndarray
    clip_eps: float
    lambda_prop: float
    lambda_out: float

    def predict_propensity(self, x) -> np.ndarray:
        raw = expit(feature_matrix(x) @ self.propensity_coef)
        return np.clip(raw, self.clip_eps, 1.0 - self.clip_eps)

    def predict_outcome(self, x, arm) -> np.ndarray:
        coef = self.outcome_coef_treated if arm == 1 else self.outcome_coef_control
        return feature_matrix(x) @ coef


def fit_nuisances(x, a, y, config: NuisanceConfig) -> NuisanceFit:
    a = np.asarray(a).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    treated = a == 1
    if treated.all() or (~treated).all():
        raise DegenerateTreatment("both treatment arms are required to fit nuisances")
    return NuisanceFit(
        propensity_coef=fit_propensity(x, a, config.lambda_prop),
        outcome_coef_treated=fit_outcome(x[treated], y[treated], config.lambda_out),
        outcome_coef_control=fit_outcome(x[~treated], y[~treated], config.lambda_out),
        clip_eps=config.clip_eps,
        lambda_prop=config.lambda_prop,
        lambda_out=config.lambda_out,
    )


@dataclass(frozen=True)
class CrossFit:
    """Per-fold nuisance fits, each trained only on its fold's complement."""

    folds: FoldAssignment
    per_fold: List[NuisanceFit]

    def held_out_predictions(self, ds: Dataset):
        """(e_hat, m1_hat, m0_hat) for every observation, each predicted by
        the fit that never saw it, assembled in original index order."""
        n = ds.n
        e = np.empty(n)
        m1 = np.empty(n)
        m0 = np.empty(n)
        for k in range(self.folds.k):
            idx = self.folds.indices(k)
            fit = self.per_fold[k]
            xk = ds.x[idx]
            e[idx] = fit.predict_propensity(xk)
            m1[idx] = fit.predict_outcome(xk, 1)
            m0[idx] = fit.predict_outcome(xk, 0)
        return e, m1, m0


def cross_fit(ds: Dataset, k, config: NuisanceConfig, rng: Rng) -> CrossFit:
    """K-fold cross-fitting: fit nuisances on each fold's complement."""
    folds = make_folds(ds.n, k, rng)
    fits = []
    for fold in range(k):
        idx = folds.complement(fold)
        a_train = ds.a[idx]
        if np.all(a_train == a_train[0]):
            raise FoldArmCollapse(
                f"training complement of fold {fold} contains a single treatment arm",
                fold=fold,
            )
        fits.append(fit_nuisances(ds.x[idx], a_train, ds.y[idx], config))
    return CrossFit(folds=folds, per_fold=fits)
