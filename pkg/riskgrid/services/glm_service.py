"""
Poisson GLM service
- Log-link Poisson regression fitted by IRLS with step-halving
- Columns standardized internally, coefficients back-transformed
- Wald z statistics and two-sided p-values
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.special import gammaln
from scipy.stats import norm

from ..utils import constants
from ..utils.errors import CollinearityError, ParameterError, SchemaMismatchError

logger = logging.getLogger(__name__)


@dataclass
class PoissonFit:
    names: List[str]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    iterations: int
    converged: bool
    loglik: float
    loglik_path: List[float] = field(default_factory=list)
    score: Optional[np.ndarray] = None
    boundary: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def terms(self):
        return ['(Intercept)'] + list(self.names)


def _poisson_loglik(y, eta):
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def _offending_columns(design, names):
    """Columns beyond the numerical rank in pivoted-QR order"""
    _, r, pivot = scipy.linalg.qr(design, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(design.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    terms = ['(Intercept)'] + list(names)
    return rank, [terms[j] for j in pivot[rank:]]


def _standardize(X, names):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    constant = [name for name, s in zip(names, sd) if s == 0]
    if constant:
        raise CollinearityError(f"Constant columns are collinear with the intercept: {', '.join(constant)}")
    return (X - mean) / sd, mean, sd


def fit_poisson(X, y, names=None, offset=None, tol=constants.IRLS_TOL,
                max_iter=constants.IRLS_MAX_ITER, max_halvings=constants.IRLS_MAX_HALVINGS):
    """
    Maximize the Poisson log-likelihood by iteratively reweighted least squares.

    Iterates until the relative log-likelihood change drops below tol and the
    score vector vanishes, or max_iter is reached (converged=False).
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    X = np.zeros((len(y), 0)) if X.size == 0 else X.reshape(len(y), -1)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise SchemaMismatchError(f"{len(names)} names for {X.shape[1]} columns")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ParameterError("Poisson response must be non-negative integers", stage='models')
    offset = np.zeros(len(y)) if offset is None else np.asarray(offset, dtype=float)

    if X.shape[1]:
        Xs, x_mean, x_sd = _standardize(X, names)
    else:
        Xs, x_mean, x_sd = X, np.zeros(0), np.ones(0)
    design = np.column_stack([np.ones(len(y)), Xs])
    rank, offending = _offending_columns(design, names)
    if rank < design.shape[1]:
        raise CollinearityError(f"Design matrix is rank deficient; collinear columns: {', '.join(offending)}")

    warnings = []
    boundary = bool(np.all(y == 0))
    if boundary:
        message = "All responses are zero: the intercept MLE is -inf, fit stops on the boundary"
        logger.warning(message)
        warnings.append(message)

    beta = np.zeros(design.shape[1])
    beta[0] = np.log(max(y.mean(), constants.MIN_RATE))
    eta = design @ beta + offset
    loglik = _poisson_loglik(y, eta)
    path = [loglik]

    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = np.exp(eta)
        working = eta - offset + (y - mu) / mu
        sqrt_w = np.sqrt(mu)
        proposal, *_ = np.linalg.lstsq(design * sqrt_w[:, None], working * sqrt_w, rcond=None)

        step = proposal - beta
        new_beta = proposal
        new_eta = design @ new_beta + offset
        new_loglik = _poisson_loglik(y, new_eta)
        halvings = 0
        while new_loglik < loglik - 1e-12 * abs(loglik) and halvings < max_halvings:
            step /= 2.0
            new_beta = beta + step
            new_eta = design @ new_beta + offset
            new_loglik = _poisson_loglik(y, new_eta)
            halvings += 1
        if new_loglik < loglik - 1e-12 * abs(loglik):
            message = f"IRLS step-halving failed at iteration {iterations}"
            logger.warning(message)
            warnings.append(message)
            break

        change = abs(new_loglik - loglik) / (abs(new_loglik) + 0.1)
        beta, eta, loglik = new_beta, new_eta, new_loglik
        path.append(loglik)
        score = design.T @ (y - np.exp(eta))
        if change < tol and np.max(np.abs(score)) < constants.SCORE_TOL:
            converged = not boundary
            break

    mu = np.exp(eta)
    score = design.T @ (y - mu)
    if not converged:
        message = f"IRLS did not converge in {iterations} iterations (max |score| = {np.max(np.abs(score)):.3g})"
        logger.warning(message)
        warnings.append(message)

    info = design.T @ (design * mu[:, None])
    cov_std = np.linalg.pinv(info)

    # back-transform: beta_j = b_j / sd_j, intercept = b_0 - sum b_j mean_j / sd_j
    transform = np.eye(design.shape[1])
    if X.shape[1]:
        transform[0, 1:] = -x_mean / x_sd
        transform[1:, 1:] = np.diag(1.0 / x_sd)
    beta_orig = transform @ beta
    cov = transform @ cov_std @ transform.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    fit = PoissonFit(
        names=names, beta=beta_orig, se=se, z=np.zeros_like(se), p=np.ones_like(se),
        iterations=iterations, converged=converged, loglik=loglik, loglik_path=path,
        score=score, boundary=boundary, warnings=warnings,
    )
    fit.p = wald_pvalues(fit)
    with np.errstate(divide='ignore', invalid='ignore'):
        fit.z = np.where(se > 0, beta_orig / se, np.nan)
    logger.info(f"Poisson GLM: {len(names)} features, {iterations} IRLS iterations, "
                f"loglik {loglik:.4f}, converged={converged}")
    return fit


def predict_poisson(fit, X, names=None, offset=None):
    """exp(X beta) using the fitted coefficients"""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if len(fit.names) == 1 else X.reshape(len(X), 0)
    if X.shape[1] != len(fit.names):
        raise SchemaMismatchError(f"Expected {len(fit.names)} feature columns, got {X.shape[1]}")
    if names is not None and list(names) != list(fit.names):
        raise SchemaMismatchError("Feature names/order differ from the fitted model")
    eta = fit.beta[0] + X @ fit.beta[1:]
    if offset is not None:
        eta = eta + np.asarray(offset, dtype=float)
    return np.exp(eta)


def wald_pvalues(fit):
    """p = 2 * Phi(-|beta/se|); zero or non-finite se gives NaN with a warning"""
    if not fit.converged:
        logger.warning("Wald p-values computed for a fit that did not converge")
    se = np.asarray(fit.se, dtype=float)
    beta = np.asarray(fit.beta, dtype=float)
    bad = ~np.isfinite(se) | (se <= 0)
    if np.any(bad):
        terms = [t for t, b in zip(fit.terms, bad) if b]
        logger.warning(f"Zero standard error for {', '.join(terms)}: p-value reported as missing")
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(bad, np.nan, beta / np.where(bad, 1.0, se))
    return np.where(bad, np.nan, 2.0 * norm.sf(np.abs(z)))


def coefficient_table(fit):
    """Rows term,estimate,se,z,p"""
    return pd.DataFrame({
        'term': fit.terms,
        'estimate': fit.beta,
        'se': fit.se,
        'z': fit.z,
        'p': fit.p,
    })
