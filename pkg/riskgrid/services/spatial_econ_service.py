"""
Spatial econometrics service
- Spatial Durbin error model:  y = Z gamma + u,  u = lambda W u + e
- Manski / general nesting model:  y = delta W y + Z gamma + u,  u = lambda W u + e
  with Z = [1 | X | WX]
- Maximum likelihood via the concentrated likelihood: gamma and sigma^2 are
  solved in closed form given the spatial parameters, ln|I - rho W| comes
  from the eigenvalues of W
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import norm

from ..utils import constants
from ..utils.errors import CollinearityError, DomainError, NumericError
from ..utils.parallel import run_parallel
from . import weights_service

logger = logging.getLogger(__name__)

LN_2PI = math.log(2.0 * math.pi)


@dataclass
class SpatialDesign:
    Z: np.ndarray
    names: List[str]
    WZ: np.ndarray
    warnings: List[str] = field(default_factory=list)

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def q(self):
        return self.Z.shape[1]


@dataclass
class SdemFit:
    design: SpatialDesign
    gamma: np.ndarray
    lam: float
    sigma2: float
    loglik: float
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    converged: bool
    cov: Optional[np.ndarray] = None
    condition: float = float('nan')
    warnings: List[str] = field(default_factory=list)

    delta = 0.0
    kind = 'sdem'

    @property
    def names(self):
        return self.design.names

    @property
    def terms(self):
        return list(self.design.names) + ['lambda']

    @property
    def estimates(self):
        return np.concatenate([self.gamma, [self.lam]])


@dataclass
class ManskiFit:
    design: SpatialDesign
    gamma: np.ndarray
    delta: float
    lam: float
    sigma2: float
    loglik: float
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    converged: bool
    cov: Optional[np.ndarray] = None
    condition: float = float('nan')
    delta_fixed: bool = False
    warnings: List[str] = field(default_factory=list)

    kind = 'manski'

    @property
    def names(self):
        return self.design.names

    @property
    def terms(self):
        return list(self.design.names) + ['delta', 'lambda']

    @property
    def estimates(self):
        return np.concatenate([self.gamma, [self.delta, self.lam]])


def _rank_check(Z, names):
    _, r, pivot = scipy.linalg.qr(Z, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(Z.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < Z.shape[1]:
        offending = [names[j] for j in pivot[rank:]]
        raise CollinearityError(f"Spatial design is rank deficient; collinear columns: {', '.join(offending)}",
                                stage='spatial_econ')


def build_spatial_design(X, W, names=None):
    """
    Z = [1 | X | WX] with lag_ names for WX columns.

    Any column that duplicates an earlier column (e.g. the lag of a constant,
    which equals the constant) is dropped with a warning.
    """
    X = np.asarray(X, dtype=float)
    n = W.n
    X = np.zeros((n, 0)) if X.size == 0 else X.reshape(n, -1)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if not np.all(np.isfinite(X)):
        raise NumericError("Design contains non-finite values", stage='spatial_econ')

    WX = W.lag(X) if X.shape[1] else np.zeros((n, 0))
    candidates = [('(Intercept)', np.ones(n))]
    candidates += [(name, X[:, j]) for j, name in enumerate(names)]
    candidates += [(f"lag_{name}", WX[:, j]) for j, name in enumerate(names)]

    kept_names, kept_cols, warnings = [], [], []
    for name, column in candidates:
        duplicate = next((k for k, c in zip(kept_names, kept_cols)
                          if np.allclose(column, c, rtol=0.0, atol=1e-12)), None)
        if duplicate is not None:
            message = f"Dropping {name}: duplicates column {duplicate}"
            logger.warning(message)
            warnings.append(message)
            continue
        kept_names.append(name)
        kept_cols.append(column)

    Z = np.column_stack(kept_cols)
    _rank_check(Z, kept_names)
    return SpatialDesign(Z=Z, names=kept_names, WZ=W.lag(Z), warnings=warnings)


def _check_domain(value, spec, what):
    lo, hi = spec.interval(eps=0.0)
    if not lo < value < hi:
        raise DomainError(f"{what}={value} lies outside the admissible interval ({lo:.6f}, {hi:.6f})")


def _profile(delta, lam, Z, WZ, y, Wy, WWy, spec):
    """Concentrated log-likelihood and the closed-form gamma, sigma^2"""
    n = len(y)
    By = y - delta * Wy
    WBy = Wy - delta * WWy
    ABy = By - lam * WBy
    AZ = Z - lam * WZ
    gamma, *_ = np.linalg.lstsq(AZ, ABy, rcond=None)
    resid = ABy - AZ @ gamma
    sigma2 = float(resid @ resid) / n
    log_sigma2 = math.log(max(sigma2, np.finfo(float).tiny))
    loglik = (-0.5 * n * (LN_2PI + log_sigma2)
              + weights_service.log_det(spec, lam)
              + (weights_service.log_det(spec, delta) if delta != 0.0 else 0.0)
              - 0.5 * n)
    return loglik, gamma, sigma2


def _design_arrays(Z, W):
    if isinstance(Z, SpatialDesign):
        return Z.Z, Z.WZ
    Z = np.asarray(Z, dtype=float)
    return Z, W.lag(Z)


def sdem_loglik(lam, Z, y, W, spec):
    """(loglik, gamma_hat, sigma2_hat) of the SDEM at a given lambda"""
    _check_domain(lam, spec, 'lambda')
    Z, WZ = _design_arrays(Z, W)
    y = np.asarray(y, dtype=float)
    Wy = W.lag(y)
    return _profile(0.0, lam, Z, WZ, y, Wy, np.zeros_like(y), spec)


def manski_loglik(delta, lam, Z, y, W, spec):
    """(loglik, gamma_hat, sigma2_hat) of the Manski model at given (delta, lambda)"""
    _check_domain(delta, spec, 'delta')
    _check_domain(lam, spec, 'lambda')
    Z, WZ = _design_arrays(Z, W)
    y = np.asarray(y, dtype=float)
    Wy = W.lag(y)
    return _profile(delta, lam, Z, WZ, y, Wy, W.lag(Wy), spec)


def _gradient(theta, Z, WZ, y, Wy, WWy, spec, free_delta, fixed_delta):
    """Analytic score of the full log-likelihood in (gamma, [delta], lambda, sigma^2)"""
    q = Z.shape[1]
    gamma = theta[:q]
    pos = q
    if free_delta:
        delta = theta[pos]
        pos += 1
    else:
        delta = fixed_delta
    lam, sigma2 = theta[pos], theta[pos + 1]
    n = len(y)

    r = y - delta * Wy - Z @ gamma
    Wr = Wy - delta * WWy - WZ @ gamma
    e = r - lam * Wr
    AZ = Z - lam * WZ

    grads = [AZ.T @ e / sigma2]
    if free_delta:
        grads.append([weights_service.log_det_derivative(spec, delta) + e @ (Wy - lam * WWy) / sigma2])
    grads.append([weights_service.log_det_derivative(spec, lam) + e @ Wr / sigma2])
    grads.append([-n / (2.0 * sigma2) + (e @ e) / (2.0 * sigma2 ** 2)])
    return np.concatenate([np.atleast_1d(np.asarray(g, dtype=float)) for g in grads])


def _numerical_hessian(theta, grad, bounds):
    """Central differences of the analytic score, relative step, kept inside the parameter box"""
    k = len(theta)
    H = np.empty((k, k))
    for i in range(k):
        h = constants.HESSIAN_REL_STEP * max(abs(theta[i]), 1.0)
        lo, hi = bounds[i]
        h = min(h, (theta[i] - lo) / 2.0, (hi - theta[i]) / 2.0)
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        H[:, i] = (grad(up) - grad(down)) / (2.0 * h)
    return (H + H.T) / 2.0


def _inference(theta, grad, bounds, warnings):
    H = _numerical_hessian(theta, grad, bounds)
    with np.errstate(all='ignore'):
        try:
            condition = float(np.linalg.cond(-H))
        except np.linalg.LinAlgError:
            condition = float('inf')
        cov = np.linalg.pinv(-H) if np.all(np.isfinite(H)) else np.full_like(H, np.nan)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        se = np.where(np.isfinite(se) & (se > 0), se, np.nan)
    if np.any(np.isnan(se)):
        message = "Some standard errors are undefined (flat or singular likelihood curvature)"
        logger.warning(message)
        warnings.append(message)
    return cov, se, condition


def _wald(estimates, se):
    with np.errstate(divide='ignore', invalid='ignore'):
        z = estimates / se
    return z, np.where(np.isfinite(z), 2.0 * norm.sf(np.abs(z)), np.nan)


def _near_boundary(value, lo, hi):
    return (value - lo) < constants.BOUNDARY_TOL or (hi - value) < constants.BOUNDARY_TOL


def _maximize_lambda(delta, design, y, Wy, WWy, spec, lo, hi):
    result = minimize_scalar(
        lambda lam: -_profile(delta, lam, design.Z, design.WZ, y, Wy, WWy, spec)[0],
        bounds=(lo, hi), method='bounded', options={'xatol': constants.OPTIMIZER_XTOL},
    )
    return float(result.x), bool(result.success)


def fit_sdem(X, y, W, names=None, spec=None, design=None):
    """Maximize the concentrated SDEM likelihood over lambda (bounded Brent search)"""
    y = np.asarray(y, dtype=float)
    design = design or build_spatial_design(X, W, names)
    spec = spec or weights_service.spectrum(W)
    lo, hi = spec.interval()
    Wy = W.lag(y)
    WWy = np.zeros_like(y)
    warnings = list(design.warnings)

    lam, success = _maximize_lambda(0.0, design, y, Wy, WWy, spec, lo, hi)
    loglik, gamma, sigma2 = _profile(0.0, lam, design.Z, design.WZ, y, Wy, WWy, spec)
    converged = success
    if _near_boundary(lam, lo, hi):
        message = f"SDEM lambda={lam:.6f} converged to the parameter boundary"
        logger.warning(message)
        warnings.append(message)
        converged = False

    theta = np.concatenate([gamma, [lam, sigma2]])
    bounds = [(-np.inf, np.inf)] * design.q + [(lo, hi), (0.0, np.inf)]

    def grad(t):
        return _gradient(t, design.Z, design.WZ, y, Wy, WWy, spec, False, 0.0)

    cov, se_all, condition = _inference(theta, grad, bounds, warnings)
    se = se_all[:design.q + 1]
    estimates = np.concatenate([gamma, [lam]])
    z, p = _wald(estimates, se)
    logger.info(f"SDEM: lambda={lam:.4f}, sigma2={sigma2:.4g}, loglik={loglik:.4f}, converged={converged}")
    return SdemFit(design=design, gamma=gamma, lam=lam, sigma2=sigma2, loglik=loglik, se=se, z=z, p=p,
                   converged=converged, cov=cov, condition=condition, warnings=warnings)


def _grid(lo, hi, step=constants.MANSKI_GRID_STEP):
    """Multiples of step strictly inside (lo, hi); includes 0 when admissible"""
    ks = np.arange(math.ceil(lo / step), math.floor(hi / step) + 1)
    values = np.round(ks * step, 10)
    return values[(values > lo) & (values < hi)]


def fit_manski(X, y, W, names=None, spec=None, design=None, delta_bounds=None, threads=None):
    """
    Coarse (delta, lambda) grid at 0.05 resolution, then Nelder-Mead refinement.

    delta_bounds=(d, d) fixes delta at d and reduces the fit to a lambda search.
    """
    y = np.asarray(y, dtype=float)
    design = design or build_spatial_design(X, W, names)
    spec = spec or weights_service.spectrum(W)
    lo, hi = spec.interval()
    d_lo, d_hi = delta_bounds if delta_bounds is not None else (lo, hi)
    d_lo, d_hi = max(d_lo, lo), min(d_hi, hi)
    Wy = W.lag(y)
    WWy = W.lag(Wy)
    warnings = list(design.warnings)

    def profile(delta, lam):
        return _profile(delta, lam, design.Z, design.WZ, y, Wy, WWy, spec)[0]

    delta_fixed = d_hi - d_lo <= 0.0
    if delta_fixed:
        delta = float(d_lo)
        lam, converged = _maximize_lambda(delta, design, y, Wy, WWy, spec, lo, hi)
    else:
        deltas = _grid(d_lo, d_hi)
        if 0.0 not in deltas and d_lo < 0.0 < d_hi:
            deltas = np.sort(np.append(deltas, 0.0))
        lams = _grid(lo, hi)
        surface = np.array(run_parallel(lambda d: [profile(d, l) for l in lams], deltas, threads))
        i, j = np.unravel_index(int(np.nanargmax(surface)), surface.shape)
        starts = [(float(deltas[i]), float(lams[j]))]
        # the delta = 0 optimum guarantees the nested SDEM likelihood is never beaten
        if d_lo < 0.0 < d_hi:
            lam0, _ = _maximize_lambda(0.0, design, y, Wy, WWy, spec, lo, hi)
            starts.append((0.0, lam0))

        def objective(params):
            d, l = params
            if not (d_lo < d < d_hi and lo < l < hi):
                return np.inf
            return -profile(d, l)

        best = None
        for start in starts:
            simplex = np.array([start, (start[0] + 0.025, start[1]), (start[0], start[1] + 0.025)])
            simplex[:, 0] = np.clip(simplex[:, 0], d_lo + 1e-9, d_hi - 1e-9)
            simplex[:, 1] = np.clip(simplex[:, 1], lo + 1e-9, hi - 1e-9)
            result = minimize(objective, x0=np.array(start), method='Nelder-Mead',
                              options={'xatol': constants.OPTIMIZER_XTOL, 'fatol': 1e-10,
                                       'maxiter': 4000, 'initial_simplex': simplex})
            if best is None or result.fun < best.fun:
                best = result
        delta, lam = (float(v) for v in best.x)
        converged = bool(best.success)

    loglik, gamma, sigma2 = _profile(delta, lam, design.Z, design.WZ, y, Wy, WWy, spec)
    for value, label, (a, b) in ((lam, 'lambda', (lo, hi)), (delta, 'delta', (d_lo, d_hi))):
        if label == 'delta' and delta_fixed:
            continue
        if _near_boundary(value, a, b):
            message = f"Manski {label}={value:.6f} converged to the parameter boundary"
            logger.warning(message)
            warnings.append(message)
            converged = False

    if delta_fixed:
        theta = np.concatenate([gamma, [lam, sigma2]])
        bounds = [(-np.inf, np.inf)] * design.q + [(lo, hi), (0.0, np.inf)]
    else:
        theta = np.concatenate([gamma, [delta, lam, sigma2]])
        bounds = [(-np.inf, np.inf)] * design.q + [(d_lo, d_hi), (lo, hi), (0.0, np.inf)]

    def grad(t):
        return _gradient(t, design.Z, design.WZ, y, Wy, WWy, spec, not delta_fixed, delta)

    cov, se_all, condition = _inference(theta, grad, bounds, warnings)
    if delta_fixed:
        se = np.concatenate([se_all[:design.q], [np.nan], se_all[design.q:design.q + 1]])
    else:
        se = se_all[:design.q + 2]
    if condition > constants.WEAK_ID_CONDITION:
        message = (f"Manski model weakly identified: Hessian condition number {condition:.3g} "
                   f"exceeds {constants.WEAK_ID_CONDITION:.0e}")
        logger.warning(message)
        warnings.append(message)

    estimates = np.concatenate([gamma, [delta, lam]])
    z, p = _wald(estimates, se)
    logger.info(f"Manski: delta={delta:.4f}, lambda={lam:.4f}, loglik={loglik:.4f}, converged={converged}")
    return ManskiFit(design=design, gamma=gamma, delta=delta, lam=lam, sigma2=sigma2, loglik=loglik,
                     se=se, z=z, p=p, converged=converged, cov=cov, condition=condition,
                     delta_fixed=delta_fixed, warnings=warnings)


def predict_spatial(fit, Z=None, W=None):
    """
    SDEM: trend prediction Z gamma.
    Manski: reduced form (I - delta W)^-1 Z gamma, solved as a dense system.
    """
    Z = fit.design.Z if Z is None else np.asarray(Z, dtype=float)
    trend = Z @ fit.gamma
    if fit.kind == 'sdem' or fit.delta == 0.0:
        return trend
    if W is None:
        raise NumericError("The Manski reduced form needs the weights W", stage='spatial_econ')
    system = np.eye(W.n) - fit.delta * weights_service.to_dense(W)
    try:
        prediction = scipy.linalg.solve(system, trend)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise NumericError(f"(I - delta W) is singular at delta={fit.delta}: {e}", stage='spatial_econ')
    residual = np.max(np.abs(system @ prediction - trend))
    if residual > 1e-8:
        logger.warning(f"Reduced-form solve residual {residual:.3g} exceeds 1e-8")
    return prediction


def likelihood_ratio(manski, sdem):
    """2 (ll_manski - ll_sdem); chi-square with 1 df under delta = 0"""
    return 2.0 * (manski.loglik - sdem.loglik)


def coefficient_table(fit):
    """Rows term,estimate,se,z,p including lambda (and delta)"""
    return pd.DataFrame({
        'term': fit.terms,
        'estimate': fit.estimates,
        'se': fit.se,
        'z': fit.z,
        'p': fit.p,
    })
