"""Count observation models with analytic gradients.

Two negative-binomial parameterizations are used:

* NB2 (mean/shape): Var(Y) = mu + mu^2 / phi. Used for individual-level
  regressions.
* NB1 (shape alpha = mu / nu, odds nu): Var(Y) = mu (1 + nu). Closed under
  summation for shared nu, which is what makes the coarse-band likelihood
  consistent with the latent single-year model.

Counts are small integers, so special functions of (y + dispersion) are
evaluated once per distinct count via an optional ``CountCache``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln


@dataclass(frozen=True)
class CountCache:
    """Distinct count values, inverse index, and log(y!) per row."""

    unique: np.ndarray
    inverse: np.ndarray
    lgamma_y1: np.ndarray

    @classmethod
    def from_counts(cls, y: np.ndarray) -> "CountCache":
        y = np.asarray(y, dtype=float)
        uniq, inv = np.unique(y, return_inverse=True)
        return cls(unique=uniq, inverse=inv, lgamma_y1=gammaln(y + 1.0))


def poisson_loglik(y: np.ndarray, log_mu: np.ndarray,
                   cache: CountCache | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Per-row log pmf and d/d(log mu)."""
    y = np.asarray(y, dtype=float)
    lg = cache.lgamma_y1 if cache is not None else gammaln(y + 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        mu = np.exp(log_mu)
        ll = np.where(y > 0, y * log_mu, 0.0) - mu - lg
    bad = ~np.isfinite(mu)
    if np.any(bad):
        ll = np.where(bad, -np.inf, ll)
        return ll, np.where(bad, 0.0, y - mu)
    return ll, y - mu


def nb2_loglik(y: np.ndarray, log_mu: np.ndarray, phi: float,
               cache: CountCache | None = None
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row log pmf, d/d(log mu), d/d(phi) for the NB2 parameterization."""
    y = np.asarray(y, dtype=float)
    if cache is None:
        lg_ratio = gammaln(y + phi) - gammaln(phi)
        lg_y1 = gammaln(y + 1.0)
        dig = digamma(y + phi) - digamma(phi)
    else:
        lg_u = gammaln(cache.unique + phi) - gammaln(phi)
        dig_u = digamma(cache.unique + phi) - digamma(phi)
        lg_ratio = lg_u[cache.inverse]
        dig = dig_u[cache.inverse]
        lg_y1 = cache.lgamma_y1
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        mu = np.exp(log_mu)
        log_phi_mu = np.logaddexp(np.log(phi), log_mu)
        ll = (lg_ratio - lg_y1 + phi * (np.log(phi) - log_phi_mu)
              + np.where(y > 0, y * (log_mu - log_phi_mu), 0.0))
        # written to stay finite as mu -> 0 or mu -> inf
        d_logmu = y - (y + phi) / (1.0 + phi / mu)
        d_phi = (dig + np.log(phi) + 1.0 - log_phi_mu
                 - (y + phi) / (phi + mu))
    bad = ~np.isfinite(ll)
    if np.any(bad):
        ll = np.where(bad, -np.inf, ll)
        d_logmu = np.where(bad, 0.0, d_logmu)
        d_phi = np.where(bad, 0.0, d_phi)
    return ll, d_logmu, d_phi


def nb2_group_loglik(n_g: np.ndarray, sum_y: np.ndarray, eta: np.ndarray,
                     phi: float, hist_vals: np.ndarray,
                     hist_counts: np.ndarray
                     ) -> tuple[float, np.ndarray, float]:
    """Exact NB2 log likelihood over predictor groups.

    Rows sharing one predictor value contribute through (group size, group
    count sum); the count-dependent Gamma terms enter through a global
    histogram. Returns (total ll, d ll / d eta per group, d ll / d phi).
    """
    n_total = float(hist_counts.sum())
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        mu = np.exp(eta)
        log_phi_mu = np.log(phi + mu)
        const = float(hist_counts @ gammaln(hist_vals + phi)
                      - n_total * gammaln(phi)
                      - hist_counts @ gammaln(hist_vals + 1.0))
        core = (n_g * phi * (np.log(phi) - log_phi_mu)
                + np.where(sum_y > 0, sum_y * (eta - log_phi_mu), 0.0))
        total = const + float(core.sum())
        if not np.isfinite(total):
            return -np.inf, np.zeros_like(eta), 0.0
        d_eta = phi * sum_y / (mu + phi) - phi * n_g / (1.0 + phi / mu)
        d_phi = (float(hist_counts @ digamma(hist_vals + phi))
                 - n_total * digamma(phi)
                 + float(np.sum(n_g * (np.log(phi) + 1.0 - log_phi_mu)))
                 - float(np.sum((sum_y + n_g * phi) / (phi + mu))))
    if not (np.all(np.isfinite(d_eta)) and np.isfinite(d_phi)):
        return -np.inf, np.zeros_like(eta), 0.0
    return total, d_eta, d_phi


def nb1_loglik(y: np.ndarray, mu: np.ndarray, nu: float
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row NB1 log pmf, d/d(mu), d/d(nu); shape mu/nu, Var = mu(1+nu)."""
    y = np.asarray(y, dtype=float)
    alpha = mu / nu
    ll = (gammaln(y + alpha) - gammaln(alpha) - gammaln(y + 1.0)
          - alpha * np.log1p(nu) + y * (np.log(nu) - np.log1p(nu)))
    d_alpha = digamma(y + alpha) - digamma(alpha) - np.log1p(nu)
    d_mu = d_alpha / nu
    d_nu = (d_alpha * (-mu / nu**2) + y / nu - (y + alpha) / (1.0 + nu))
    return ll, d_mu, d_nu


def nb1_agg_loglik(y_cell: np.ndarray, mu_rows: np.ndarray,
                   row_cell: np.ndarray, nu: float
                   ) -> tuple[np.ndarray, np.ndarray, float]:
    """Coarse-cell NB1 likelihood with shape sum_{rows in cell} mu / nu.

    Returns per-cell log pmf, d/d(mu_row) per row, and the total d/d(nu).
    """
    y_cell = np.asarray(y_cell, dtype=float)
    n_cells = y_cell.shape[0]
    shape = np.bincount(row_cell, weights=mu_rows, minlength=n_cells) / nu
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ll = (gammaln(y_cell + shape) - gammaln(shape)
              - gammaln(y_cell + 1.0)
              - shape * np.log1p(nu) + y_cell * (np.log(nu) - np.log1p(nu)))
        d_shape = digamma(y_cell + shape) - digamma(shape) - np.log1p(nu)
        d_nu_cells = (d_shape * (-shape / nu) + y_cell / nu
                      - (y_cell + shape) / (1.0 + nu))
    bad = ~np.isfinite(ll) | ~np.isfinite(d_shape)
    if np.any(bad):
        ll = np.where(bad, -np.inf, ll)
        d_shape = np.where(bad, 0.0, d_shape)
        d_nu_cells = np.where(bad, 0.0, d_nu_cells)
    d_mu_rows = d_shape[row_cell] / nu
    return ll, d_mu_rows, float(d_nu_cells.sum())


def nb_logpmf(y, mu, dispersion: float, kind: str
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log pmf with gradients w.r.t. (mu, dispersion) for NB1 or NB2."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(y < 0):
        raise ValueError("counts must be non-negative")
    if np.any(mu <= 0) or dispersion <= 0:
        raise ValueError("mu and dispersion must be positive")
    if kind == "nb2":
        ll, d_logmu, d_phi = nb2_loglik(y, np.log(mu), dispersion)
        return ll, d_logmu / mu, d_phi
    if kind == "nb1":
        return nb1_loglik(y, mu, dispersion)
    raise ValueError(f"unknown negative-binomial kind {kind!r}")


def nb2_rvs(rng: np.random.Generator, mu: np.ndarray, phi: float
            ) -> np.ndarray:
    """Draw NB2 counts (gamma-Poisson mixture)."""
    lam = rng.gamma(shape=phi, scale=np.asarray(mu) / phi)
    return rng.poisson(lam)


def nb1_rvs(rng: np.random.Generator, mu: np.ndarray, nu: float
            ) -> np.ndarray:
    """Draw NB1 counts with shape mu/nu and success prob 1/(1+nu)."""
    shape = np.asarray(mu, dtype=float) / nu
    return rng.negative_binomial(shape, 1.0 / (1.0 + nu))
