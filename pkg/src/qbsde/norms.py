"""Estimators for the ess-sup, conditional-tail-energy and BMO norms.

The BMO-type norms are sqrt of the largest fitted conditional tail
energy; fitted tails are floored at zero (they estimate nonnegative
quantities) and the grid-path max is used by default. A high-quantile
variant is available because Monte Carlo maxima of regression-fitted
fields are noise-inflated upward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regress import BasisSpec, cond_expect
from .paths import PathEnsemble


@dataclass(frozen=True)
class NormReport:
    """Estimated norms of a discrete solution triple."""

    y_sup: float
    z_h2: float
    n_bmo: float
    zm_n_bmo: float

    @property
    def triple_sq(self) -> float:
        return self.y_sup**2 + self.z_h2**2 + self.n_bmo**2


def ess_sup(field, quantile: float | None = None) -> float:
    """Max of |field| over grid nodes and paths, or a high quantile of it."""
    mag = np.abs(np.asarray(field, dtype=float))
    if quantile is None:
        return float(mag.max())
    return float(np.quantile(mag.ravel(), quantile))


def _tail_energy_sup(
    energy_steps: np.ndarray,
    ens: PathEnsemble,
    basis: BasisSpec,
    quantile: float | None,
    estimator: str,
) -> float:
    """Largest fitted E(tail energy | F_{t_i}) over slices and paths.

    energy_steps: per-path per-step nonnegative increments (n_paths, n_steps).
    estimator 'regress' fits each slice; 'mean' uses the cross-path mean
    (cheap surrogate used inside iteration loops).
    """
    tails = np.concatenate(
        [energy_steps[:, ::-1].cumsum(axis=1)[:, ::-1], np.zeros((ens.n_paths, 1))],
        axis=1,
    )
    best = 0.0
    if estimator == "mean":
        return float(np.maximum(tails.mean(axis=0), 0.0).max())
    for i in range(ens.n_steps):
        fitted = cond_expect(tails[:, i], i, ens, None, basis)
        fitted = np.maximum(fitted, 0.0)
        sup = fitted.max() if quantile is None else np.quantile(fitted, quantile)
        best = max(best, float(sup))
    return best


def h2_norm(
    z_field,
    ens: PathEnsemble,
    sigma,
    basis: BasisSpec,
    quantile: float | None = None,
    estimator: str = "regress",
) -> float:
    """sqrt of ess sup_t E(int_t^T sigma^2 z^2 ds | F_t), regression-estimated."""
    z = np.asarray(z_field, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (ens.n_steps,))
    energy = (sig**2) * z[:, : ens.n_steps] ** 2 * ens.dt
    return float(np.sqrt(_tail_energy_sup(energy, ens, basis, quantile, estimator)))


def bmo_norm(
    zeta_field,
    ens: PathEnsemble,
    basis: BasisSpec,
    quantile: float | None = None,
    estimator: str = "regress",
) -> float:
    """BMO norm of the orthogonal part: tail energy of zeta^2."""
    zeta = np.asarray(zeta_field, dtype=float)
    energy = zeta[:, : ens.n_steps] ** 2 * ens.dt
    return float(np.sqrt(_tail_energy_sup(energy, ens, basis, quantile, estimator)))


def combined_bmo_norm(
    z_field,
    zeta_field,
    ens: PathEnsemble,
    sigma,
    basis: BasisSpec,
    quantile: float | None = None,
    estimator: str = "regress",
) -> float:
    """BMO norm of the full martingale part (Z against M plus orthogonal)."""
    z = np.asarray(z_field, dtype=float)
    zeta = np.asarray(zeta_field, dtype=float)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (ens.n_steps,))
    energy = ((sig**2) * z[:, : ens.n_steps] ** 2 + zeta[:, : ens.n_steps] ** 2) * ens.dt
    return float(np.sqrt(_tail_energy_sup(energy, ens, basis, quantile, estimator)))


def norm_report(
    y,
    z,
    zeta,
    ens: PathEnsemble,
    sigma,
    basis: BasisSpec,
    quantile: float | None = None,
    estimator: str = "regress",
) -> NormReport:
    return NormReport(
        y_sup=ess_sup(y, quantile),
        z_h2=h2_norm(z, ens, sigma, basis, quantile, estimator),
        n_bmo=bmo_norm(zeta, ens, basis, quantile, estimator),
        zm_n_bmo=combined_bmo_norm(z, zeta, ens, sigma, basis, quantile, estimator),
    )
