"""Least-squares Monte Carlo conditional expectations and martingale loadings.

Global polynomial basis in the slice states (W1_t, W2_t), standardized per
slice, ridge-stabilized. With weights the fit approximates the changed-
measure conditional expectation E[wX|F]/E[w|F] as a weighted regression.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .paths import GirsanovWeights, PathEnsemble

RIDGE_PER_PATH = 1e-10


@dataclass(frozen=True)
class BasisSpec:
    """Global polynomial basis: all monomials of total degree <= degree."""

    degree: int = 3
    inputs: tuple = ("w1", "w2")
    standardize: bool = True

    def __post_init__(self):
        if not (0 <= self.degree <= 6):
            raise ValueError(f"degree must be in [0, 6], got {self.degree}")
        if not self.inputs or any(i not in ("w1", "w2") for i in self.inputs):
            raise ValueError(f"inputs must be a nonempty subset of ('w1','w2'), got {self.inputs}")


def design_matrix(ens: PathEnsemble, slice_i: int, basis: BasisSpec) -> np.ndarray:
    """Basis evaluated at the slice-i states, intercept in column 0.

    Matrices are cached on the ensemble: solver loops refit the same
    slices hundreds of times and the monomial build dominates otherwise.
    """
    cache = ens.__dict__.get("_design_cache")
    if cache is None:
        cache = {}
        object.__setattr__(ens, "_design_cache", cache)
    key = (slice_i, basis)
    hit = cache.get(key)
    if hit is not None:
        return hit
    cols = [np.ones(ens.n_paths)]
    states = []
    for name in basis.inputs:
        x = ens.levels(name)[:, slice_i]
        if basis.standardize:
            sd = x.std()
            x = (x - x.mean()) / (sd if sd > 1e-12 else 1.0)
        states.append(x)
    if len(states) == 1:
        for d in range(1, basis.degree + 1):
            cols.append(states[0] ** d)
    else:
        x, y = states
        for total in range(1, basis.degree + 1):
            for dy in range(total + 1):
                cols.append(x ** (total - dy) * y**dy)
    phi = np.column_stack(cols)
    cache[key] = phi
    return phi


def _solve_wls(phi, targets, w, ridge):
    a = phi.T @ (phi * w[:, None])
    b = phi.T @ (w * targets)
    if ridge > 0.0:
        a = a.copy()
        idx = np.arange(1, a.shape[0])  # intercept unpenalized: constants stay exact
        a[idx, idx] += ridge
    try:
        coef = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("normal equations singular after ridge stabilization") from exc
    if not np.all(np.isfinite(coef)):
        raise RankDeficient("non-finite regression coefficients")
    return coef, a


def cond_expect(
    targets,
    slice_i: int,
    ens: PathEnsemble,
    weights: GirsanovWeights | None,
    basis: BasisSpec,
    weight_slice: int | None = None,
    return_se: bool = False,
):
    """Fitted values of the projection of targets onto the slice-i basis.

    weight_slice selects which column of the weight process prices the
    targets (defaults to the terminal slice). Slice 0 is the (weighted)
    sample mean: F_0 is trivial and the state distribution degenerate.
    When return_se is set, also returns the per-path fit standard error.
    """
    targets = np.asarray(targets, dtype=float)
    if weights is None:
        w = np.ones(ens.n_paths)
    else:
        w = weights.weights_at(ens.n_steps if weight_slice is None else weight_slice)
    if slice_i == 0:
        mean = float(np.average(targets, weights=w))
        fitted = np.full(ens.n_paths, mean)
        if return_se:
            var = float(np.average((targets - mean) ** 2, weights=w))
            se = np.full(ens.n_paths, np.sqrt(max(var, 0.0) / ens.n_paths))
            return fitted, se
        return fitted
    phi = design_matrix(ens, slice_i, basis)
    coef, a = _solve_wls(phi, targets, w, RIDGE_PER_PATH * w.sum())
    fitted = phi @ coef
    if not return_se:
        return fitted
    resid = targets - fitted
    dof = max(ens.n_paths - phi.shape[1], 1)
    sigma2 = float((w * resid * resid).sum() / w.sum()) * ens.n_paths / dof
    # leverage under the WLS covariance approximation
    try:
        a_inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("normal equations singular in SE computation") from exc
    lever = np.einsum("ij,jk,ik->i", phi, a_inv, phi)
    se = np.sqrt(np.maximum(sigma2 * np.maximum(lever, 0.0) * w.mean(), 0.0))
    return fitted, se


def _compensated_increment(ens, weights, driver, slice_i):
    dw = ens.increments(driver)[:, slice_i]
    if weights is not None:
        drift = weights.drift(driver)
        if drift is not None:
            dw = dw - drift[:, slice_i] * ens.dt
    return dw


def extract_z(
    y_next,
    slice_i: int,
    ens: PathEnsemble,
    weights: GirsanovWeights | None,
    basis: BasisSpec,
    sigma_t: float = 1.0,
    center=None,
):
    """Predictable loading on the basic driver at t_i.

    Regresses y_next * dW1_i / dt on the slice-i states, divided by
    sigma(t_i). Under a weighted measure the compensated increment is
    used, so the loading is against the changed-measure martingale. An
    optional F_{t_i}-measurable center is subtracted from y_next as a
    control variate (identical expectation, much lower variance).
    """
    return _extract(y_next, slice_i, ens, weights, basis, "w1", sigma_t, center)


def extract_zeta(
    y_next,
    slice_i: int,
    ens: PathEnsemble,
    weights: GirsanovWeights | None,
    basis: BasisSpec,
    center=None,
):
    """Loading of the orthogonal martingale part on W2 at t_i."""
    return _extract(y_next, slice_i, ens, weights, basis, "w2", 1.0, center)


def _extract(y_next, slice_i, ens, weights, basis, driver, sigma_t, center):
    if slice_i >= ens.n_steps:
        raise ValueError("loading extraction needs slice_i < n_steps")
    y_next = np.asarray(y_next, dtype=float)
    if center is not None:
        y_next = y_next - np.asarray(center, dtype=float)
    dw = _compensated_increment(ens, weights, driver, slice_i)
    target = y_next * dw / ens.dt
    fitted = cond_expect(target, slice_i, ens, weights, basis, weight_slice=slice_i + 1)
    return fitted / sigma_t
