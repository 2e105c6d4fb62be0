"""Two-dimensional Brownian ensemble and stochastic-exponential weighting.

W1 drives the Z-component, W2 carries the orthogonal martingale part.
Measure changes are realized as likelihood weights on the original paths
(never by re-simulation), because the drift integrands are path-functional.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ResourceLimit, WeightDegeneracy
from .model import GridSpec, TerminalCondition

# memory budget for one ensemble, in float64 slots (~3.2 GB)
DEFAULT_MAX_FLOATS = 400_000_000

_MAGIC = b"QBSDENS1"


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated grid paths of the two independent Brownian drivers.

    Levels have shape (n_paths, n_steps + 1) and start at 0; increments
    are stored as exact differences of the levels so that
    ``levels[:, i+1] - levels[:, i] == increments[:, i]`` bitwise.
    """

    grid: GridSpec
    w1_increments: np.ndarray
    w2_increments: np.ndarray
    w1_levels: np.ndarray
    w2_levels: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.grid.n_paths

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    def increments(self, driver: str) -> np.ndarray:
        return self.w1_increments if driver == "w1" else self.w2_increments

    def levels(self, driver: str) -> np.ndarray:
        return self.w1_levels if driver == "w1" else self.w2_levels


def _levels_from_draws(draws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n_paths = draws.shape[0]
    levels = np.empty((n_paths, draws.shape[1] + 1))
    levels[:, 0] = 0.0
    np.cumsum(draws, axis=1, out=levels[:, 1:])
    return np.diff(levels, axis=1), levels


def generate(grid: GridSpec, max_floats: int = DEFAULT_MAX_FLOATS) -> PathEnsemble:
    """Simulate the ensemble; bit-reproducible for a fixed seed.

    The two drivers use independent child streams spawned from the seed
    (``SeedSequence(seed).spawn(2)``); draws are laid out path-major, so
    enlarging n_paths appends new paths without perturbing existing ones.
    """
    need = 4 * grid.n_paths * (grid.n_steps + 1)
    if need > max_floats:
        raise ResourceLimit(
            f"ensemble needs {need} float64 slots, budget is {max_floats}"
        )
    child1, child2 = np.random.SeedSequence(grid.seed).spawn(2)
    scale = np.sqrt(grid.dt)
    shape = (grid.n_paths, grid.n_steps)
    draws1 = scale * np.random.default_rng(child1).standard_normal(shape)
    draws2 = scale * np.random.default_rng(child2).standard_normal(shape)
    inc1, lev1 = _levels_from_draws(draws1)
    inc2, lev2 = _levels_from_draws(draws2)
    return PathEnsemble(grid, inc1, inc2, lev1, lev2)


@dataclass(frozen=True)
class GirsanovWeights:
    """Cumulative log stochastic exponential along each path.

    log_weights has shape (n_paths, n_steps + 1), zero in the first
    column. drift_w1/drift_w2 retain the per-step drift integrands so
    that compensated increments are available downstream; either may be
    None when the corresponding driver carries no drift.
    """

    log_weights: np.ndarray
    normalized: bool = True
    drift_w1: np.ndarray | None = None
    drift_w2: np.ndarray | None = None

    def weights_at(self, slice_i: int) -> np.ndarray:
        """Positive weights at a time slice, renormalized to mean 1 if set."""
        w = np.exp(self.log_weights[:, slice_i])
        if self.normalized:
            w = w / w.mean()
        return w

    def effective_sample_size(self, slice_i: int = -1) -> float:
        w = np.exp(self.log_weights[:, slice_i])
        return float(w.sum() ** 2 / (w * w).sum())

    def drift(self, driver: str) -> np.ndarray | None:
        return self.drift_w1 if driver == "w1" else self.drift_w2

    def combine(self, other: "GirsanovWeights") -> "GirsanovWeights":
        """Product of the two exponentials (drifts on distinct or equal drivers add)."""

        def merge(a, b):
            if a is None:
                return b
            if b is None:
                return a
            return a + b

        return GirsanovWeights(
            log_weights=self.log_weights + other.log_weights,
            normalized=self.normalized or other.normalized,
            drift_w1=merge(self.drift_w1, other.drift_w1),
            drift_w2=merge(self.drift_w2, other.drift_w2),
        )


def girsanov_weights(
    ens: PathEnsemble,
    integrand,
    driver: str,
    normalized: bool = True,
    ess_floor: float = 0.05,
) -> GirsanovWeights:
    """Discrete stochastic exponential of the adapted integrand against a driver.

    log w(t_{i+1}) = log w(t_i) + lam_i dW_i - lam_i^2 dt / 2. Raises
    WeightDegeneracy when the terminal effective sample size falls below
    ess_floor * n_paths.
    """
    if driver not in ("w1", "w2"):
        raise ValueError("driver must be 'w1' or 'w2'")
    lam = np.broadcast_to(
        np.asarray(integrand, dtype=float), (ens.n_paths, ens.n_steps)
    ).copy()
    dw = ens.increments(driver)
    log_inc = lam * dw - 0.5 * lam * lam * ens.dt
    log_w = np.zeros((ens.n_paths, ens.n_steps + 1))
    np.cumsum(log_inc, axis=1, out=log_w[:, 1:])
    out = GirsanovWeights(
        log_weights=log_w,
        normalized=normalized,
        drift_w1=lam if driver == "w1" else None,
        drift_w2=lam if driver == "w2" else None,
    )
    ess = out.effective_sample_size()
    if ess < ess_floor * ens.n_paths:
        raise WeightDegeneracy(
            f"terminal ESS {ess:.1f} below floor {ess_floor:.0%} of {ens.n_paths}",
            ess=ess,
        )
    return out


def unit_weights(ens: PathEnsemble) -> GirsanovWeights:
    return GirsanovWeights(np.zeros((ens.n_paths, ens.n_steps + 1)))


def terminal_values(ens: PathEnsemble, tc: TerminalCondition) -> np.ndarray:
    """Per-path terminal values h(W1_T, W2_T)."""
    return tc.evaluate(ens.w1_levels[:, -1], ens.w2_levels[:, -1])


# -- binary dump for cross-run reuse -----------------------------------

def dump_ensemble(ens: PathEnsemble, path) -> None:
    """Header (grid params + seed) then row-major float64 LE increments."""
    g = ens.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<dqqq", g.T, g.n_steps, g.n_paths, g.seed))
        fh.write(ens.w1_increments.astype("<f8").tobytes(order="C"))
        fh.write(ens.w2_increments.astype("<f8").tobytes(order="C"))


def load_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a qbsde ensemble dump")
        T, n_steps, n_paths, seed = struct.unpack("<dqqq", fh.read(32))
        grid = GridSpec(T=T, n_steps=int(n_steps), n_paths=int(n_paths), seed=int(seed))
        count = grid.n_paths * grid.n_steps
        raw1 = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(grid.n_paths, grid.n_steps)
        raw2 = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(grid.n_paths, grid.n_steps)
    inc1, lev1 = _levels_from_draws(raw1)
    inc2, lev2 = _levels_from_draws(raw2)
    return PathEnsemble(grid, inc1, inc2, lev1, lev2)
