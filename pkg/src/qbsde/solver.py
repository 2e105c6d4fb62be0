"""Constructive solver: Picard fixed point, exponential transform, splitting chain.

The Picard iterate freezes the whole triple for one backward sweep
(globally-frozen map); the sweep is explicit because the unknowns enter
linearly once the generator arguments are frozen. Large terminal data is
split into pieces below the contraction threshold and solved recursively
around the accumulated solution, with each stage reduced to the small
case by a measure change plus exponential change of variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import norms as norms_mod
from .errors import (
    DegenerateBounds,
    GeneratorEvaluationError,
    NoConvergence,
    SmallnessViolated,
    StageCapExceeded,
)
from .model import (
    CoefficientBounds,
    GeneratorSpec,
    GridSpec,
    TerminalCondition,
    ball_radius,
    derive_bounds,
    smallness_threshold,
)
from .paths import GirsanovWeights, PathEnsemble, generate, girsanov_weights, terminal_values
from .regress import BasisSpec, cond_expect, extract_z, extract_zeta


@dataclass
class SolverOptions:
    tol: float = 1e-4
    max_iter: int = 50
    ess_floor: float = 0.05
    ball_slack: float = 2.0
    track_norms: bool = True
    initial: str = "zero"
    quantile: float | None = None
    max_stages: int = 64
    compute_residual: bool = True


@dataclass
class SolutionTriple:
    """Discrete (Y, Z, zeta) fields on the grid, plus diagnostics.

    All fields have shape (n_paths, n_steps + 1); the last slice of z and
    zeta is unused. y_se is the per-slice regression fit standard error.
    """

    y: np.ndarray
    z: np.ndarray
    zeta: np.ndarray
    norms: norms_mod.NormReport | None = None
    residual: float | None = None
    y_se: np.ndarray | None = None
    info: dict = field(default_factory=dict)


@dataclass
class ConvergenceTrace:
    distances: list
    ratios: list
    ball_violations: int
    iterations: int
    radius: float
    contraction_bound: float
    converged: bool

    def geometric_rate(self, floor: float = 1e-13) -> float | None:
        """Least-squares geometric decay rate of the distances above floor."""
        d = [x for x in self.distances if x > floor]
        if len(d) < 2:
            return None
        k = np.arange(len(d))
        slope = np.polyfit(k, np.log(d), 1)[0]
        return float(np.exp(slope))


@dataclass
class TransformParams:
    """Exponential change of variables removing linear y- and z-terms.

    alpha/gamma are per-step fields (broadcastable to (n_paths, n_steps));
    exp_factor[:, i] = exp(sum_{j<i} alpha_j dt), equal to 1 at t = 0.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    exp_factor: np.ndarray


def make_transform_params(ens: PathEnsemble, alpha, gamma) -> TransformParams:
    alpha = np.atleast_2d(np.broadcast_to(np.asarray(alpha, dtype=float), (ens.n_steps,))
                          if np.ndim(alpha) <= 1 else np.asarray(alpha, dtype=float))
    gamma = np.atleast_2d(np.broadcast_to(np.asarray(gamma, dtype=float), (ens.n_steps,))
                          if np.ndim(gamma) <= 1 else np.asarray(gamma, dtype=float))
    log_e = np.zeros((alpha.shape[0], ens.n_steps + 1))
    np.cumsum(alpha * ens.dt, axis=1, out=log_e[:, 1:])
    return TransformParams(alpha=alpha, gamma=gamma, exp_factor=np.exp(log_e))


@dataclass
class DiscreteProblem:
    """A grid problem already in the form the sweep consumes.

    f_shifted(i, y, v) is the generator minus its value at the origin
    (zero at (y, v) = (0, 0)); v stands for sigma * Z. threshold is the
    admissible terminal sup-norm (inf when unrestricted).
    """

    ens: PathEnsemble
    f_shifted: object
    g_col: object
    sigma_steps: np.ndarray
    terminal: np.ndarray
    xi_sup: float
    threshold: float
    beta: float
    weights: GirsanovWeights | None = None


def problem_from_generator(
    gen: GeneratorSpec,
    ens: PathEnsemble,
    bounds: CoefficientBounds | None = None,
    weights: GirsanovWeights | None = None,
) -> DiscreteProblem:
    if bounds is None:
        bounds = derive_bounds(gen, ens.grid.T)
    try:
        threshold = smallness_threshold(bounds)
    except DegenerateBounds:
        threshold = math.inf
    times = ens.grid.times
    tc = gen.terminal

    def f_shifted(i, y, v):
        return gen.f(times[i], y, v) - gen.f0(times[i])

    return DiscreteProblem(
        ens=ens,
        f_shifted=f_shifted,
        g_col=lambda i: gen.g,
        sigma_steps=np.full(ens.n_steps, gen.sigma),
        terminal=terminal_values(ens, tc),
        xi_sup=tc.sup_norm,
        threshold=threshold,
        beta=bounds.beta,
        weights=weights,
    )


# -- one application of the fixed-point map ----------------------------

def _sweep(problem: DiscreteProblem, basis: BasisSpec, frozen_y, frozen_z, frozen_zeta):
    """One backward sweep of the map: terminal slice pinned, then for
    i = n-1..0 project the one-step target and extract the loadings."""
    ens = problem.ens
    n1 = ens.n_steps + 1
    dt = ens.dt
    y = np.empty((ens.n_paths, n1))
    z = np.zeros((ens.n_paths, n1))
    zeta = np.zeros((ens.n_paths, n1))
    se = np.zeros(n1)
    y[:, -1] = problem.terminal
    for i in range(ens.n_steps - 1, -1, -1):
        v = problem.sigma_steps[i] * frozen_z[:, i]
        drive = problem.f_shifted(i, frozen_y[:, i], v)
        if not np.all(np.isfinite(drive)):
            raise GeneratorEvaluationError(f"generator returned non-finite values at slice {i}")
        target = y[:, i + 1] + drive * dt + problem.g_col(i) * frozen_zeta[:, i] ** 2 * dt
        fitted, se_i = cond_expect(
            target, i, ens, problem.weights, basis, weight_slice=i + 1, return_se=True
        )
        y[:, i] = fitted
        se[i] = float(se_i.max())
        z[:, i] = extract_z(
            y[:, i + 1], i, ens, problem.weights, basis,
            sigma_t=problem.sigma_steps[i], center=fitted,
        )
        zeta[:, i] = extract_zeta(
            y[:, i + 1], i, ens, problem.weights, basis, center=fitted,
        )
    return y, z, zeta, se


def apply_F(
    frozen: SolutionTriple,
    gen: GeneratorSpec,
    ens: PathEnsemble,
    weights: GirsanovWeights | None,
    basis: BasisSpec,
) -> SolutionTriple:
    """One application of the map to a frozen triple.

    The generator must already be in the alpha = 0, gamma = 0 form (the
    transform handles that upstream).
    """
    problem = problem_from_generator(gen, ens, weights=weights)
    y, z, zeta, se = _sweep(problem, basis, frozen.y, frozen.z, frozen.zeta)
    report = norms_mod.norm_report(y, z, zeta, ens, problem.sigma_steps, basis)
    return SolutionTriple(y=y, z=z, zeta=zeta, norms=report, y_se=se)


def _triple_norm_sq(y, z, zeta, problem, basis, estimator, quantile=None):
    ens = problem.ens
    return (
        norms_mod.ess_sup(y, quantile) ** 2
        + norms_mod.h2_norm(z, ens, problem.sigma_steps, basis, quantile, estimator) ** 2
        + norms_mod.bmo_norm(zeta, ens, basis, quantile, estimator) ** 2
    )


def _initial_triple(problem: DiscreteProblem, basis: BasisSpec, kind: str):
    ens = problem.ens
    shape = (ens.n_paths, ens.n_steps + 1)
    if kind == "zero":
        return np.zeros(shape), np.zeros(shape), np.zeros(shape)
    if kind == "cond-mean":
        flat = replace(problem, f_shifted=lambda i, y, v: np.zeros(ens.n_paths),
                       g_col=lambda i: 0.0)
        y, z, zeta, _ = _sweep(flat, basis, *(np.zeros(shape),) * 3)
        return y, z, zeta
    raise ValueError(f"unknown initial triple kind {kind!r}")


def _projected_residual(problem: DiscreteProblem, basis: BasisSpec, y, z, zeta):
    """Max over slices/paths of the basis-projected discrete dynamics defect.

    The martingale increments are omitted: their exact conditional
    expectation at the fitting slice is zero, and keeping their sampled
    projection would only add O(n^-1/2) regression noise to a quantity
    meant to certify the fixed-point property (which it bounds by the
    sweep tolerance)."""
    ens = problem.ens
    dt = ens.dt
    worst = 0.0
    for i in range(ens.n_steps):
        v = problem.sigma_steps[i] * z[:, i]
        defect = (
            y[:, i + 1]
            + problem.f_shifted(i, y[:, i], v) * dt
            + problem.g_col(i) * zeta[:, i] ** 2 * dt
        )
        proj = cond_expect(defect, i, ens, problem.weights, basis, weight_slice=i + 1)
        worst = max(worst, float(np.abs(proj - y[:, i]).max()))
    return worst


def _solve_small_problem(problem: DiscreteProblem, basis: BasisSpec, opts: SolverOptions):
    if problem.xi_sup > problem.threshold * (1.0 + 1e-12):
        raise SmallnessViolated(
            f"terminal sup-norm {problem.xi_sup:.6g} exceeds threshold {problem.threshold:.6g}"
        )
    radius = ball_radius(problem.xi_sup)
    bound = 128.0 * problem.beta**2 * radius**2
    estimator = "regress" if opts.track_norms else "mean"
    prev_y, prev_z, prev_zeta = _initial_triple(problem, basis, opts.initial)
    distances: list[float] = []
    ball_violations = 0
    converged = False
    y = z = zeta = se = None
    for it in range(1, opts.max_iter + 1):
        y, z, zeta, se = _sweep(problem, basis, prev_y, prev_z, prev_zeta)
        d = math.sqrt(
            _triple_norm_sq(y - prev_y, z - prev_z, zeta - prev_zeta, problem, basis, estimator)
        )
        distances.append(d)
        if radius > 0.0:
            norm_sq = _triple_norm_sq(y, z, zeta, problem, basis, estimator)
            if norm_sq > opts.ball_slack * radius**2:
                ball_violations += 1
        prev_y, prev_z, prev_zeta = y, z, zeta
        if d < opts.tol:
            converged = True
            break
    ratios = [
        distances[k + 1] / distances[k]
        for k in range(len(distances) - 1)
        if distances[k] > 0.0
    ]
    trace = ConvergenceTrace(
        distances=distances,
        ratios=ratios,
        ball_violations=ball_violations,
        iterations=len(distances),
        radius=radius,
        contraction_bound=bound,
        converged=converged,
    )
    if not converged:
        raise NoConvergence(
            f"Picard iteration above tol {opts.tol} after {opts.max_iter} iterations "
            f"(last distance {distances[-1]:.3g})",
            trace=trace,
        )
    residual = (
        _projected_residual(problem, basis, y, z, zeta) if opts.compute_residual else None
    )
    sol = SolutionTriple(y=y, z=z, zeta=zeta, residual=residual, y_se=se)
    return sol, trace


def solve_small(gen, ens: PathEnsemble, basis: BasisSpec, opts: SolverOptions | None = None):
    """Fixed point of the map for terminal data below the smallness threshold.

    gen is a GeneratorSpec in alpha = 0, gamma = 0 form, or a
    DiscreteProblem (e.g. the output of transform_generator). Returns
    (SolutionTriple, ConvergenceTrace).
    """
    opts = opts or SolverOptions()
    problem = gen if isinstance(gen, DiscreteProblem) else problem_from_generator(gen, ens)
    sol, trace = _solve_small_problem(problem, basis, opts)
    if opts.track_norms:
        sol.norms = norms_mod.norm_report(
            sol.y, sol.z, sol.zeta, problem.ens, problem.sigma_steps, basis,
            quantile=opts.quantile,
        )
    return sol, trace


# -- exponential transform (removal of linear y- and z-terms) ----------

def transform_generator(
    gen: GeneratorSpec,
    params: TransformParams,
    ens: PathEnsemble,
    bounds: CoefficientBounds | None = None,
    ess_floor: float = 0.05,
) -> tuple[DiscreteProblem, GirsanovWeights | None]:
    """Transformed problem with the linear terms removed, plus the
    likelihood weights realizing the accompanying measure change.

    The transformed coefficient bounds scale by exp of the integrated
    linear-rate bound, and the terminal/bracket data pick up the
    exponential factor pathwise.
    """
    if bounds is None:
        bounds = derive_bounds(gen, ens.grid.T)
    times = ens.grid.times
    exp_f = params.exp_factor
    alpha, gamma = params.alpha, params.gamma

    weights = None
    if np.any(gamma != 0.0):
        weights = girsanov_weights(ens, gamma, "w1", ess_floor=ess_floor)

    def f_shifted(i, y, v):
        e = exp_f[:, i]
        base = gen.f(times[i], y / e, v / e) - gen.f0(times[i])
        return e * base - alpha[:, i] * y - gamma[:, i] * v

    growth = math.exp(bounds.r_int_inf)
    r_bar = bounds.r_const * growth
    theta_bar = bounds.theta * growth
    beta_bar = 8.0 * max(r_bar**2 * ens.grid.T, theta_bar**2)
    if beta_bar > 0.0:
        threshold = (1.0 / (32.0 * beta_bar)) * math.exp(-2.0 * r_bar * ens.grid.T)
    else:
        threshold = math.inf
    terminal = exp_f[:, -1] * terminal_values(ens, gen.terminal)
    problem = DiscreteProblem(
        ens=ens,
        f_shifted=f_shifted,
        g_col=lambda i: gen.g / exp_f[:, i],
        sigma_steps=np.full(ens.n_steps, gen.sigma),
        terminal=terminal,
        xi_sup=float(np.abs(terminal).max()),
        threshold=threshold,
        beta=beta_bar,
        weights=weights,
    )
    return problem, weights


def untransform_solution(sol: SolutionTriple, params: TransformParams) -> SolutionTriple:
    """Map a transformed-coordinates solution back to original coordinates."""
    e = params.exp_factor
    return SolutionTriple(y=sol.y / e, z=sol.z / e, zeta=sol.zeta / e, info=dict(sol.info))


# -- terminal splitting and the recursive chain ------------------------

SPLIT_SAFETY = 0.8


def split_terminal(tc: TerminalCondition, threshold: float) -> list[TerminalCondition]:
    """Equal pieces h/m, each below 0.8 * threshold (safety margin)."""
    if not threshold > 0.0:
        raise ValueError("threshold must be positive")
    eff = SPLIT_SAFETY * threshold
    if tc.sup_norm <= eff or math.isinf(threshold):
        return [tc]
    m = math.ceil(tc.sup_norm / eff)
    return [tc.scaled(1.0 / m)] * m


def _shift_ode(gen: GeneratorSpec, grid: GridSpec, substeps: int = 16) -> np.ndarray:
    """Deterministic shift G on the grid: G' = f(t, -G, 0), G(0) = 0.

    Subtracting G from the solution turns the origin-pinned chain output
    into a solution of the original equation (for y-independent f this is
    the plain integral of f(t, 0, 0)). Classical fourth-order steps with
    substeps per grid interval keep the integration error well below the
    statistical tolerances even on coarse grids.
    """
    times = grid.times
    G = np.zeros(grid.n_steps + 1)
    h = grid.dt / substeps

    def rhs(t, g):
        return float(gen.f(t, -g, 0.0))

    for i in range(grid.n_steps):
        g0 = G[i]
        for s in range(substeps):
            t = times[i] + s * h
            k1 = rhs(t, g0)
            k2 = rhs(t + h / 2, g0 + h / 2 * k1)
            k3 = rhs(t + h / 2, g0 + h / 2 * k2)
            k4 = rhs(t + h, g0 + h * k3)
            g0 = g0 + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        G[i + 1] = g0
    return G


def _stage_split_plan(gen: GeneratorSpec, bounds: CoefficientBounds, sup_sh: float, opts):
    """Number of pieces so every transformed stage clears its own threshold.

    Stage bounds come from the curvature that survives the exact removal
    of the linear terms (r_resid, theta), scaled by the exponential
    growth of the alpha-integral; the extra exp(-alpha_int) guards the
    pathwise growth of the stage terminal under the change of variables.
    """
    T = bounds.horizon
    growth = math.exp(bounds.alpha_int_inf)
    theta_bar = bounds.theta * growth
    r_bar = bounds.r_resid * growth
    beta_bar = 8.0 * max(r_bar**2 * T, theta_bar**2)
    if beta_bar == 0.0:
        return 1, math.inf, beta_bar
    thr_stage = (1.0 / (32.0 * beta_bar)) * math.exp(-2.0 * r_bar * T)
    piece_cap = SPLIT_SAFETY * math.exp(-bounds.alpha_int_inf) * thr_stage
    m = max(1, math.ceil(sup_sh / piece_cap))
    if m > opts.max_stages:
        raise StageCapExceeded(
            f"splitting needs {m} stages, cap is {opts.max_stages} "
            "(raise SolverOptions.max_stages)"
        )
    return m, thr_stage, beta_bar


def solve_chain(
    gen: GeneratorSpec,
    ens: PathEnsemble,
    basis: BasisSpec,
    opts: SolverOptions | None = None,
) -> SolutionTriple:
    """Solve for arbitrary bounded terminal data by the recursive chain.

    Shift away f(t,0,0), split the terminal into below-threshold pieces,
    solve each piece's equation around the accumulated solution (linear
    terms removed by the exponential transform, bracket cross-terms by a
    measure change on the orthogonal driver), sum the pieces, unshift.
    """
    opts = opts or SolverOptions()
    grid = ens.grid
    bounds = derive_bounds(gen, grid.T)
    times = grid.times
    n1 = ens.n_steps + 1
    sig = gen.sigma

    G = _shift_ode(gen, grid)
    xi_vals = terminal_values(ens, gen.terminal) + G[-1]
    sup_sh = gen.terminal.sup_norm + abs(G[-1])
    m, thr_stage, beta_bar = _stage_split_plan(gen, bounds, sup_sh, opts)
    piece_vals = xi_vals / m

    acc_y = np.zeros((ens.n_paths, n1))
    acc_z = np.zeros((ens.n_paths, n1))
    acc_zeta = np.zeros((ens.n_paths, n1))
    stages = []
    traces = []
    stage_opts = replace(
        opts,
        track_norms=False if m > 1 else opts.track_norms,
        compute_residual=False,
        initial="zero",
    )

    for j in range(m):
        y_curr = acc_y[:, : ens.n_steps] - G[: ens.n_steps]
        v_curr = sig * acc_z[:, : ens.n_steps]
        t_row = times[: ens.n_steps]
        alpha = np.broadcast_to(
            np.asarray(gen.f_y(t_row, y_curr, v_curr), dtype=float),
            (ens.n_paths, ens.n_steps),
        )
        gamma = np.broadcast_to(
            np.asarray(gen.f_z(t_row, y_curr, v_curr), dtype=float),
            (ens.n_paths, ens.n_steps),
        )
        weights = None
        if np.any(gamma != 0.0):
            weights = girsanov_weights(ens, gamma, "w1", ess_floor=opts.ess_floor)
        if gen.g != 0.0 and np.any(acc_zeta != 0.0):
            w_orth = girsanov_weights(
                ens, 2.0 * gen.g * acc_zeta[:, : ens.n_steps], "w2",
                ess_floor=opts.ess_floor,
            )
            weights = w_orth if weights is None else weights.combine(w_orth)

        params = make_transform_params(ens, alpha, gamma)
        exp_f = params.exp_factor

        def f_shifted(i, y, v, exp_f=exp_f, alpha=alpha, gamma=gamma,
                      acc_y=acc_y, acc_z=acc_z):
            e = exp_f[:, i]
            y_base = acc_y[:, i] - G[i]
            v_base = sig * acc_z[:, i]
            out = e * (
                gen.f(times[i], y / e + y_base, v / e + v_base)
                - gen.f(times[i], y_base, v_base)
            )
            return out - alpha[:, i] * y - gamma[:, i] * v

        terminal_j = exp_f[:, -1] * piece_vals
        problem = DiscreteProblem(
            ens=ens,
            f_shifted=f_shifted,
            g_col=lambda i, exp_f=exp_f: gen.g / exp_f[:, i],
            sigma_steps=np.full(ens.n_steps, sig),
            terminal=terminal_j,
            xi_sup=float(np.abs(terminal_j).max()),
            threshold=thr_stage,
            beta=beta_bar,
            weights=weights,
        )
        try:
            bar_sol, trace = _solve_small_problem(problem, basis, stage_opts)
        except (SmallnessViolated, NoConvergence) as exc:
            exc.args = (f"stage {j + 1}/{m}: {exc.args[0]}",) + exc.args[1:]
            raise
        hat = untransform_solution(bar_sol, params)
        acc_y += hat.y
        acc_z += hat.z
        acc_zeta += hat.zeta
        traces.append(trace)
        stages.append(
            {
                "stage": j + 1,
                "ess": weights.effective_sample_size() if weights is not None else float(ens.n_paths),
                "xi_sup": problem.xi_sup,
                "iterations": trace.iterations,
            }
        )

    y = acc_y - G[None, :]
    y[:, -1] = terminal_values(ens, gen.terminal)
    sol = SolutionTriple(y=y, z=acc_z, zeta=acc_zeta)
    sol.info = {"m": m, "shift_terminal": float(G[-1]), "stages": stages, "traces": traces}
    base_problem = problem_from_generator(gen, ens, bounds=bounds)
    if opts.compute_residual:
        sol.residual = _projected_residual(base_problem, basis, y, acc_z, acc_zeta)
    if opts.track_norms:
        sol.norms = norms_mod.norm_report(
            y, acc_z, acc_zeta, ens, base_problem.sigma_steps, basis, quantile=opts.quantile
        )
    se = np.zeros(n1)
    for i in range(ens.n_steps):
        _, se_i = cond_expect(y[:, i + 1], i, ens, None, basis, return_se=True)
        se[i] = float(se_i.max())
    sol.y_se = se
    return sol


def solve(
    gen: GeneratorSpec,
    grid: GridSpec,
    basis: BasisSpec,
    opts: SolverOptions | None = None,
):
    """Top-level entry: simulate, run the chain, attach norms and the
    bounded-bracket certificate. Deterministic for a fixed seed/config."""
    opts = opts or SolverOptions()
    ens = generate(grid)
    sol = solve_chain(gen, ens, basis, opts)
    from .analysis import certificate_for_solution

    sol.info["certificate"] = certificate_for_solution(gen, sol, grid.T)
    return sol, sol.info.get("traces", [])
