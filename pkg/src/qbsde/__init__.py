"""Monte Carlo solver for one-dimensional BSDEs with quadratic growth.

Pipeline: define the problem (model), simulate paths (paths), estimate
conditional expectations (regress), iterate the fixed-point map with
splitting and measure changes (solver), measure norms (norms), and check
against closed-form references and a-priori bounds (analysis).
"""
from .errors import (
    ConfigError,
    DegenerateBounds,
    DominanceViolated,
    GeneratorEvaluationError,
    NoConvergence,
    QbsdeError,
    RankDeficient,
    ResourceLimit,
    SmallnessViolated,
    StageCapExceeded,
    UnboundedGenerator,
    WeightDegeneracy,
)
from .model import (
    CoefficientBounds,
    GeneratorSpec,
    GridSpec,
    TerminalCondition,
    ball_inequality_holds,
    ball_radius,
    derive_bounds,
    smallness_threshold,
)
from .paths import (
    GirsanovWeights,
    PathEnsemble,
    dump_ensemble,
    generate,
    girsanov_weights,
    load_ensemble,
    terminal_values,
    unit_weights,
)
from .regress import BasisSpec, cond_expect, design_matrix, extract_z, extract_zeta
from .norms import NormReport, bmo_norm, combined_bmo_norm, ess_sup, h2_norm, norm_report
from .solver import (
    ConvergenceTrace,
    DiscreteProblem,
    SolutionTriple,
    SolverOptions,
    TransformParams,
    apply_F,
    make_transform_params,
    solve,
    solve_chain,
    solve_small,
    split_terminal,
    transform_generator,
    untransform_solution,
)
from .analysis import (
    BmoBoundInputs,
    ComparisonReport,
    bmo_certificate,
    check_comparison,
    derive_bmo_inputs,
    oracle_cole_hopf,
    oracle_linear,
    oracle_orthogonal,
)

__version__ = "0.1.0"
