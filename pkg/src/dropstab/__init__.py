"""Mean-square stabilizability of linear plants over lossy input channels.

The package decides whether a discrete-time MIMO plant can be stabilized in
mean square when each actuator command crosses an independent Bernoulli
packet-drop link, maps the admissible dropout-probability region, builds the
optimal stabilizing controller for a certified operating point, and checks
the verdict two independent ways (exact second-moment propagation and
Monte-Carlo simulation).  The ``dropstab`` console script exposes the same
pipeline on files.
"""

from .factorization import (
    AssumptionViolation,
    DoublyCoprime,
    bezout,
    coprime_factorize,
    diagonal_inner,
    enumerate_wonham_forms,
    gamma_scale,
    inner_outer,
    observer_gain,
    validate_assumption,
    wonham_decompose,
    wonham_gain,
)
from .stabilizability import (
    ChannelSpec,
    GammaScaling,
    MpSupremum,
    RectangleSet,
    StabilizabilityReport,
    closed_loop_map,
    controller,
    max_blocking_probability,
    membership,
    mp_supremum,
    ms_radius,
    optimize_scaled_radius,
    phi_diag_entry,
    rectangle_set,
    rectangle_vertex,
    scaled_radius_bound,
    siso_closed_form,
    sweep_bounds,
    synthesize_Q,
    t_hat,
    union_membership,
)
from .statespace import (
    StateSpaceModel,
    TransferMatrix,
    balanced_truncate,
    cascade,
    evaluate,
    evaluate_tf,
    h2_norm_sq,
    minimal,
    poles,
    realize,
    scale_io,
    stable_part,
)
from .verification import (
    StochasticClosedLoop,
    assemble,
    exact_moment_trace,
    monte_carlo_trace,
    second_moment_radius,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation",
    "ChannelSpec",
    "DoublyCoprime",
    "GammaScaling",
    "MpSupremum",
    "RectangleSet",
    "StabilizabilityReport",
    "StateSpaceModel",
    "StochasticClosedLoop",
    "TransferMatrix",
    "assemble",
    "balanced_truncate",
    "bezout",
    "cascade",
    "closed_loop_map",
    "controller",
    "coprime_factorize",
    "diagonal_inner",
    "enumerate_wonham_forms",
    "evaluate",
    "evaluate_tf",
    "exact_moment_trace",
    "gamma_scale",
    "h2_norm_sq",
    "inner_outer",
    "max_blocking_probability",
    "membership",
    "minimal",
    "monte_carlo_trace",
    "mp_supremum",
    "ms_radius",
    "observer_gain",
    "optimize_scaled_radius",
    "phi_diag_entry",
    "poles",
    "realize",
    "scale_io",
    "rectangle_set",
    "rectangle_vertex",
    "scaled_radius_bound",
    "second_moment_radius",
    "siso_closed_form",
    "stable_part",
    "sweep_bounds",
    "synthesize_Q",
    "t_hat",
    "union_membership",
    "validate_assumption",
    "wonham_decompose",
    "wonham_gain",
]
