"""Approximation of elliptic divergence-form solutions on the truncated slab."""

from .solvers import (
    EllipticCoefficients,
    FdSolution,
    Poisson2dSolution,
    PoissonSolution,
    solve_fd,
    solve_poisson,
)
from .lattice import RangeMax, SampleSet
from .families import (
    SkipStoppingFamily,
    UncoveredReport,
    build_family_oracle,
    build_oscillation,
    build_principal,
    build_skip_family,
    build_stopping,
    carleson_packing,
    carleson_packing_direct,
    uncovered_filter,
)
from .envelopes import (
    LipschitzEnvelope,
    envelope_psi1,
    envelope_psi2,
    envelope_psi_star,
    envelope_psi_star_star,
    feature_box_disjoint,
    feature_dominates,
    feature_height_on_uncovered,
    feature_regions_inside,
)
from .approximant import (
    EllipticApproximation,
    PipelineReport,
    approximation_report,
    build_phi1,
    build_phi2,
    ns_probe,
    phi1_box_gradient,
    run_pipeline,
    sawtooth_surface_area,
    sn_probe,
)

__all__ = [name for name in dir() if not name.startswith("_")]
