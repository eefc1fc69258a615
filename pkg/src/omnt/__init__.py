"""Orbit recovery over compact groups by the method of moments.

Invariant feature construction, unbiased moment estimation, algebraic
recoverability tests (Jacobian and Hessian), and provable solvers (Jennrich
decomposition, frequency marching).
"""

from .problem import (ProblemSpec, Signal, SampleSet, GroupElement, mra_spec,
                      cryo_spec, random_signal, haar_sample, act, project,
                      simulate, restrict_symmetric)
from .invariants import (InvariantBasis, InvariantPolynomial, MomentTensor,
                         HilbertSeries, invariant_basis, reynolds,
                         exact_moment, evaluate_basis, molien_series_finite,
                         so3_invariant_dim, trdeg_ring, count_het_mra,
                         count_cryo)
from .algebra_tests import RankReport, HessianReport, jacobian_rank, \
    transcendence_basis, hessian_test
from .estimation import NoiseModel, MomentEstimate, hermite_polys, \
    raw_moment_estimate, estimate_moments
from .recovery import RecoveryResult, orbit_distance, jennrich_recover, \
    unproject_degree2, frequency_march, lsq_recover, demix_then_recover

__version__ = "0.1.0"

__all__ = [
    "ProblemSpec", "Signal", "SampleSet", "GroupElement", "mra_spec",
    "cryo_spec", "random_signal", "haar_sample", "act", "project", "simulate",
    "restrict_symmetric", "InvariantBasis", "InvariantPolynomial",
    "MomentTensor", "HilbertSeries", "invariant_basis", "reynolds",
    "exact_moment", "evaluate_basis", "molien_series_finite",
    "so3_invariant_dim", "trdeg_ring", "count_het_mra", "count_cryo",
    "RankReport", "HessianReport", "jacobian_rank", "transcendence_basis",
    "hessian_test", "NoiseModel", "MomentEstimate", "hermite_polys",
    "raw_moment_estimate", "estimate_moments", "RecoveryResult",
    "orbit_distance", "jennrich_recover", "unproject_degree2",
    "frequency_march", "lsq_recover", "demix_then_recover",
]
