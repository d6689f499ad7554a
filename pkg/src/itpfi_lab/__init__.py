"""Rigorous numerics for the ITPFI2 factors M_x parametrised by x in c0.

The package computes T-set partial sums, constructs elements of the T-set,
tests Araki-Woods equivalence, produces turbulence chain witnesses and
simulates the odometer with product measures.  Every number is an
enclosure ``mid +/- err`` from MPFR arithmetic.
"""

from .equivalence import (
    EquivalencePolicy,
    EquivalenceReport,
    aw_partial_sum,
    g_norm_sq,
    g_norm_sq_exact,
    orbit_bound_check,
)
from .exceptions import (
    BlockOverflow,
    LengthMismatch,
    OverflowOnOrbit,
    PrecisionExhausted,
    PreconditionError,
    TargetOutsideU,
    WindowTooSmall,
)
from .model import (
    EigenvalueBlock,
    GEntry,
    GVector,
    ParamSequence,
    PerturbedEntry,
    ShiftedEntry,
    eigenvalue_blocks,
    lambda_value,
    l_value,
    type_iii_evidence,
)
from .odometer import (
    BitWord,
    ProductMeasure,
    cylinder_mass,
    eigenvalues_to_measure,
    odometer_step,
    rn_cocycle,
)
from .precision import (
    E,
    LN2,
    PI,
    TWO_PI_OVER_LN2,
    Angle,
    LazyReal,
    PrecReal,
    as_real,
    factorial_scaled_angle,
    log2_weight,
    signed_mod_2pi,
)
from .series import SeriesDiagnostics, Verdict
from .tset import (
    ConstructionTrace,
    DiagnosePolicy,
    Perturbation,
    construct_t,
    delta,
    perturb_for_divergence,
    tset_diagnose,
    tset_partial_sums,
)
from .turbulence import ChainWitness, SupBall, chain_witness, condition_star_n, dense_approximant

__version__ = "0.1.0"
