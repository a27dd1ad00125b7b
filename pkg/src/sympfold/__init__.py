"""Explicit symplectic displacement and folding of small sets.

Rectifiable and Cantor-type sets, Hausdorff-measure heuristics, generic
linear displacement, and the folding construction that squeezes sets of
small dimension into thin products of rectangles, each step certified on
sample clouds.
"""
from .cutoff import CutoffProfile, SlopeProfile
from .displacement import (Certificate, DisplacementProblem, DisplacementResult, HoferBound,
                           displace_certify, displacement_image, find_generic_direction,
                           hofer_norm_bound, translation_flow)
from .errors import (BadAreas, BadDimension, CertificationFailed, DomainViolation,
                     EmbeddingCertificationFailed, EmptySet, InsufficientScales, IntegrationFailure,
                     MaskRejectionExhausted, NoAdmissibleTime, NoDirectionFound, PairBudgetExceeded,
                     ScaleTooSmall, SerializationError, SympfoldError)
from .estimators import BoxCountingDimension, FoldingSqueezer, LinearDisplacer
from .folding import (FoldConfig, FoldParameters, FoldProblem, FoldReport, SqueezeConfig,
                      SqueezeReport, build_v_delta, fold_once, normalize, squeeze,
                      theta_embedding)
from .hausdorff import (Covering, DimensionEstimate, NegligibilityReport, ProductMetricSpec,
                        box_dimension, cover_upper_bound, lebesgue_estimate,
                        negligibility_decay_test, product_negligibility_test)
from .sets import (LipschitzChart, RectifiableSet, SampleCloud, cantor_dust, circle, dust_curve,
                   empty_set, filled_box, image, load_set, point_set, polyline, product, segment,
                   set_from_dict, union, unit_square_boundary)
from .sympmap import (Affine, AffineSymplectic, CheckReport, Compose, CutoffLinearHamiltonian,
                      FactorPermute, FiberStretch, HamFlow, Identity, LinearHamiltonian, MapExpr,
                      PiecewiseGlue, Product2D, QPHamiltonian, Rescaled, Shear, check_injective,
                      check_symplectic, glue_check, omega, standard_J)

__version__ = "0.1.0"

__all__ = [
    "Affine",
    "AffineSymplectic",
    "BadAreas",
    "BadDimension",
    "BoxCountingDimension",
    "Certificate",
    "CertificationFailed",
    "CheckReport",
    "Compose",
    "Covering",
    "CutoffLinearHamiltonian",
    "CutoffProfile",
    "DimensionEstimate",
    "DisplacementProblem",
    "DisplacementResult",
    "DomainViolation",
    "EmbeddingCertificationFailed",
    "EmptySet",
    "FactorPermute",
    "FiberStretch",
    "FoldConfig",
    "FoldParameters",
    "FoldProblem",
    "FoldReport",
    "FoldingSqueezer",
    "HamFlow",
    "HoferBound",
    "Identity",
    "InsufficientScales",
    "IntegrationFailure",
    "LinearDisplacer",
    "LinearHamiltonian",
    "LipschitzChart",
    "MapExpr",
    "MaskRejectionExhausted",
    "NegligibilityReport",
    "NoAdmissibleTime",
    "NoDirectionFound",
    "PairBudgetExceeded",
    "PiecewiseGlue",
    "Product2D",
    "ProductMetricSpec",
    "QPHamiltonian",
    "RectifiableSet",
    "Rescaled",
    "SampleCloud",
    "ScaleTooSmall",
    "SerializationError",
    "Shear",
    "SlopeProfile",
    "SqueezeConfig",
    "SqueezeReport",
    "SympfoldError",
    "box_dimension",
    "build_v_delta",
    "cantor_dust",
    "check_injective",
    "check_symplectic",
    "circle",
    "cover_upper_bound",
    "displace_certify",
    "displacement_image",
    "dust_curve",
    "empty_set",
    "filled_box",
    "find_generic_direction",
    "fold_once",
    "glue_check",
    "hofer_norm_bound",
    "image",
    "lebesgue_estimate",
    "load_set",
    "negligibility_decay_test",
    "normalize",
    "omega",
    "point_set",
    "polyline",
    "product",
    "product_negligibility_test",
    "segment",
    "set_from_dict",
    "squeeze",
    "standard_J",
    "theta_embedding",
    "translation_flow",
    "union",
    "unit_square_boundary",
]
