"""Finite-dimensional regularity laboratory: catalog sets, cones, calmness,
metric regularity, qualification conditions and multipliers."""
from . import cones, sets
from .lab import (ConstraintSystem, FeasibleDistance, LabReport, check_calmness_transfer,
                  check_metric_regularity, check_product_cone, check_qualification,
                  compute_multiplier, estimate_calmness, lower_dini, make_rng,
                  truncated_distance)
from .sets import (Affine, Arc, Ball, Box, CatalogSet, Line, Product, Sphere, Union,
                   WholeSpace, contingent_cone, distance, intersect_curves)

__all__ = [
    "cones", "sets", "ConstraintSystem", "FeasibleDistance", "LabReport",
    "check_calmness_transfer", "check_metric_regularity", "check_product_cone",
    "check_qualification", "compute_multiplier", "estimate_calmness", "lower_dini",
    "make_rng", "truncated_distance", "Affine", "Arc", "Ball", "Box", "CatalogSet", "Line",
    "Product", "Sphere", "Union", "WholeSpace", "contingent_cone", "distance",
    "intersect_curves",
]
