"""Continuous binary Darboux transformation of the KdV equation.

The package builds Schwartzian-type perturbations of a background potential
from a signed spectral measure on the positive half-line: discretize the
measure, assemble the associated Fredholm kernel from Jost solutions of the
background, solve the resulting symmetric linear system, and read off the
transformed potential and its Jost solutions.

Modules
-------
measure     signed spectral measures, discretization, admissibility
background  reference backgrounds and closed-form soliton references
fredholm    kernel assembly, symmetric factorizations, log-determinants
transform   the transformation itself: apply / invert / evaluate
verify      PDE residuals, convergence studies, analytic cross-checks
cli         command-line entry point
"""
from __future__ import annotations

from . import background, cli, fredholm, measure, transform, verify
from .errors import (
    DarbouxError,
    EvolutionOverflowError,
    InadmissibleMeasureError,
    MixedSignWeightsError,
    NearSingularWarning,
    NonPositiveDeterminantError,
    SingularSystemError,
)

__all__ = [
    "measure",
    "background",
    "fredholm",
    "transform",
    "verify",
    "cli",
    "DarbouxError",
    "EvolutionOverflowError",
    "InadmissibleMeasureError",
    "MixedSignWeightsError",
    "NearSingularWarning",
    "NonPositiveDeterminantError",
    "SingularSystemError",
]

__version__ = "0.1.0"
