"""Two-dimensional spectral submanifolds of damped polynomial vector
fields, with exact conservative limits.

The package computes the invariant manifold attached to a lightly damped
mode pair of ``xdot = (eps*Delta + Omega) x + N_eps(x)`` as a
Fourier-Taylor expansion, corrects the truncation tail by a fixed-point
or collocation solve, and verifies invariance, conservation at the
conservative limit, and continuity in the damping parameter.
"""

__version__ = "0.1.0"

from .errors import SsmError
from .jets import EpsPoly, JetMode, NumericMode
from .series import FourierTaylor
from .model import (MonomialTerm, PolyVectorField, eval_field, load_model,
                    model_from_dict, normalize_model, series_compose)
from .spectral import (AssumptionReport, SpectralData, WStarProjector,
                       analyze, check_assumptions, make_wstar)
from .expansion import (ManifoldExpansion, eta_term, eval_expansion, eval_R,
                        eval_T, expand, growth_phase_check, to_cartesian)

__all__ = [
    "SsmError", "EpsPoly", "JetMode", "NumericMode", "FourierTaylor",
    "MonomialTerm", "PolyVectorField", "eval_field", "load_model",
    "model_from_dict", "normalize_model", "series_compose",
    "AssumptionReport", "SpectralData", "WStarProjector", "analyze",
    "check_assumptions", "make_wstar", "ManifoldExpansion", "eta_term",
    "eval_expansion", "eval_R", "eval_T", "expand", "growth_phase_check",
    "to_cartesian", "__version__",
]
