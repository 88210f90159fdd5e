"""Restricted mean survival time difference curves from jackknife pseudo-values.

The main entry points are :func:`fit_rmst_model` for the pseudo-value GEE fit,
:func:`diff_curve` and :func:`simultaneous_band` for inference on the RMST
difference curve, and :func:`tute_ci_band` / :func:`tute_ci_bootstrap` for the
time until treatment equipoise.
"""

__version__ = "0.1.0"

from .errors import (ConvergenceError, ExtrapolationError, InputError, NumericalError,
                     RankDeficientError, RmstError)
from .survival import SurvivalSample, km_fit, read_csv, rmst, rmst_diff_plugin
from .pseudo import RestrictionGrid, pseudo_values, select_grid
from .basis import build_design, natural_spline_basis
from .gee import gee_fit, qic, select_df
from .model import RmstModel, fit_rmst_model
from .inference import RmstDiffCurve, diff_curve, open_grid, simultaneous_band
from .tute import TuteEstimate, tute_ci_band, tute_ci_bootstrap, tute_point

__all__ = [
    "ConvergenceError", "ExtrapolationError", "InputError", "NumericalError",
    "RankDeficientError", "RmstError", "SurvivalSample", "km_fit", "read_csv", "rmst",
    "rmst_diff_plugin", "RestrictionGrid", "pseudo_values", "select_grid", "build_design",
    "natural_spline_basis", "gee_fit", "qic", "select_df", "RmstModel", "fit_rmst_model",
    "RmstDiffCurve", "diff_curve", "open_grid", "simultaneous_band", "TuteEstimate",
    "tute_ci_band", "tute_ci_bootstrap", "tute_point",
]
