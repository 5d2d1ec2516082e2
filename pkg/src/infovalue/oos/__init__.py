"""Penalized return regressions, the expanding-window protocol, and forecast evaluation."""

from .metrics import DmResult, dm_test, dm_test_grouped, dm_test_records, dm_vs_zero, r2_oos, r2_oos_arrays, r2_oos_by_year
from .ols import CollinearityError, OlsResult, fit_ols_clustered
from .pls import PlsModel, fit_pls
from .ridge import DEFAULT_PENALTY_GRID, RidgeModel, fit_ridge, select_penalty
from .window import FeatureSet, PredictionRecord, WindowPlan, build_features, run_expanding_window

__all__ = [
    "DEFAULT_PENALTY_GRID",
    "RidgeModel",
    "fit_ridge",
    "select_penalty",
    "PlsModel",
    "fit_pls",
    "WindowPlan",
    "PredictionRecord",
    "FeatureSet",
    "build_features",
    "run_expanding_window",
    "r2_oos",
    "r2_oos_arrays",
    "r2_oos_by_year",
    "DmResult",
    "dm_test",
    "dm_test_grouped",
    "dm_test_records",
    "dm_vs_zero",
    "OlsResult",
    "CollinearityError",
    "fit_ols_clustered",
]
