"""Limit-order-book liquidity resilience toolkit.

Reconstructs books from event streams, samples liquidity measures (inside
spread, cost-of-round-trip), extracts threshold exceedance durations, fits
duration regressions whose predictions form liquidity resilience profiles,
smooths the profiles into functional data, and analyses cross-asset
commonality with PCA/ICA factors, functional PCA and concurrent functional
regression.
"""

from .commonality import (CrossSection, FactorRegression, FactorSet,
                          factor_regression, ica_factors, pca_factors)
from .errors import LiqresError, LiqresWarning
from .fda import (BsplineBasis, FunctionalCurve, GcvResult, eval_basis, gcv,
                  gram_matrix, penalty_matrix, smooth_lrp, smooth_values)
from .fpca import ConcurrentFit, FpcaResult, concurrent_regress, loo_r2
from .liquidity import MeasureSpec, CovariateVector, spread, xlm
from .lob import (BookState, LiquiditySeries, OrderBook, OrderEvent,
                  read_events, replay, sample_series, write_events)
from .pipeline import PipelineConfig, config_from_toml, run_pipeline
from .synth import SynthSpec, generate_panel
from .ted import (LrpPoints, SurvivalFit, TedRecord, decile_thresholds,
                  extract_teds, fit_lognormal_aft, lrp_points)

__version__ = "0.1.0"

__all__ = [
    "BookState", "BsplineBasis", "ConcurrentFit", "CovariateVector",
    "CrossSection", "FactorRegression", "FactorSet", "FpcaResult",
    "FunctionalCurve", "GcvResult", "LiquiditySeries", "LiqresError",
    "LiqresWarning", "LrpPoints", "MeasureSpec", "OrderBook", "OrderEvent",
    "PipelineConfig", "SurvivalFit", "SynthSpec", "TedRecord",
    "concurrent_regress", "config_from_toml", "decile_thresholds",
    "eval_basis", "extract_teds", "factor_regression", "fit_lognormal_aft",
    "gcv", "generate_panel", "gram_matrix", "ica_factors", "loo_r2",
    "lrp_points", "pca_factors", "penalty_matrix", "read_events", "replay",
    "run_pipeline", "sample_series", "smooth_lrp", "smooth_values",
    "spread", "write_events", "xlm",
]
