from .ablation import AblationRow, ToyEval, feature_metrics, planted_recovery_error, run_alpha_ablation
from .metrics import (
    FeatureCosineSimilarity,
    PlantedVAPredictor,
    VAError,
    continuity_score,
    euclidean,
    va_error,
)
from .report import ItemRecord, MetricReport, render_table
from .stats import SignificanceReport, kendall_tau_b, significance_tests

__all__ = [
    "AblationRow", "ToyEval", "feature_metrics", "planted_recovery_error", "run_alpha_ablation",
    "FeatureCosineSimilarity", "PlantedVAPredictor", "VAError", "continuity_score", "euclidean", "va_error",
    "ItemRecord", "MetricReport", "render_table",
    "SignificanceReport", "kendall_tau_b", "significance_tests",
]
