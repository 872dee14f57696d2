"""Learning-curve analytics engine.

Fits a mixed-effects logistic regression (per-student random intercept
and slope on the practice-opportunity count) to interaction logs and
derives distribution, mastery, curve, and factor-ablation reports.
"""

from . import analytics, glmm, ingest, models, synth, types
from .glmm import FitOptions, FitResult, fit, predict_prob
from .ingest import (
    Dataset,
    DatasetSummary,
    apply_filters,
    assign_opportunity_counts,
    dataset_summary,
    parse_interactions,
)
from .models import ModelSpec, ablation_grid, base_model
from .synth import GenParams, default_paper_params, generate
from .types import (
    ExerciseType,
    FactorLevels,
    FilterConfig,
    InteractionRecord,
    KcType,
    OpportunityRow,
    validate_record,
)

__version__ = "0.1.0"
