"""Latent-class joint modeling of paired longitudinal endpoints with
grid-based credible-region anomaly screening.

The computational kernels (compound-symmetry log densities and cell-mass
accumulation) have a compiled backend and a pure-NumPy fallback; the import
machinery picks the compiled one when available.  Set the environment
variable ``LCSCREEN_PURE_PYTHON=1`` to force the fallback.
"""

from ._kernels import BACKEND
from .core_types import (Dataset, EndpointHypers, IngestError, ModelConfig,
                         SubjectRecord, ValidationError, ingest_dataset,
                         validate_dataset, write_dataset_csv)
from .predictive import (CellField, GridSpec, PredictionRequest,
                         case1_log_joint, case2_log_conditional, cell_field,
                         region_probability)
from .region import CredibleRegion, branch_region, contains, hdr_region
from .sampler import (DrawStore, McmcConfig, NumericError, fit,
                      load_drawstore, save_drawstore)
from .screening import (MetricsSummary, ScreeningResult,
                        dahl_best_configuration, evaluate_cohort,
                        screen_subject)
from .simgen import default_sim_scheme, simulate_study, split_train_test

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "__version__",
    "Dataset",
    "EndpointHypers",
    "IngestError",
    "ModelConfig",
    "SubjectRecord",
    "ValidationError",
    "ingest_dataset",
    "validate_dataset",
    "write_dataset_csv",
    "CellField",
    "GridSpec",
    "PredictionRequest",
    "case1_log_joint",
    "case2_log_conditional",
    "cell_field",
    "region_probability",
    "CredibleRegion",
    "branch_region",
    "contains",
    "hdr_region",
    "DrawStore",
    "McmcConfig",
    "NumericError",
    "fit",
    "load_drawstore",
    "save_drawstore",
    "MetricsSummary",
    "ScreeningResult",
    "dahl_best_configuration",
    "evaluate_cohort",
    "screen_subject",
    "default_sim_scheme",
    "simulate_study",
    "split_train_test",
]
