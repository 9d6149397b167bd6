"""Two-stage marginal screening and pairwise interaction scans."""

from .backend import BACKEND
from .cox import RiskSetOrder, SurvivalData, cox_partial_loglik, cox_wald_test, fit_cox
from .errors import (
    AlignmentError,
    ConfigError,
    DegenerateVariance,
    InvalidInput,
    InvalidRange,
    InvalidResponse,
    NoEvents,
    NoInformation,
    ParseError,
    SingularDesign,
    SingularInformation,
    TwoStageError,
)
from .glm import ConvergenceControl, Family, FitResult, WaldTest, fit_glm, wald_test
from .scan import (
    Binary,
    Continuous,
    Counts,
    GenotypeMatrix,
    QualityConfig,
    ScanConfig,
    ScanReport,
    ScreenResult,
    Survival,
    exhaustive_scan,
    quality_check,
    run_two_stage,
    stage_one_screen,
    stage_two_scan,
)
from .simulate import (
    PhenotypeSpec,
    RngSpec,
    make_rng,
    simulate_genotypes_correlated,
    simulate_genotypes_independent,
    simulate_phenotype,
)

__version__ = "0.1.0"
