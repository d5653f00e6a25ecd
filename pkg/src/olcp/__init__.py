"""Online localized conformal prediction with constrained bandwidth aggregation."""

__version__ = "0.1.0"

from .hedge import AdaHedge, ConstrainedHedge, OLCPHedge, feasibility_diagnostic, hedge_parameters
from .localization import CalibrationWindow, local_weights, localized_distribution, silverman_bandwidth, standardize
from .online import ACI, LCP, OLCP, AciState, BoundaryLedger, DtACI, SplitCP, StepRecord, aci_level_update, default_gamma
from .quantiles import WeightedScoreDistribution, corrected_rank, lower_quantile, pinball_loss, split_conformal_radius

__all__ = [
    "ACI", "LCP", "OLCP", "DtACI", "SplitCP", "OLCPHedge",
    "AdaHedge", "ConstrainedHedge", "AciState", "BoundaryLedger", "CalibrationWindow", "StepRecord",
    "WeightedScoreDistribution", "aci_level_update", "corrected_rank", "default_gamma",
    "feasibility_diagnostic", "hedge_parameters", "local_weights", "localized_distribution",
    "lower_quantile", "pinball_loss", "silverman_bandwidth", "split_conformal_radius", "standardize",
]
