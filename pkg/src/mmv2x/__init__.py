"""Performance model for cache-enabled mmWave vehicle-to-everything
networks: closed-form coverage/connectivity/throughput expressions over a
four-tier Poisson field, cross-validated by a drop-based Monte Carlo
simulator, plus a sweep CLI.
"""

from .config import (
    ALL_TIERS,
    BS_TIERS,
    VUE_TIERS,
    ConfigError,
    NumericsPolicy,
    SystemConfig,
    TierKind,
    ValidatedConfig,
    load_config,
    tier_params,
    validate,
    with_params,
)
from .association import (
    AssociationState,
    CaseKind,
    association_probability,
    cache_hit_probability,
    case_probabilities,
    nth_distance_cdf,
    nth_distance_pdf,
    omega,
    serving_distance_pdf,
)
from .coverage import (
    laplace_interference,
    load,
    rate_coverage,
    sinr_coverage_case,
    sinr_coverage_tier,
    total_rate_coverage,
    total_sinr_coverage,
    w_integral,
)
from .mobility import (
    angle_pdfs,
    connectivity,
    connectivity_case,
    sojourn_v2i,
    sojourn_v2v,
    total_connectivity,
)
from .performance import (
    average_connection_time,
    average_rate,
    delay,
    max_traverse_distance,
    performance_summary,
    throughput,
)
from .montecarlo import DropBatch, DropRecord, run_drop, run_drops

__version__ = "0.1.0"
