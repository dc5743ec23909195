"""Resource allocation for semantically compressed multi-user downlinks.

Maximizes the sum of effective delivered rates in a rate-splitting
downlink by jointly choosing beamformers, the common-rate split, and
per-user compression ratios under one transmit+computation power budget.
"""

from .comp_load import CompLoadSpec, default_spec, load_of, midpoints, power_of, segment_of, validate_spec
from .errors import ConfigError, InfeasibleProblem, NumericalFailure, SemoptError, ValidationError
from .orchestrator import OuterOptions, OuterResult, alternate, run_nonsemantic_baseline, run_scheme, run_sdma_baseline
from .ratio_opt import SegmentAssignment, brute_force_oracle, greedy_ratios, init_ratios, remaining_power, select_segments
from .rsma_rates import (Allocation, RateReport, check_feasibility, common_rate, common_rates,
                         min_common_rate, power_usage, private_rate, private_rates, rate_report,
                         semantic_rates)
from .sca_beamforming import ScaOptions, ScaResult, SubproblemState, build_subproblem, init_point, sca_iterate
from .scenario import (ExperimentSpec, Scenario, apply_sweep_value, dbm_to_watts,
                       generate_channels, load_config, validate_scenario, watts_to_dbm)

__version__ = "0.1.0"
