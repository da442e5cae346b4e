"""Two-step forward-simulation estimation of dynamic discrete choice models.

Pipeline: solve the model once as a data-generating oracle, simulate a
panel, estimate choice and transition probabilities nonparametrically,
pre-simulate forward path sets, then recover the structural utility
parameters by minimum-distance search over one of four interchangeable
value engines.
"""
from .models import (EULER_GAMMA, FoodChoiceModel, MachineReplacementModel,
                     ModelSpec, Theta, ValueTable, build_model,
                     ccp_from_values, draw_recipe_attributes,
                     load_model_config, model_config_hash, softmax_rows)
from .dp import (FixedPointConfig, FixedPointError, ccps_from_fixed_point,
                 solve_fixed_point)
from .panel import Panel, generate_panel
from .first_stage import (DEFAULT_FLOOR, CoverageError, FirstStage,
                          estimate_ccps, estimate_first_stage,
                          estimate_transitions)
from .paths import (PathFormatError, PathSet, binary_size, export_paths_csv,
                    read_paths, simulate_paths, write_paths)
from .engines import (ENGINE_KINDS, EngineConfig, UpdateCounter, ccs_values,
                      reward_term, rlmc_values, rltd_values, run_engine)
from .estimator import (EstimationReport, MdeConfig, PredictedCcps,
                        ReplicationSummary, estimate, objective,
                        predicted_ccps, replicate)

__version__ = "0.1.0"
