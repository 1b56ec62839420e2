"""Combat micromanagement RL with scenario-independent influence-map states.

A fixed-size actor-critic policy is trained on one grid-combat scenario and
reused, directly or through a curriculum, on scenarios with different team
sizes and unit types. The state encoding (local influence grid, shared
global grid, prior-step stacking) keeps the policy input length constant
across scenarios, which is what makes the transfer possible.
"""

from .checkpoint import (EncodingSchema, FORMAT_VERSION, PolicyCheckpoint,
                         ProvenanceEntry, load_checkpoint, save_checkpoint)
from .engine import (ALLY, ENEMY, Action, DamageEvent, Episode,
                     LocalObservation, N_ACTIONS, Scenario, StepOutcome,
                     UnitState, UnitTypeSpec, builtin_scenario,
                     compute_episode_reward, compute_r_max, load_scenario,
                     load_scenario_file, reset, resolve_attack_closest,
                     scripted_opponent, step)
from .errors import (CheckpointError, ContractError, ImarlError,
                     IntegrityError, NumericError, ScenarioError, StateError,
                     TransferIncompatibilityError, UnsupportedVersionError)
from .influence import (EncodedState, GLOBAL_SIDE, InfluenceGrid,
                        InfluenceParams, LAYOUT_VERSION, LOCAL_RESOLUTIONS,
                        NormalizationDiagnostics, assemble_state,
                        build_global_influence_map, build_local_influence_map,
                        build_unit_influence, encoded_state_length,
                        normalize_feature, self_feature_vector)
from .network import (GradientSet, NetworkParams, backward, elu, forward,
                      forward_cached, gradient_check, init_params, sgd_update,
                      softmax)
from .training import (AgentRollout, EpsilonSchedule, RunConfig, RunResult,
                       Trajectory, a2c_gradients, a2c_losses, collect_episode,
                       discounted_returns, epsilon_at, select_action,
                       train_run)
from .transfer import (CurriculumOutcome, RunStats, TransferOutcome,
                       aggregate_stats, run_curriculum, run_transfer,
                       running_average, select_seed)

__version__ = "0.1.0"
