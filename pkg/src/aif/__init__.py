"""Active-inference toolkit for continuous control.

An agent learns a latent world model of a noisy mountain-car environment by
minimizing variational free energy, encodes goals as preferred-state priors
(from demonstrations, sparse rewards, or neither), and acts either by
planning over imagined rollouts scored with expected free energy or through
an amortized habit policy trained by backpropagating that score.
"""

from .autodiff import Tape, Var
from .config import (EnvConfig, EvalConfig, ModelConfig, PlannerConfig,
                     PolicyConfig, PriorConfig, RunConfig, TrainConfig)
from .errors import (ContractError, DependencyError, ExpertFailedError,
                     FormatError, InsufficientRewardDataError)
from .gaussian import (VARIANCE_FLOOR, DiagonalGaussian, PolicyBelief, entropy,
                       kl_divergence, log_prob, policy_softmax, reparam_sample)
from .habit import (HabitPolicy, PolicyEvalResult, evaluate_policy, load_policy,
                    policy_action, policy_g_loss, run_policy_episode,
                    save_policy, train_policy)
from .mountain_car import (CarState, MountainCar, Step, Trajectory,
                           expert_source, load_trajectories,
                           random_agent_action, random_agent_source,
                           run_episode, save_trajectories,
                           scripted_expert_action)
from .networks import GaussianMLP
from .optim import Adam, grad_check
from .planning import (PlanDiagnostics, act_in_env, diagnostics_csv,
                       expected_free_energy, plan, policy_belief,
                       sample_action_sequences)
from .preferences import (PreferredPrior, flat_prior, load_prior,
                          prior_from_demos, prior_from_reward, save_prior)
from .world_model import (ImaginedRollout, ModelSet, TrainingBatch,
                          TrainingReport, encode_episode, free_energy_graph,
                          free_energy_loss, imagine_batch, imagine_rollout,
                          likelihood_decode,
                          load_model_set, open_loop_prediction_error,
                          open_loop_predictions, open_loop_rms,
                          posterior_infer, save_model_set, train_models,
                          transition_predict)

__version__ = "0.1.0"
