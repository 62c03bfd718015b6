"""Policy gradient training with kernel-quadrature episode compression.

Each iteration generates a large reward-free batch of episodes, compresses
it to a small weighted subset under a GP-derived episode kernel, evaluates
rewards only on that subset, and updates the policy with quadrature-weighted
losses. See README.md for the CLI and the acceptance checks.
"""
from .episodes import (Environment, Episode, RewardMeter, StateActionPair,
                       attach_returns, discounted_returns, dump_episodes,
                       evaluate_rewards, make_env, rollout, rollout_batch)
from .errors import ConfigError, ContractError, NumericsError
from .gp import (DeepKernelParams, EpisodicKernel, GPModel, base_kernel,
                 episodic_kernel_returns, episodic_kernel_rewards,
                 fake_returns, init_gp, kernel_loss, mean_loss, update_gp)
from .harness import (CSV_HEADER, ExperimentConfig, probe_reward,
                      run_experiment, run_seed, summarize)
from .losses import (centered_quadrature_loss, noncentered_quadrature_loss,
                     ppo_loss, vpg_loss)
from .nets import AdamState, MlpParams, adam_step, init_mlp, load_mlp, \
    mlp_backward, mlp_forward, save_mlp
from .policy import (Baseline, GaussianPolicy, advantages, baseline_values,
                     init_baseline, init_policy, logprob, logprob_batch)
from .quadrature import (QuadratureRule, build_gram, gp_sample_error,
                         herding_baseline, kquad, nystrom_features, recombine,
                         rule_from_gram, wce_squared, write_rule)
from .training import (AlgoVariant, IterationRecord, TrainParams, TrainState,
                       init_train_state, parse_algo, train_iteration)

__version__ = "0.1.0"
