"""Fixed-point diffusion matching for sampling from unnormalized densities.

The package trains a drift u(x, t) so that the forward SDE

    dX_t = sigma(t) u(X_t, t) dt + sigma(t) dB_t,  X_0 ~ p_prior

transports the prior to a target known only through log rho. Training
iterates a damped regression fixed point: simulate under the current
drift, couple endpoints, regress the conditional drift formula on bridge
states. Everything is NumPy, double precision, single process.
"""

from .couplings import (AsReverseConditional, BmsIndependent, FixedFunction,
                        FixedGamma, GeneralAnalytic, Learned, SbJoint,
                        cv_coefficients, independent_joint_scores,
                        optimal_scalar_cv, reference_marginal_T, xi_alternative,
                        xi_as, xi_bms, xi_general, xi_sb)
from .errors import (ConfigError, DataQualityError, DegenerateVariateError,
                     DegenerateWeightsError, DivergenceError, DomainError,
                     DriftmatchError, PoisonedStateError, SingularTimeError,
                     UnsupportedCouplingError)
from .evaluate import (ImportanceEstimate, MetricsReport, divergence_fd,
                       energy_w2, mode_tvd, path_log_weight,
                       pf_ode_log_likelihood, sliced_tvd, snis_estimate,
                       wasserstein2)
from .model import (DriftField, OptimizerState, PhiNet, fourier_embed,
                    load_checkpoint, optimizer_step, save_checkpoint)
from .oracle import (GaussianPair, gaussian_backward_drift,
                     gaussian_independent_joint_scores, gaussian_marginal,
                     gaussian_marginal_log_density, gaussian_marginal_score,
                     gaussian_optimal_drift, gaussian_sb_corrector,
                     gaussian_sb_coupled_sampler, gaussian_sb_joint_scores,
                     gaussian_sb_optimal_drift, gaussian_sb_system)
from .reference import (brownian_bridge_drift, log_density_bridge,
                        log_density_t_given_0, log_density_T_given_t,
                        sample_bridge, score_bridge, score_t_given_0,
                        score_T_given_t)
from .schedules import (Constant, EdmVE, Geometric, NoiseSchedule,
                        schedule_from_config)
from .targets import (DiracPrior, GaussianPrior, GmmTarget, TargetDensity,
                      dw4_energy, dw4_score, dw4_target, gaussian_target,
                      gmm_from_means, gmm_target, lj_energy, lj_score,
                      lj_target, mode_assignment, prior_from_config,
                      target_from_config)
from .trainer import (ReplayBuffer, RunLog, TrainConfig, Trajectory,
                      TrainerState, build_coupling, init_state, matching_loss,
                      outer_step, prepare_matching_batch, simulate_forward,
                      train, train_likelihood_heads)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
