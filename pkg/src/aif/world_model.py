"""Latent world model: posterior, transition, and likelihood networks trained by
minimizing variational free energy on observed trajectories.

All three networks output diagonal Gaussians. The posterior conditions on the
previous latent state, the current action, and the current observation; the
transition conditions on the previous latent state and the current action; the
likelihood decodes a latent state into an observation distribution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .errors import ContractError
from .gaussian import DiagonalGaussian, kl_divergence, log_prob, reparam_sample
from .networks import GaussianMLP
from .mountain_car import Trajectory
from .optim import Adam


class ModelSet:
    """The three networks plus the dimensions they were built for."""

    def __init__(self, state_dim: int = 8, obs_dim: int = 1, action_dim: int = 1,
                 hidden: tuple[int, ...] = (64, 64), activation: str = "tanh",
                 seed: int = 0):
        self.state_dim = state_dim
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        post_seed, trans_seed, lik_seed = np.random.SeedSequence(seed).spawn(3)
        self.posterior = GaussianMLP(state_dim + action_dim + obs_dim, state_dim,
                                     hidden=hidden, activation=activation,
                                     rng=np.random.default_rng(post_seed))
        self.transition = GaussianMLP(state_dim + action_dim, state_dim,
                                      hidden=hidden, activation=activation,
                                      rng=np.random.default_rng(trans_seed))
        self.likelihood = GaussianMLP(state_dim, obs_dim,
                                      hidden=hidden, activation=activation,
                                      rng=np.random.default_rng(lik_seed))

    def parameters(self) -> list[Var]:
        return (self.posterior.parameters() + self.transition.parameters()
                + self.likelihood.parameters())

    @classmethod
    def from_config(cls, cfg: ModelConfig, seed: int = 0) -> "ModelSet":
        return cls(state_dim=cfg.state_dim, hidden=tuple(cfg.hidden),
                   activation=cfg.activation, seed=seed)


def _join(parts, batched: bool) -> object:
    """Concatenate state/action/observation inputs along the last axis.

    Plain-number and 1-d array parts are promoted to the layout of the batch;
    Var parts must already have the right shape.
    """
    out = []
    for p in parts:
        if isinstance(p, Var):
            out.append(p)
            continue
        arr = np.asarray(p, dtype=np.float64)
        if batched:
            if arr.ndim == 0:
                raise ContractError("scalar input in a batched call needs an explicit batch axis")
            if arr.ndim == 1:
                arr = arr[:, None]
        elif arr.ndim == 0:
            arr = arr[None]
        out.append(arr)
    return ad.concat(out, axis=-1)


def _is_batched(s_prev) -> bool:
    return ad.value_of(s_prev).ndim == 2


def posterior_infer(models: ModelSet, s_prev, action, observation,
                    tape: Tape | None = None, frozen: bool = False) -> DiagonalGaussian:
    x = _join([s_prev, action, observation], _is_batched(s_prev))
    return models.posterior.forward(x, tape=tape, frozen=frozen)


def transition_predict(models: ModelSet, s_prev, action,
                       tape: Tape | None = None, frozen: bool = False) -> DiagonalGaussian:
    x = _join([s_prev, action], _is_batched(s_prev))
    return models.transition.forward(x, tape=tape, frozen=frozen)


def likelihood_decode(models: ModelSet, state,
                      tape: Tape | None = None, frozen: bool = False) -> DiagonalGaussian:
    return models.likelihood.forward(state, tape=tape, frozen=frozen)


@dataclass
class TrainingBatch:
    """A batch of equal-length windows sliced out of recorded episodes."""

    actions: np.ndarray       # (batch, window)
    observations: np.ndarray  # (batch, window)

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if self.actions.shape != self.observations.shape or self.actions.ndim != 2:
            raise ContractError("actions and observations must both be (batch, window)")


def free_energy_graph(models: ModelSet, batch: TrainingBatch, noise: np.ndarray,
                      kl_weight: float = 1.0):
    """Differentiable free-energy forward pass over a batch of windows.

    The latent chain starts at zero with a null action: the first posterior
    and transition calls see (s=0, a=0) no matter which action the window
    recorded, and every later step conditions on the sampled previous latent
    and its recorded action. The sampled current latent is decoded for the
    observation likelihood. noise is (window, batch, state_dim). Returns
    (loss, nll, kl, tape); loss = (nll + kl_weight * kl) averaged per window
    and step, not yet backpropagated.
    """
    n, window = batch.actions.shape
    if noise.shape != (window, n, models.state_dim):
        raise ContractError(f"noise must have shape {(window, n, models.state_dim)}")
    tape = Tape()
    s = Var(np.zeros((n, models.state_dim)), tape)
    null_action = np.zeros((n, 1))
    nll_sum = None
    kl_sum = None
    for t in range(window):
        a = null_action if t == 0 else batch.actions[:, t:t + 1]
        o = batch.observations[:, t:t + 1]
        q_t = models.posterior.forward(ad.concat([s, a, o], axis=-1), tape=tape)
        p_t = models.transition.forward(ad.concat([s, a], axis=-1), tape=tape)
        s = reparam_sample(q_t, noise[t])
        lik = models.likelihood.forward(s, tape=tape)
        nll_t = ad.vsum(-log_prob(o, lik))
        kl_t = ad.vsum(kl_divergence(q_t, p_t))
        nll_sum = nll_t if nll_sum is None else nll_sum + nll_t
        kl_sum = kl_t if kl_sum is None else kl_sum + kl_t
    denom = float(n * window)
    loss = (nll_sum + kl_weight * kl_sum) / denom
    return loss, nll_sum / denom, kl_sum / denom, tape


def free_energy_loss(models: ModelSet, batch: TrainingBatch,
                     rng: np.random.Generator | None = None,
                     kl_weight: float = 1.0, noise: np.ndarray | None = None):
    """One free-energy evaluation with gradients.

    Returns the per-step loss, gradients aligned with ``models.parameters()``,
    and the (nll, kl) decomposition. Reparameterization noise comes from rng,
    or from an explicit (window, batch, state_dim) array for deterministic
    evaluation.
    """
    n, window = batch.actions.shape
    if noise is None:
        if rng is None:
            raise ContractError("free_energy_loss needs an rng or a noise array")
        noise = rng.standard_normal((window, n, models.state_dim))
    params = models.parameters()
    for p in params:
        p.grad = None
    loss, nll, kl, tape = free_energy_graph(models, batch, noise, kl_weight)
    tape.backward(loss)
    grads = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
             for p in params]
    return float(loss.value), grads, {"nll": float(nll.value), "kl": float(kl.value)}


@dataclass
class EpochStats:
    epoch: int
    free_energy: float
    nll: float
    kl: float
    seconds: float


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def final_free_energy(self) -> float:
        return self.epochs[-1].free_energy

    def to_csv(self) -> str:
        # Wall-clock timings stay out of the CSV so reruns are byte-identical.
        lines = ["epoch,free_energy,nll,kl"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.free_energy!r},{e.nll!r},{e.kl!r}")
        return "\n".join(lines) + "\n"


def _slice_windows(episodes: list[Trajectory], window: int,
                   rng: np.random.Generator) -> list[tuple[int, int]]:
    """Pick (episode index, start) pairs covering each episode with a random
    per-episode offset, so different epochs see different window boundaries."""
    out = []
    for i, ep in enumerate(episodes):
        length = len(ep.steps)
        slack = length - window
        if slack < 0:
            continue
        offset = int(rng.integers(0, min(window, slack + 1))) if slack > 0 else 0
        for start in range(offset, length - window + 1, window):
            out.append((i, start))
    return out


def train_models(dataset: list[Trajectory], model_cfg: ModelConfig,
                 train_cfg: TrainConfig, seed: int = 0,
                 models: ModelSet | None = None,
                 log_every: int = 0) -> tuple[ModelSet, TrainingReport]:
    if not dataset:
        raise ContractError("training requires at least one episode")
    window = train_cfg.window
    if all(len(ep.steps) < window for ep in dataset):
        raise ContractError(f"no episode is as long as the window ({window})")
    if models is None:
        models = ModelSet.from_config(model_cfg, seed=seed)
    # Network init consumed SeedSequence(seed); training streams get a sibling.
    order_ss, noise_ss = np.random.SeedSequence([seed, 1]).spawn(2)
    order_rng = np.random.default_rng(order_ss)
    noise_rng = np.random.default_rng(noise_ss)
    opt = Adam(models.parameters(), lr=train_cfg.learning_rate)
    report = TrainingReport()
    for epoch in range(train_cfg.epochs):
        start_time = time.perf_counter()
        windows = _slice_windows(dataset, window, order_rng)
        order_rng.shuffle(windows)
        totals = np.zeros(3)
        count = 0
        for lo in range(0, len(windows), train_cfg.batch_size):
            chunk = windows[lo:lo + train_cfg.batch_size]
            acts = np.stack([dataset[i].actions()[s:s + window] for i, s in chunk])
            obs = np.stack([dataset[i].observations()[s:s + window] for i, s in chunk])
            batch = TrainingBatch(acts, obs)
            loss, grads, parts = free_energy_loss(models, batch, noise_rng,
                                                  kl_weight=train_cfg.kl_weight)
            opt.step(grads)
            totals += np.array([loss, parts["nll"], parts["kl"]]) * len(chunk)
            count += len(chunk)
        stats = EpochStats(epoch=epoch, free_energy=float(totals[0] / count),
                           nll=float(totals[1] / count), kl=float(totals[2] / count),
                           seconds=time.perf_counter() - start_time)
        report.epochs.append(stats)
        if log_every and (epoch % log_every == 0 or epoch == train_cfg.epochs - 1):
            print(f"epoch {epoch:4d}  F={stats.free_energy:9.4f}  "
                  f"nll={stats.nll:9.4f}  kl={stats.kl:8.4f}  ({stats.seconds:.2f}s)")
    return models, report


@dataclass
class ImaginedRollout:
    """A transition-only rollout: no observations are consumed after the start."""

    action_sequence: np.ndarray   # (horizon,)
    state_means: np.ndarray       # (horizon, state_dim)
    state_variances: np.ndarray   # (horizon, state_dim)
    sampled_states: np.ndarray    # (horizon, state_dim)
    g_value: float | None = None
    per_step_g: np.ndarray | None = None

    def __post_init__(self):
        h = len(self.action_sequence)
        if not (self.state_means.shape[0] == self.state_variances.shape[0]
                == self.sampled_states.shape[0] == h):
            raise ContractError("rollout arrays disagree on horizon length")
        if self.per_step_g is not None and self.g_value is not None:
            if abs(float(np.sum(self.per_step_g)) - self.g_value) > 1e-9:
                raise ContractError("per-step terms do not sum to the total g value")

    def state_gaussians(self) -> list[DiagonalGaussian]:
        return [DiagonalGaussian(m, v)
                for m, v in zip(self.state_means, self.state_variances)]


def imagine_rollout(models: ModelSet, s0: np.ndarray, actions: np.ndarray,
                    rng: np.random.Generator | None = None) -> ImaginedRollout:
    """Roll the transition model forward from s0 under an action sequence.

    With an rng the chain advances on sampled states; without one it advances
    on means (deterministic, and the sampled states equal the means).
    """
    actions = np.asarray(actions, dtype=np.float64).reshape(-1)
    s0 = np.asarray(s0, dtype=np.float64).reshape(-1)
    if s0.shape != (models.state_dim,):
        raise ContractError(f"s0 must have shape ({models.state_dim},)")
    means, variances, samples = imagine_batch(
        models, s0[None, :], actions[None, :],
        noise=None if rng is None else rng.standard_normal((1, len(actions), models.state_dim)))
    return ImaginedRollout(action_sequence=actions, state_means=means[:, 0],
                           state_variances=variances[:, 0], sampled_states=samples[:, 0])


def imagine_batch(models: ModelSet, s0: np.ndarray, actions: np.ndarray,
                  noise: np.ndarray | None = None):
    """Vectorized transition rollout for many candidates at once.

    s0 is (n, state_dim), actions is (n, horizon), noise is (n, horizon,
    state_dim) or None for mean propagation. Returns (means, variances,
    samples), each (horizon, n, state_dim). Pure numpy: no gradients.
    """
    n, horizon = actions.shape
    d = models.state_dim
    means = np.empty((horizon, n, d))
    variances = np.empty((horizon, n, d))
    samples = np.empty((horizon, n, d))
    s = np.asarray(s0, dtype=np.float64)
    for t in range(horizon):
        p_t = models.transition.forward(np.concatenate([s, actions[:, t:t + 1]], axis=1))
        means[t] = p_t.mean_value
        variances[t] = p_t.variance_value
        if noise is None:
            samples[t] = means[t]
        else:
            samples[t] = means[t] + np.sqrt(variances[t]) * noise[:, t, :]
        s = samples[t]
    return means, variances, samples


def encode_episode(models: ModelSet, traj: Trajectory) -> np.ndarray:
    """Posterior-mean latent path for a recorded episode, shape (T, state_dim).

    Follows the training convention: the chain starts from the zero state
    with a null action, so the first posterior call ignores the recorded
    action and conditions only on the first observation.
    """
    s = np.zeros(models.state_dim)
    out = np.empty((len(traj.steps), models.state_dim))
    for t, step in enumerate(traj.steps):
        action = 0.0 if t == 0 else step.action
        q_t = posterior_infer(models, s, action, step.observation)
        s = q_t.mean_value
        out[t] = s
    return out


def open_loop_predictions(models: ModelSet, traj: Trajectory):
    """Observation forecasts after seeing only the first step of an episode.

    The first observation fixes the starting latent through the posterior
    (null action, matching the training convention); every later step is
    pure transition + likelihood mean propagation.
    Returns (predicted_means, predicted_stds, actual), each (T-1,).
    """
    if len(traj.steps) < 2:
        raise ContractError("open-loop evaluation needs at least two steps")
    acts = traj.actions()
    obs = traj.observations()
    s = posterior_infer(models, np.zeros(models.state_dim), 0.0, obs[0]).mean_value
    means, variances, _ = imagine_batch(models, s[None, :], acts[None, 1:])
    decoded = models.likelihood.forward(means[:, 0, :])
    pred = decoded.mean_value[:, 0]
    std = np.sqrt(decoded.variance_value[:, 0])
    return pred, std, obs[1:]


def open_loop_prediction_error(models: ModelSet, traj: Trajectory) -> float:
    """Root-mean-square error of the open-loop observation forecast."""
    pred, _, actual = open_loop_predictions(models, traj)
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def open_loop_rms(models: ModelSet, episodes: list[Trajectory], steps: int = 50) -> float:
    """Pooled open-loop RMS over fixed-length prefixes of many episodes.

    Episodes shorter than steps + 1 (one posterior step plus the forecast)
    are skipped.
    """
    squared = []
    for ep in episodes:
        if len(ep.steps) < steps + 1:
            continue
        prefix = Trajectory(steps=list(ep.steps[:steps + 1]),
                            start_position=ep.start_position, seed=ep.seed)
        pred, _, actual = open_loop_predictions(models, prefix)
        squared.append((pred - actual) ** 2)
    if not squared:
        raise ContractError(f"no episode has the {steps + 1} steps needed for evaluation")
    return float(np.sqrt(np.mean(np.concatenate(squared))))


def save_model_set(path, models: ModelSet, meta: dict | None = None):
    header = {
        "kind": "model_set",
        "state_dim": models.state_dim,
        "obs_dim": models.obs_dim,
        "action_dim": models.action_dim,
        "nets": {
            "posterior": models.posterior.spec_meta(),
            "transition": models.transition.spec_meta(),
            "likelihood": models.likelihood.spec_meta(),
        },
    }
    if meta:
        header["extra"] = meta
    arrays = (models.posterior.named_arrays("posterior/")
              + models.transition.named_arrays("transition/")
              + models.likelihood.named_arrays("likelihood/"))
    save_checkpoint(path, header, arrays)


def load_model_set(path) -> tuple[ModelSet, dict]:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "model_set":
        raise ContractError(f"checkpoint at {path} does not hold a model set")
    models = ModelSet(state_dim=meta["state_dim"], obs_dim=meta["obs_dim"],
                      action_dim=meta["action_dim"],
                      hidden=tuple(meta["nets"]["posterior"]["hidden"]),
                      activation=meta["nets"]["posterior"]["activation"])
    models.posterior = GaussianMLP.from_meta(meta["nets"]["posterior"], arrays, "posterior/")
    models.transition = GaussianMLP.from_meta(meta["nets"]["transition"], arrays, "transition/")
    models.likelihood = GaussianMLP.from_meta(meta["nets"]["likelihood"], arrays, "likelihood/")
    return models, meta.get("extra", {})
