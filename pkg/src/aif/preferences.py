"""Preferred-state priors over the latent space: the goal signal the planner
and habit policy minimize against.

A prior holds one Gaussian per future timestep plus an active flag. Inactive
timesteps contribute nothing to the risk term, so a fully inactive prior
leaves only ambiguity in the expected free energy.

Timestep convention: trajectory step-list index i is timestep t = i + 1, and
prior index k describes the state reached at timestep k + 1. A planner called
after t steps have been executed therefore starts at prior index t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, InsufficientRewardDataError
from .gaussian import VARIANCE_FLOOR, DiagonalGaussian
from .mountain_car import Trajectory
from .world_model import ModelSet, encode_episode

MAGIC = "AIFPRIOR v1"

MODES = ("demos", "reward", "flat")


@dataclass
class PreferredPrior:
    means: np.ndarray      # (T, state_dim)
    variances: np.ndarray  # (T, state_dim)
    active: np.ndarray     # (T,) bool
    mode: str
    threshold: int | None = None

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.maximum(np.asarray(self.variances, dtype=np.float64),
                                    VARIANCE_FLOOR)
        self.active = np.asarray(self.active, dtype=bool)
        if self.mode not in MODES:
            raise ContractError(f"unknown prior mode {self.mode!r}")
        if self.means.shape != self.variances.shape or self.means.ndim != 2:
            raise ContractError("means and variances must both be (T, state_dim)")
        if self.active.shape != (self.means.shape[0],):
            raise ContractError("active flags must be one per timestep")
        for arr in (self.means, self.variances, self.active):
            arr.setflags(write=False)

    @property
    def horizon(self) -> int:
        return self.means.shape[0]

    @property
    def state_dim(self) -> int:
        return self.means.shape[1]

    def gaussian_at(self, k: int) -> DiagonalGaussian:
        return DiagonalGaussian(self.means[k].copy(), self.variances[k].copy())

    def clamp_index(self, k: int) -> int:
        """Map an imagined timestep index onto the prior, holding the final
        entry for anything past the end."""
        if k < 0:
            raise ContractError("prior index must be nonnegative")
        return min(k, self.horizon - 1)


def _latent_paths(models: ModelSet, demos: list[Trajectory], horizon: int) -> np.ndarray:
    """Posterior-mean paths padded to the horizon by holding the final latent."""
    paths = np.empty((len(demos), horizon, models.state_dim))
    for i, demo in enumerate(demos):
        path = encode_episode(models, demo)
        if len(path) >= horizon:
            paths[i] = path[:horizon]
        else:
            paths[i, :len(path)] = path
            paths[i, len(path):] = path[-1]
    return paths


def prior_from_demos(models: ModelSet, demos: list[Trajectory],
                     horizon: int) -> PreferredPrior:
    """Fit one Gaussian per timestep across demo latent paths; all active."""
    if not demos:
        raise ContractError("prior_from_demos requires at least one demo")
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    if any(len(d.steps) < 1 for d in demos):
        raise ContractError("every demo must contain at least one step")
    paths = _latent_paths(models, demos, horizon)
    return PreferredPrior(means=paths.mean(axis=0), variances=paths.var(axis=0),
                          active=np.ones(horizon, dtype=bool), mode="demos")


def prior_from_reward(models: ModelSet, dataset: list[Trajectory],
                      threshold_t: int = 100, horizon: int = 200) -> PreferredPrior:
    """One Gaussian over latents at rewarded steps with t >= threshold_t,
    shared by every timestep at or past the threshold; earlier steps inactive."""
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    hits = []
    for ep in dataset:
        latents = None
        for i, step in enumerate(ep.steps):
            if step.reward > 0 and (i + 1) >= threshold_t:
                if latents is None:
                    latents = encode_episode(models, ep)
                hits.append(latents[i])
    if not hits:
        raise InsufficientRewardDataError(
            f"no episode earned reward at or after timestep {threshold_t}")
    hits = np.stack(hits)
    means = np.zeros((horizon, models.state_dim))
    variances = np.ones((horizon, models.state_dim))
    active = np.zeros(horizon, dtype=bool)
    for k in range(horizon):
        if (k + 1) >= threshold_t:
            means[k] = hits.mean(axis=0)
            variances[k] = hits.var(axis=0)
            active[k] = True
    return PreferredPrior(means=means, variances=variances, active=active,
                          mode="reward", threshold=threshold_t)


def flat_prior(state_dim: int, horizon: int) -> PreferredPrior:
    """Every state equally preferred: all timesteps inactive."""
    if horizon < 1:
        raise ContractError("horizon must be at least 1")
    return PreferredPrior(means=np.zeros((horizon, state_dim)),
                          variances=np.ones((horizon, state_dim)),
                          active=np.zeros(horizon, dtype=bool), mode="flat")


def save_prior(path, prior: PreferredPrior):
    manifest = {"mode": prior.mode, "T": prior.horizon,
                "state_dim": prior.state_dim, "threshold": prior.threshold}
    lines = [MAGIC, json.dumps(manifest, sort_keys=True)]
    for k in range(prior.horizon):
        fields = [str(int(prior.active[k]))]
        fields += [repr(float(v)) for v in prior.means[k]]
        fields += [repr(float(v)) for v in prior.variances[k]]
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_prior(path) -> PreferredPrior:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise FormatError(f"{path} is not an {MAGIC} file")
    try:
        manifest = json.loads(lines[1])
        horizon, dim = manifest["T"], manifest["state_dim"]
        records = lines[2:2 + horizon]
        if len(records) != horizon:
            raise FormatError(f"{path}: expected {horizon} records, found {len(records)}")
        active = np.empty(horizon, dtype=bool)
        means = np.empty((horizon, dim))
        variances = np.empty((horizon, dim))
        for k, line in enumerate(records):
            parts = line.split(",")
            if len(parts) != 1 + 2 * dim:
                raise FormatError(f"{path}: record {k} has {len(parts)} fields")
            active[k] = bool(int(parts[0]))
            means[k] = [float(v) for v in parts[1:1 + dim]]
            variances[k] = [float(v) for v in parts[1 + dim:]]
    except (IndexError, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed prior file ({exc})") from exc
    return PreferredPrior(means=means, variances=variances, active=active,
                          mode=manifest["mode"], threshold=manifest["threshold"])
