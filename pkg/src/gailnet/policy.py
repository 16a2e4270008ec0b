"""Softmax policy over a network energy, plus reward and critic wrappers.

The policy is pi(a|s) proportional to exp(tau * u_theta(s,a)) with inverse
temperature tau >= 0; tau = 0 is the uniform policy.  The reward head scales
the same network family by 1/(1-gamma) so that rewards and the normalized
returns in `oracle` live on comparable scales, and the critic head is the
raw network value.

The score of a pair (s, a) is the centered feature map
iota(s,a) = phi(s,a) - E_{a' ~ pi(.|s)}[phi(s,a')]; the log-policy gradient
in the network weights is exactly tau * iota.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FiniteEmbeddedMDP, TabularPolicy
from .network import TwoLayerNet, features_many, forward_many


@dataclass
class EnergyPolicy:
    """Policy parameterized by a network energy and inverse temperature."""

    net: TwoLayerNet
    tau: float

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")


@dataclass
class RewardNet:
    """Reward head r(s,a) = scale * u_beta(s,a) with scale = 1/(1-gamma)."""

    net: TwoLayerNet
    scale: float


def make_reward(net: TwoLayerNet, gamma: float) -> RewardNet:
    return RewardNet(net=net, scale=1.0 / (1.0 - gamma))


@dataclass
class CriticNet:
    """Critic head: the network value itself approximates the Q function."""

    net: TwoLayerNet


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def energy_table(net: TwoLayerNet, mdp: FiniteEmbeddedMDP) -> np.ndarray:
    """Network values at every embedded (s, a) pair, as an (S, A) table."""
    S, A = mdp.n_states, mdp.n_actions
    flat = mdp.embedding.reshape(S * A, mdp.d)
    return forward_many(net, flat).reshape(S, A)


def action_probs(pol: EnergyPolicy, mdp: FiniteEmbeddedMDP, s: int) -> np.ndarray:
    """Action distribution at state s: softmax of tau * energy, max-subtracted."""
    u = forward_many(pol.net, mdp.embedding[s])
    return _softmax_rows(pol.tau * u)


def action_probs_all(pol: EnergyPolicy, mdp: FiniteEmbeddedMDP) -> np.ndarray:
    """Action distributions at every state, as an (S, A) row-stochastic table."""
    return _softmax_rows(pol.tau * energy_table(pol.net, mdp))


def policy_as_table(pol: EnergyPolicy, mdp: FiniteEmbeddedMDP) -> TabularPolicy:
    """Materialize the policy as a tabular object for the exact oracles."""
    return TabularPolicy(action_probs_all(pol, mdp))


def sample_action(
    pol: EnergyPolicy, mdp: FiniteEmbeddedMDP, s: int, rng: np.random.Generator
) -> int:
    probs = action_probs(pol, mdp, s)
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right").clip(max=len(probs) - 1))


def score(pol: EnergyPolicy, mdp: FiniteEmbeddedMDP, s: int, a: int) -> np.ndarray:
    """Centered feature map at (s, a): phi(s,a) minus its policy average at s.

    Returns an (m, d) array; the gradient of log pi(a|s) in the weights is
    tau times this, and its Euclidean norm is at most 2.
    """
    feats = features_many(pol.net, mdp.embedding[s])
    probs = action_probs(pol, mdp, s)
    return feats[a] - np.einsum("a,amd->md", probs, feats)


def scores_batch(
    pol: EnergyPolicy,
    mdp: FiniteEmbeddedMDP,
    states: np.ndarray,
    actions: np.ndarray,
) -> np.ndarray:
    """Scores for a batch of pairs; returns (n, m, d).

    Vectorizes score() over the batch: one gate evaluation per (sample,
    action) pair, then the centering reduction, without materializing the
    per-action feature tensor more than once.
    """
    xs = mdp.embedding[states]
    n, A, d = xs.shape
    net = pol.net
    z = xs.reshape(n * A, d) @ net.w.T
    gated = np.where(z > 0.0, z, 0.0).reshape(n, A, net.m)
    u = gated @ net.b / np.sqrt(net.m)
    probs = _softmax_rows(pol.tau * u)
    c = (z.reshape(n, A, net.m) > 0.0) * net.b / np.sqrt(net.m)
    mean_feats = np.einsum("na,nam,nad->nmd", probs, c, xs)
    own = np.take_along_axis(c, actions[:, None, None], axis=1)[:, 0, :]
    own_x = np.take_along_axis(xs, actions[:, None, None], axis=1)[:, 0, :]
    return own[:, :, None] * own_x[:, None, :] - mean_feats


def reward_table(rew: RewardNet, mdp: FiniteEmbeddedMDP) -> np.ndarray:
    """Reward values at every (s, a): scale times the network energy."""
    return rew.scale * energy_table(rew.net, mdp)


def critic_table(crit: CriticNet, mdp: FiniteEmbeddedMDP) -> np.ndarray:
    """Critic Q estimates at every (s, a)."""
    return energy_table(crit.net, mdp)
