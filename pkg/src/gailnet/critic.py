"""Stochastic temporal-difference policy evaluation with a projected network critic.

One TD pass holds the policy and reward fixed, walks the stationary chain
(or draws i.i.d. burned-in samples), and applies projected semi-gradient
updates to the critic weights.  The returned critic carries the average of
the first T_TD iterates, which is what the actor consumes.

The Bellman residual is delta = Q(s,a) - (1-gamma)*r(s,a) - gamma*Q(s',a'):
the reward enters pre-scaled by (1-gamma), matching the normalized-return
convention of the exact oracles (so a constant reward c has fixed point
Q = c, not c/(1-gamma)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FiniteEmbeddedMDP, TabularPolicy, Transition, _draw
from .network import BallConstraint, TwoLayerNet, project_ball
from .policy import CriticNet, RewardNet, reward_table


@dataclass
class TdConfig:
    """Knobs for one TD evaluation pass.

    alpha = None selects the width-aware default min{(1-gamma)/8, m^{-1/2}}.
    sampling "chain" burns in once and then walks a single chain; "iid"
    redraws an independent burned-in sample every step.
    """

    T_TD: int = 2000
    alpha: float | None = None
    B_omega: float = 5.0
    burn_in: int = 100
    sampling: str = "chain"

    def __post_init__(self) -> None:
        if self.T_TD < 1:
            raise ValueError("T_TD must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.B_omega < 0:
            raise ValueError("B_omega must be nonnegative")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.sampling not in ("chain", "iid"):
            raise ValueError("sampling must be 'chain' or 'iid'")


def default_alpha(gamma: float, m: int) -> float:
    """Stepsize min{(1-gamma)/8, m^{-1/2}}."""
    return min((1.0 - gamma) / 8.0, 1.0 / float(np.sqrt(m)))


def _value(w: np.ndarray, b: np.ndarray, root_m: float, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Network value at x and the gate activations of the blocks."""
    z = w @ x
    gates = z > 0.0
    return float(b @ np.where(gates, z, 0.0)) / root_m, gates


def _td_update(
    w: np.ndarray,
    b: np.ndarray,
    root_m: float,
    x: np.ndarray,
    x_next: np.ndarray,
    scaled_r: float,
    gamma: float,
    alpha: float,
    ball: BallConstraint,
) -> np.ndarray:
    """One semi-gradient step; the gate pattern is frozen within the step."""
    q, gates = _value(w, b, root_m, x)
    q_next, _ = _value(w, b, root_m, x_next)
    delta = q - scaled_r - gamma * q_next
    coef = (alpha * delta / root_m) * (b * gates)
    return project_ball(w - np.outer(coef, x), ball)


def td_step(
    critic: CriticNet,
    mdp: FiniteEmbeddedMDP,
    transition: Transition,
    alpha: float,
    ball: BallConstraint,
) -> CriticNet:
    """Apply one projected TD update for a single (s, a, r, s', a') sample.

    transition.reward is the raw reward value r(s, a); the (1-gamma) scaling
    of the residual happens here.
    """
    net = critic.net
    x = mdp.embedding[transition.state, transition.action]
    x_next = mdp.embedding[transition.next_state, transition.next_action]
    w = _td_update(
        net.w,
        net.b,
        float(np.sqrt(net.m)),
        x,
        x_next,
        (1.0 - mdp.gamma) * transition.reward,
        mdp.gamma,
        alpha,
        ball,
    )
    return CriticNet(net.with_weights(w))


def neural_td(
    mdp: FiniteEmbeddedMDP,
    policy: TabularPolicy,
    rew,
    w0: np.ndarray,
    b: np.ndarray,
    cfg: TdConfig,
    rng: np.random.Generator,
) -> CriticNet:
    """Evaluate the policy under the reward by projected stochastic TD.

    rew is either a RewardNet or a plain (n_states, n_actions) reward table.
    Starts at the anchor w0, performs T_TD updates on stationary-chain
    samples, and returns a critic whose weights are the average of the
    iterates before each update (so T_TD = 1 returns the anchor itself).
    """
    w0 = np.asarray(w0, dtype=float)
    b = np.asarray(b, dtype=float)
    m, d = w0.shape
    root_m = float(np.sqrt(m))
    alpha = cfg.alpha if cfg.alpha is not None else default_alpha(mdp.gamma, m)
    ball = BallConstraint(w0, cfg.B_omega)
    r_tab = rew if isinstance(rew, np.ndarray) else reward_table(rew, mdp)
    if r_tab.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("reward table shape mismatch")
    scaled_r = (1.0 - mdp.gamma) * r_tab
    gamma = mdp.gamma
    emb, cum_p, cum_pi = mdp.embedding, mdp._cum_p, policy._cum

    def draw_start() -> tuple[int, int]:
        s = _draw(mdp._cum_rho, rng)
        for _ in range(cfg.burn_in):
            a = _draw(cum_pi[s], rng)
            s = _draw(cum_p[s, a], rng)
        return s, _draw(cum_pi[s], rng)

    s, a = draw_start()
    w = w0.copy()
    avg = np.zeros_like(w0)
    for _ in range(cfg.T_TD):
        avg += w
        s_next = _draw(cum_p[s, a], rng)
        a_next = _draw(cum_pi[s_next], rng)
        w = _td_update(
            w, b, root_m, emb[s, a], emb[s_next, a_next],
            float(scaled_r[s, a]), gamma, alpha, ball,
        )
        if cfg.sampling == "chain":
            s, a = s_next, a_next
        else:
            s, a = draw_start()
    avg /= cfg.T_TD
    return CriticNet(TwoLayerNet(m=m, d=d, b=b, w=avg, w0=w0))
