"""Evaluation of a learned policy mixture against the expert.

The headline number is the reward-class distance: the largest value gap
J(expert; r) - J(mixture; r) over all rewards representable by the network
family within the weight ball.  The inner maximization is nonconcave (the
feature gates move with the weights), so two estimates bracket it:

* a multi-restart projected gradient ascent over the ball, and
* a closed-form maximizer of the gate-frozen linearization, which is exact
  for the linear surrogate and approaches the truth as width grows.

Both work on exact visitation measures, so the only noise is the inner
maximization itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .driver import MetricsRow, MixedPolicy
from .mdp import FiniteEmbeddedMDP, TabularPolicy
from .network import BallConstraint, project_ball, sample_in_ball
from .oracle import exact_visitation
from .policy import policy_as_table


@dataclass
class RDistanceReport:
    """Result of the reward-class distance maximization."""

    value_pga: float
    value_linearized: float
    argmax_beta: np.ndarray
    n_restarts: int
    restart_values: list


@dataclass
class ConvergenceSummary:
    """Quarter-on-quarter trend of the per-iteration expert-policy value gap."""

    n_iters: int
    first_quarter_mean: float
    last_quarter_mean: float
    min_gap: float
    argmin_gap: int

    def to_dict(self) -> dict:
        return {
            "n_iters": self.n_iters,
            "first_quarter_mean": self.first_quarter_mean,
            "last_quarter_mean": self.last_quarter_mean,
            "min_gap": self.min_gap,
            "argmin_gap": self.argmin_gap,
        }


def visitation_gap(
    mdp: FiniteEmbeddedMDP, expert: TabularPolicy, mp: MixedPolicy
) -> np.ndarray:
    """nu_expert - mean_k nu_{pi_k}, flattened over (s, a) pairs."""
    _, nu_e = exact_visitation(mdp, expert)
    nu_bar = np.zeros_like(nu_e)
    for comp in mp.components:
        _, nu = exact_visitation(mdp, policy_as_table(comp, mdp))
        nu_bar += nu
    nu_bar /= len(mp.components)
    return (nu_e - nu_bar).reshape(-1)


def r_distance(
    mdp: FiniteEmbeddedMDP,
    expert: TabularPolicy,
    mp: MixedPolicy,
    B_beta: float,
    w0: np.ndarray,
    b: np.ndarray,
    n_restarts: int,
    rng: np.random.Generator,
    steps: int = 500,
) -> RDistanceReport:
    """Maximize the expert-vs-mixture value gap over the reward ball.

    The gap as a function of reward weights beta is
    f(beta) = (1-gamma)^{-1} sum_{s,a} (nu_E - nu_bar)(s,a) u_beta(s,a),
    linear in beta between gate flips.  PGA runs `steps` iterations with
    stepsize 0.1/sqrt(t) from the anchor plus n_restarts-1 uniform ball
    points, keeping each restart's best iterate; ties across restarts keep
    the earliest.  The linearized value freezes the gates at the anchor,
    where the maximizer over the ball is anchor + B * g/||g||.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    w0 = np.asarray(w0, dtype=float)
    b = np.asarray(b, dtype=float)
    m = b.shape[0]
    root_m = float(np.sqrt(m))
    scale = 1.0 / (1.0 - mdp.gamma)
    gap = visitation_gap(mdp, expert, mp)
    X = mdp.embedding.reshape(-1, mdp.d)

    def value_and_grad(beta: np.ndarray) -> tuple[float, np.ndarray]:
        z = X @ beta.T
        gates = z > 0.0
        val = scale * float(gap @ (np.where(gates, z, 0.0) @ b)) / root_m
        coef = gap[:, None] * (gates * b) / root_m
        grad = scale * np.einsum("nm,nd->md", coef, X)
        return val, grad

    ball = BallConstraint(w0, B_beta)
    starts = [w0.copy()]
    for _ in range(n_restarts - 1):
        starts.append(sample_in_ball(ball, rng))

    best_val = -np.inf
    best_beta = w0.copy()
    restart_values = []
    for beta0 in starts:
        beta = beta0
        val, grad = value_and_grad(beta)
        r_best_val, r_best_beta = val, beta
        for t in range(1, steps + 1):
            beta = project_ball(beta + (0.1 / np.sqrt(t)) * grad, ball)
            val, grad = value_and_grad(beta)
            if val > r_best_val:
                r_best_val, r_best_beta = val, beta
        restart_values.append(r_best_val)
        if r_best_val > best_val:
            best_val, best_beta = r_best_val, r_best_beta

    gates0 = (X @ w0.T > 0.0) * b / root_m
    g0 = scale * np.einsum("n,nm,nd->md", gap, gates0, X)
    val0, _ = value_and_grad(w0)
    g0_norm = float(np.linalg.norm(g0))
    value_lin = val0 + B_beta * g0_norm

    return RDistanceReport(
        value_pga=float(best_val),
        value_linearized=float(value_lin),
        argmax_beta=best_beta,
        n_restarts=n_restarts,
        restart_values=[float(v) for v in restart_values],
    )


def convergence_summary(metrics: list[MetricsRow]) -> ConvergenceSummary:
    """Quarter means and minimum of the per-iteration gap J_E_r - J_pi_r."""
    n = len(metrics)
    if n < 8:
        raise ValueError("need at least 8 iterations to summarize")
    gaps = np.array([row.J_E_r - row.J_pi_r for row in metrics])
    q = n // 4
    return ConvergenceSummary(
        n_iters=n,
        first_quarter_mean=float(gaps[:q].mean()),
        last_quarter_mean=float(gaps[-q:].mean()),
        min_gap=float(gaps.min()),
        argmin_gap=int(gaps.argmin()),
    )
