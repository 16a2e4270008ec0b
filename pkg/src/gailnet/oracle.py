"""Closed-form ground truth for finite MDPs: Q/V/A tables, visitation and
stationary measures, discounted returns, expected KL, and the exact
policy-gap identity.  Everything here is a dense linear-algebra solve; the
learning code never calls these in its update path, only tests and
evaluation do.

Conventions: Q is normalized so that Q(s,a) is an expectation of
(1 - gamma) * sum_t gamma^t r_t, which keeps Q, V, J and r on the same scale
(a constant reward c gives Q = V = J = c).  The visitation measure is the
probability distribution d(s) = (1 - gamma) * sum_t gamma^t P(s_t = s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FiniteEmbeddedMDP, TabularPolicy


class DegenerateChainError(ValueError):
    """The chain has no unique stationary distribution (eigenvalue 1 repeats)."""


class SupportError(ValueError):
    """KL(p || q) is undefined: p puts mass where q has none."""


@dataclass
class ExactQuantities:
    """Bundle of exact policy-evaluation tables for one (policy, reward) pair."""

    q_table: np.ndarray
    v_table: np.ndarray
    a_table: np.ndarray
    j_value: float


def _check_reward_shape(mdp: FiniteEmbeddedMDP, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"reward table must have shape ({mdp.n_states}, {mdp.n_actions})"
        )
    return r


def state_kernel(mdp: FiniteEmbeddedMDP, policy: TabularPolicy) -> np.ndarray:
    """State-to-state kernel under the policy: P_pi[s, s'] = sum_a pi(a|s) P[s,a,s']."""
    return np.einsum("sa,sat->st", policy.probs, mdp.P)


def exact_q(
    mdp: FiniteEmbeddedMDP, policy: TabularPolicy, r: np.ndarray
) -> np.ndarray:
    """Solve the Bellman system Q = (1-gamma) r + gamma P Pi Q exactly.

    Returns the (n_states, n_actions) action-value table under the scaled
    return convention described in the module docstring.
    """
    r = _check_reward_shape(mdp, r)
    S, A = mdp.n_states, mdp.n_actions
    n = S * A
    # M[(s,a),(s',a')] = gamma * P[s,a,s'] * pi(a'|s')
    M = mdp.gamma * np.einsum("sat,tb->satb", mdp.P, policy.probs).reshape(n, n)
    q = np.linalg.solve(np.eye(n) - M, (1.0 - mdp.gamma) * r.reshape(n))
    return q.reshape(S, A)


def exact_quantities(
    mdp: FiniteEmbeddedMDP, policy: TabularPolicy, r: np.ndarray
) -> ExactQuantities:
    """Exact Q, V, advantage, and discounted return for one policy and reward."""
    q = exact_q(mdp, policy, r)
    v = np.einsum("sa,sa->s", policy.probs, q)
    a = q - v[:, None]
    j = float(mdp.rho @ v)
    return ExactQuantities(q_table=q, v_table=v, a_table=a, j_value=j)


def exact_visitation(
    mdp: FiniteEmbeddedMDP, policy: TabularPolicy
) -> tuple[np.ndarray, np.ndarray]:
    """Discounted state visitation d and state-action visitation nu.

    d solves (I - gamma P_pi^T) d = (1 - gamma) rho; nu[s,a] = d[s] pi(a|s).
    Both are probability distributions.
    """
    P_pi = state_kernel(mdp, policy)
    d = np.linalg.solve(
        np.eye(mdp.n_states) - mdp.gamma * P_pi.T, (1.0 - mdp.gamma) * mdp.rho
    )
    nu = d[:, None] * policy.probs
    return d, nu


def exact_stationary(
    mdp: FiniteEmbeddedMDP, policy: TabularPolicy
) -> tuple[np.ndarray, np.ndarray]:
    """Stationary state distribution of the chain under the policy.

    Returns (varrho, rho_table) where varrho is the unique probability vector
    with varrho^T P_pi = varrho^T and rho_table[s,a] = varrho[s] pi(a|s).
    Raises DegenerateChainError when eigenvalue 1 of P_pi is not simple.
    """
    P_pi = state_kernel(mdp, policy)
    S = mdp.n_states
    eigvals = np.linalg.eigvals(P_pi)
    if int(np.sum(np.abs(eigvals - 1.0) < 1e-8)) > 1:
        raise DegenerateChainError(
            "stationary distribution is not unique for this chain"
        )
    # Stack the fixed-point equations with the normalization row; under a
    # simple eigenvalue 1 the system has exactly one solution.
    A = np.vstack([P_pi.T - np.eye(S), np.ones((1, S))])
    b = np.zeros(S + 1)
    b[-1] = 1.0
    varrho, *_ = np.linalg.lstsq(A, b, rcond=None)
    varrho = np.where(np.abs(varrho) < 1e-13, 0.0, varrho)
    if np.any(varrho < 0):
        raise DegenerateChainError("stationary solve produced negative mass")
    varrho = varrho / varrho.sum()
    residual = float(np.abs(varrho @ P_pi - varrho).max())
    if residual > 1e-10:
        raise DegenerateChainError(
            f"stationary fixed point residual {residual:.3e} too large"
        )
    return varrho, varrho[:, None] * policy.probs


def exact_j(mdp: FiniteEmbeddedMDP, policy: TabularPolicy, r: np.ndarray) -> float:
    """Discounted return J = E_{s ~ rho}[V(s)]; equals <nu, r> by construction."""
    return exact_quantities(mdp, policy, r).j_value


def cost_difference_residual(
    mdp: FiniteEmbeddedMDP,
    expert: TabularPolicy,
    policy: TabularPolicy,
    r: np.ndarray,
) -> float:
    """Residual of the exact identity relating a return gap to Q inner products.

    J(expert; r) - J(policy; r) equals
    (1-gamma)^{-1} E_{s ~ d_expert}[<Q_policy(s, .), expert(.|s) - policy(.|s)>].
    Both sides are computed from independent closed forms; the return value is
    their absolute difference and should sit at numerical noise.
    """
    r = _check_reward_shape(mdp, r)
    lhs = exact_j(mdp, expert, r) - exact_j(mdp, policy, r)
    q = exact_q(mdp, policy, r)
    d_e, _ = exact_visitation(mdp, expert)
    gaps = np.einsum("sa,sa->s", q, expert.probs - policy.probs)
    rhs = float(d_e @ gaps) / (1.0 - mdp.gamma)
    return abs(lhs - rhs)


def expected_kl(
    mdp: FiniteEmbeddedMDP,
    mu: np.ndarray,
    pi1: TabularPolicy,
    pi2: TabularPolicy,
) -> float:
    """State-averaged KL divergence: sum_s mu(s) KL(pi1(.|s) || pi2(.|s)).

    Raises SupportError if, on a state with mu > 0, pi1 puts mass on an
    action where pi2 has none.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (mdp.n_states,):
        raise ValueError(f"mu must have shape ({mdp.n_states},)")
    p, q = pi1.probs, pi2.probs
    bad = (mu[:, None] > 0) & (p > 0) & (q == 0)
    if np.any(bad):
        raise SupportError("pi1 puts mass where pi2 has none on a weighted state")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) -
                                     np.log(np.where(q > 0, q, 1.0))), 0.0)
    per_state = terms.sum(axis=1)
    return float(np.maximum(mu, 0.0) @ per_state)
