"""Finite MDPs with unit-ball feature embeddings and rollout sampling.

States and actions are integer indices.  Each (state, action) pair carries a
feature vector in the Euclidean unit ball of R^d; networks elsewhere in the
package consume those vectors, never the raw indices.  Sampling routines all
take a ``numpy.random.Generator`` so that runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

DIST_ATOL = 1e-12


def _check_rows_stochastic(rows: np.ndarray, what: str) -> None:
    if np.any(rows < 0):
        raise ValueError(f"{what} has negative entries")
    sums = rows.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=DIST_ATOL):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"{what} rows must sum to 1 (worst deviation {worst:.3e})")


def _draw(cum_row: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a categorical given its cumulative-sum row."""
    idx = int(np.searchsorted(cum_row, rng.random(), side="right"))
    return min(idx, cum_row.shape[0] - 1)


@dataclass
class FiniteEmbeddedMDP:
    """A finite MDP (S, A, P, rho, gamma) plus an embedding of S x A into R^d.

    Fields
    ------
    n_states, n_actions : sizes of the index sets.
    embedding : array (n_states, n_actions, d), each vector with norm <= 1.
    P : array (n_states, n_actions, n_states); P[s, a] is the next-state law.
    rho : array (n_states,); initial state distribution.
    gamma : discount in (0, 1).
    """

    n_states: int
    n_actions: int
    embedding: np.ndarray
    P: np.ndarray
    rho: np.ndarray
    gamma: float
    _cum_p: np.ndarray = field(init=False, repr=False)
    _cum_rho: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.embedding = np.asarray(self.embedding, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        S, A = self.n_states, self.n_actions
        if S < 1 or A < 1:
            raise ValueError("n_states and n_actions must be positive")
        if self.embedding.ndim != 3 or self.embedding.shape[:2] != (S, A):
            raise ValueError(f"embedding must have shape ({S}, {A}, d)")
        if self.P.shape != (S, A, S):
            raise ValueError(f"P must have shape ({S}, {A}, {S})")
        if self.rho.shape != (S,):
            raise ValueError(f"rho must have shape ({S},)")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        _check_rows_stochastic(self.P, "transition kernel")
        _check_rows_stochastic(self.rho[None, :], "initial distribution")
        norms = np.linalg.norm(self.embedding, axis=2)
        if np.any(norms > 1.0 + 1e-9):
            raise ValueError(f"embedding norms must be <= 1 (max {norms.max():.6f})")
        self._cum_p = np.cumsum(self.P, axis=2)
        self._cum_rho = np.cumsum(self.rho)

    @property
    def d(self) -> int:
        return self.embedding.shape[2]

    def features(self, s: int, a: int) -> np.ndarray:
        return self.embedding[s, a]


@dataclass
class TabularPolicy:
    """A stochastic policy stored as a (n_states, n_actions) row-stochastic table."""

    probs: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2:
            raise ValueError("probs must be a 2-D table")
        _check_rows_stochastic(self.probs, "policy")
        self._cum = np.cumsum(self.probs, axis=1)

    def sample_action(self, s: int, rng: np.random.Generator) -> int:
        return _draw(self._cum[s], rng)


@dataclass
class Transition:
    """One environment step: (s, a, r, s', a')."""

    state: int
    action: int
    reward: float
    next_state: int
    next_action: int


def step(mdp: FiniteEmbeddedMDP, s: int, a: int, rng: np.random.Generator) -> int:
    """Sample the next state from P[s, a]."""
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"state/action ({s}, {a}) out of range")
    return _draw(mdp._cum_p[s, a], rng)


def sample_visitation(
    mdp: FiniteEmbeddedMDP, policy: TabularPolicy, rng: np.random.Generator
) -> tuple[int, int]:
    """Draw one (s, a) pair whose law is the discounted visitation measure.

    Draws a horizon H with P(H = h) = (1 - gamma) * gamma^h, rolls the chain
    for H steps from s_0 ~ rho, and returns (s_H, a_H).  This is exact in law,
    not a truncation.
    """
    h = int(rng.geometric(1.0 - mdp.gamma)) - 1
    s = _draw(mdp._cum_rho, rng)
    a = _draw(policy._cum[s], rng)
    for _ in range(h):
        s = _draw(mdp._cum_p[s, a], rng)
        a = _draw(policy._cum[s], rng)
    return s, a


def sample_visitation_batch(
    mdp: FiniteEmbeddedMDP,
    policy: TabularPolicy,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n independent visitation samples; returns (states, actions) int arrays."""
    states = np.empty(n, dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    for i in range(n):
        states[i], actions[i] = sample_visitation(mdp, policy, rng)
    return states, actions


def sample_stationary(
    mdp: FiniteEmbeddedMDP,
    policy: TabularPolicy,
    rng: np.random.Generator,
    burn_in: int,
) -> tuple[int, int]:
    """Approximate draw from the stationary (s, a) law: burn the chain in, then read it."""
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    s = _draw(mdp._cum_rho, rng)
    for _ in range(burn_in):
        a = _draw(policy._cum[s], rng)
        s = _draw(mdp._cum_p[s, a], rng)
    a = _draw(policy._cum[s], rng)
    return s, a


def generate_expert_trajectory(
    mdp: FiniteEmbeddedMDP,
    expert: TabularPolicy,
    T_E: int,
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Draw T_E i.i.d. samples from the expert's visitation measure.

    The demonstration set is modelled as independent draws from the expert's
    occupancy distribution rather than one contiguous rollout.
    """
    if T_E < 0:
        raise ValueError("T_E must be >= 0")
    return [sample_visitation(mdp, expert, rng) for _ in range(T_E)]


def random_mdp(
    n_states: int,
    n_actions: int,
    d: int,
    gamma: float,
    rng: np.random.Generator,
    mix: float = 0.05,
) -> FiniteEmbeddedMDP:
    """Generate a random ergodic MDP with unit-ball embeddings.

    Transition rows and the initial distribution are Dirichlet draws blended
    with `mix` parts uniform, which keeps every row strictly positive and the
    chain ergodic under any policy.  Embeddings are uniform draws in the unit
    ball, rescaled so the largest norm is exactly 1.
    """
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P = (1.0 - mix) * P + mix / n_states
    rho = rng.dirichlet(np.ones(n_states))
    rho = (1.0 - mix) * rho + mix / n_states
    g = rng.standard_normal((n_states, n_actions, d))
    g /= np.linalg.norm(g, axis=2, keepdims=True)
    radii = rng.random((n_states, n_actions, 1)) ** (1.0 / d)
    emb = g * radii
    emb /= np.linalg.norm(emb, axis=2).max()
    return FiniteEmbeddedMDP(n_states, n_actions, emb, P, rho, gamma)


def random_policy(
    n_states: int, n_actions: int, rng: np.random.Generator, concentration: float = 1.0
) -> TabularPolicy:
    """Random policy with Dirichlet(concentration) rows."""
    probs = rng.dirichlet(np.full(n_actions, concentration), size=n_states)
    return TabularPolicy(probs)


def uniform_policy(n_states: int, n_actions: int) -> TabularPolicy:
    return TabularPolicy(np.full((n_states, n_actions), 1.0 / n_actions))


def save_mdp(mdp: FiniteEmbeddedMDP, path: str) -> None:
    """Write the MDP to a JSON document."""
    doc = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "d": mdp.d,
        "gamma": mdp.gamma,
        "rho": mdp.rho.tolist(),
        "P": mdp.P.tolist(),
        "embedding": mdp.embedding.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_mdp(path: str) -> FiniteEmbeddedMDP:
    """Load an MDP from JSON, re-validating every invariant."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    emb = np.asarray(doc["embedding"], dtype=float)
    if emb.ndim != 3 or emb.shape[2] != doc["d"]:
        raise ValueError("embedding shape disagrees with declared d")
    return FiniteEmbeddedMDP(
        n_states=int(doc["n_states"]),
        n_actions=int(doc["n_actions"]),
        embedding=emb,
        P=np.asarray(doc["P"], dtype=float),
        rho=np.asarray(doc["rho"], dtype=float),
        gamma=float(doc["gamma"]),
    )
