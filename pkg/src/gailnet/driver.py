"""Alternating minimax training loop: natural-gradient policy updates against
projected reward ascent, with a TD-fitted critic supplying action values.

Each outer iteration k:
  1. fits the critic to the current policy and reward by TD,
  2. draws a visitation batch from the current policy and a minibatch from
     the expert dataset,
  3. solves a ball-constrained least-squares problem for the natural-gradient
     direction and applies the temperature-weighted policy update,
  4. takes one projected ascent step on the reward weights.

The policy update works in anchor-relative coordinates: with tau_{k+1} =
tau_k + eta, the new displacement theta_{k+1} - W_0 is the convex combination
(tau_k (theta_k - W_0) - eta e_k) / tau_{k+1} where e_k is the solved
direction relative to its ball center, so feasibility of theta is inherited
from feasibility of the pieces.  tau_k is computed as k * eta, never by
accumulation, so it is exact for every k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .critic import TdConfig, neural_td
from .mdp import FiniteEmbeddedMDP, TabularPolicy, sample_visitation_batch
from .network import (
    BallConstraint,
    TwoLayerNet,
    features_many,
    forward_many,
    init_net,
    project_ball,
)
from .oracle import (
    DegenerateChainError,
    exact_j,
    exact_q,
    exact_stationary,
    exact_visitation,
    expected_kl,
)
from .policy import (
    CriticNet,
    EnergyPolicy,
    RewardNet,
    critic_table,
    make_reward,
    policy_as_table,
    reward_table,
    score,
    scores_batch,
)

METRICS_COLUMNS = (
    "k",
    "tau",
    "J_pi_r",
    "J_E_r",
    "kl_to_expert",
    "grad_theta_norm",
    "grad_beta_norm",
    "td_error",
    "npg_residual",
    "ball_violations",
)

DENSE_FISHER_LIMIT = 2000


class ConfigError(ValueError):
    """A configuration value violates its contract."""


@dataclass
class GailConfig:
    """Hyperparameters of the alternating training loop.

    eta = None resolves to 1/sqrt(T); B_theta = None resolves to the critic
    ball radius td.B_omega.  lam weighs the reward regularizer (0 disables
    its effect); regularizer_kind "l2-to-anchor" is psi(beta) =
    0.5 ||beta - W_0||^2, "none" removes the term entirely.
    delta_ball_center picks where the direction-solve ball sits: "anchor"
    constrains the absolute direction vector to the weight ball around W_0,
    "origin" constrains its norm directly.
    """

    T: int = 64
    eta: float | None = None
    N: int = 128
    m: int = 128
    lam: float = 0.0
    B_theta: float | None = None
    B_beta: float = 1.0
    td: TdConfig = field(default_factory=TdConfig)
    regularizer_kind: str = "l2-to-anchor"
    init_scheme: str = "symmetric"
    delta_ball_center: str = "anchor"
    npg_iters: int = 200
    npg_power_iters: int = 20
    npg_ridge: float = 1e-8
    npg_cr_iters: int = 100
    seed: int = 0

    @property
    def B_omega(self) -> float:
        return self.td.B_omega

    def effective_eta(self) -> float:
        return self.eta if self.eta is not None else 1.0 / math.sqrt(self.T)

    def effective_b_theta(self) -> float:
        return self.B_theta if self.B_theta is not None else self.td.B_omega

    def validate(self) -> None:
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.eta is not None and self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if self.B_theta is not None and self.B_theta < 0:
            raise ConfigError("B_theta must be nonnegative")
        if self.B_beta < 0:
            raise ConfigError("B_beta must be nonnegative")
        if self.regularizer_kind not in ("none", "l2-to-anchor"):
            raise ConfigError(f"unknown regularizer_kind {self.regularizer_kind!r}")
        if self.init_scheme not in ("standard", "symmetric"):
            raise ConfigError(f"unknown init_scheme {self.init_scheme!r}")
        if self.init_scheme == "symmetric" and self.m % 2 != 0:
            raise ConfigError("symmetric init requires even m")
        if self.delta_ball_center not in ("anchor", "origin"):
            raise ConfigError(f"unknown delta_ball_center {self.delta_ball_center!r}")
        if min(self.npg_iters, self.npg_power_iters, self.npg_cr_iters) < 1:
            raise ConfigError("solver budgets must be >= 1")
        if self.npg_ridge < 0:
            raise ConfigError("npg_ridge must be nonnegative")
        try:
            TdConfig(**vars(self.td))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class GailState:
    """One iterate of the loop: weights, temperature, and running diagnostics.

    policy_history holds (theta_j, tau_j) for j < k; ball_violations counts
    how often the temperature-weighted update left the policy ball and had
    to be projected back (zero in every observed run).
    """

    net0: TwoLayerNet
    theta: np.ndarray
    tau: float
    beta: np.ndarray
    omega: np.ndarray
    k: int = 0
    policy_history: list = field(default_factory=list)
    ball_violations: int = 0
    npg_residual: float = math.nan
    grad_theta_norm: float = math.nan
    grad_beta_norm: float = math.nan


def initial_state(net0: TwoLayerNet) -> GailState:
    """Fresh state with all three weight vectors at the shared anchor, tau = 0."""
    w0 = net0.w0
    return GailState(
        net0=net0, theta=w0.copy(), tau=0.0, beta=w0.copy(), omega=w0.copy()
    )


@dataclass
class MixedPolicy:
    """Uniform mixture over the policy iterates produced by a run."""

    components: list

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("mixed policy needs at least one component")


@dataclass
class MetricsRow:
    k: int
    tau: float
    J_pi_r: float
    J_E_r: float
    kl_to_expert: float
    grad_theta_norm: float
    grad_beta_norm: float
    td_error: float
    npg_residual: float
    ball_violations: int


def metrics_to_csv(rows: list[MetricsRow]) -> str:
    """Render metric rows as CSV: header line, '.' decimals, LF endings."""
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        vals = [getattr(row, c) for c in METRICS_COLUMNS]
        lines.append(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"


@dataclass
class GailResult:
    mixed_policy: MixedPolicy
    metrics: list
    final_state: GailState


def _as_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a batch to (states, actions) index arrays."""
    if (
        isinstance(batch, tuple)
        and len(batch) == 2
        and np.ndim(batch[0]) == 1
        and np.ndim(batch[1]) == 1
    ):
        states = np.asarray(batch[0], dtype=np.int64)
        actions = np.asarray(batch[1], dtype=np.int64)
    else:
        arr = np.asarray(batch, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError("batch must be (states, actions) arrays or a list of pairs")
        states, actions = arr[:, 0], arr[:, 1]
    if states.shape[0] == 0:
        raise ValueError("batch is empty")
    if states.shape != actions.shape:
        raise ValueError("states and actions have different lengths")
    return states, actions


@dataclass
class FisherEstimate:
    """Sample Fisher information held implicitly as scores plus tau^2.

    The matrix is (tau^2 / n) * sum_i vec(iota_i) vec(iota_i)^T; matvec works
    at any width, dense materialization is refused past m*d = 2000.
    """

    scores: np.ndarray
    tau: float

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def dim(self) -> int:
        return self.scores.shape[1] * self.scores.shape[2]

    def matvec(self, v: np.ndarray) -> np.ndarray:
        coef = np.einsum("nmd,md->n", self.scores, v)
        return (self.tau**2 / self.n) * np.einsum("n,nmd->md", coef, self.scores)

    def dense(self) -> np.ndarray:
        if self.dim > DENSE_FISHER_LIMIT:
            raise ValueError(
                f"refusing to densify a {self.dim}x{self.dim} matrix; use matvec"
            )
        flat = self.scores.reshape(self.n, self.dim)
        return (self.tau**2 / self.n) * flat.T @ flat


def estimate_fisher(
    pol: EnergyPolicy, mdp: FiniteEmbeddedMDP, batch
) -> FisherEstimate:
    """Sample second moment of the policy score, scaled by tau^2."""
    states, actions = _as_batch(batch)
    return FisherEstimate(scores=scores_batch(pol, mdp, states, actions), tau=pol.tau)


def estimate_policy_grad(
    pol: EnergyPolicy, critic: CriticNet, mdp: FiniteEmbeddedMDP, batch
) -> np.ndarray:
    """Sample objective gradient in the policy weights: -(tau/N) sum Qhat * iota.

    This is the raw sample average the update consumes.  Its population mean
    is -tau * E_nu[Qhat * iota], which is (1-gamma) times the true objective
    gradient; see exact_policy_gradient for the calibrated version.
    """
    states, actions = _as_batch(batch)
    qhat = forward_many(critic.net, mdp.embedding[states, actions])
    sc = scores_batch(pol, mdp, states, actions)
    return -(pol.tau / states.shape[0]) * np.einsum("n,nmd->md", qhat, sc)


def estimate_reward_grad(
    rew: RewardNet,
    mdp: FiniteEmbeddedMDP,
    expert_batch,
    policy_batch,
    lam: float = 0.0,
    regularizer_kind: str = "l2-to-anchor",
) -> np.ndarray:
    """Sample ascent direction for the reward weights.

    Mean feature gap between expert and policy samples, scaled by
    1/(1-gamma), minus lam times the regularizer gradient.
    """
    se, ae = _as_batch(expert_batch)
    sp, ap = _as_batch(policy_batch)
    if se.shape[0] != sp.shape[0]:
        raise ValueError("expert and policy batches must have equal length")
    fe = features_many(rew.net, mdp.embedding[se, ae]).mean(axis=0)
    fp = features_many(rew.net, mdp.embedding[sp, ap]).mean(axis=0)
    g = (fe - fp) / (1.0 - mdp.gamma)
    if regularizer_kind == "l2-to-anchor":
        g = g - lam * (rew.net.w - rew.net.w0)
    elif regularizer_kind != "none":
        raise ValueError(f"unknown regularizer_kind {regularizer_kind!r}")
    return g


def fisher_population(pol: EnergyPolicy, mdp: FiniteEmbeddedMDP) -> np.ndarray:
    """Dense exact Fisher: tau^2 * sum_nu iota iota^T under the exact visitation."""
    net = pol.net
    dim = net.m * net.d
    if dim > DENSE_FISHER_LIMIT:
        raise ValueError("population Fisher is dense-only; reduce m*d")
    table = policy_as_table(pol, mdp)
    _, nu = exact_visitation(mdp, table)
    out = np.zeros((dim, dim))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            if nu[s, a] == 0.0:
                continue
            v = score(pol, mdp, s, a).reshape(dim)
            out += nu[s, a] * np.outer(v, v)
    return pol.tau**2 * out


def policy_grad_population(
    pol: EnergyPolicy, mdp: FiniteEmbeddedMDP, q_values: np.ndarray
) -> np.ndarray:
    """Population mean of estimate_policy_grad for a fixed Q table.

    -tau * sum_{s,a} nu(s,a) q_values[s,a] iota(s,a): what the sample
    estimator converges to when its batches grow.
    """
    table = policy_as_table(pol, mdp)
    _, nu = exact_visitation(mdp, table)
    out = np.zeros((pol.net.m, pol.net.d))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            if nu[s, a] == 0.0:
                continue
            out += nu[s, a] * q_values[s, a] * score(pol, mdp, s, a)
    return -pol.tau * out


def exact_policy_gradient(
    pol: EnergyPolicy, mdp: FiniteEmbeddedMDP, r: np.ndarray
) -> np.ndarray:
    """True gradient of J(pi_theta; r) in the policy weights.

    Equals (1-gamma)^{-1} tau sum_nu Q iota with the exact Q table; central
    finite differences of exact_j confirm it to ~1e-7 relative error at
    kink-free points.  Note the 1/(1-gamma) factor: the sample estimator's
    population mean is the same expression without it, i.e. the update
    direction is a (1-gamma)-scaled gradient.
    """
    table = policy_as_table(pol, mdp)
    q = exact_q(mdp, table, r)
    _, nu = exact_visitation(mdp, table)
    out = np.zeros((pol.net.m, pol.net.d))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            if nu[s, a] == 0.0:
                continue
            out += nu[s, a] * q[s, a] * score(pol, mdp, s, a)
    return pol.tau * out / (1.0 - mdp.gamma)


def exact_reward_gradient(
    rew: RewardNet,
    mdp: FiniteEmbeddedMDP,
    expert_table: TabularPolicy,
    policy_table: TabularPolicy,
    lam: float = 0.0,
    regularizer_kind: str = "l2-to-anchor",
) -> np.ndarray:
    """True gradient in the reward weights of the expert-vs-policy value gap.

    (1-gamma)^{-1} sum (nu_E - nu_pi)(s,a) phi_beta(s,a) minus the
    regularizer term; matches finite differences of the exact objective.
    """
    _, nu_e = exact_visitation(mdp, expert_table)
    _, nu_p = exact_visitation(mdp, policy_table)
    diff = (nu_e - nu_p).reshape(-1)
    flat = mdp.embedding.reshape(-1, mdp.d)
    feats = features_many(rew.net, flat)
    g = np.einsum("n,nmd->md", diff, feats) / (1.0 - mdp.gamma)
    if regularizer_kind == "l2-to-anchor":
        g = g - lam * (rew.net.w - rew.net.w0)
    elif regularizer_kind != "none":
        raise ValueError(f"unknown regularizer_kind {regularizer_kind!r}")
    return g


@dataclass
class NpgResult:
    delta: np.ndarray
    residual: float
    initial_residual: float
    lambda_max: float


def solve_npg_direction(
    fisher: FisherEstimate,
    g: np.ndarray,
    ball: BallConstraint,
    n_iters: int = 200,
    power_iters: int = 20,
    ridge: float = 1e-8,
    cr_iters: int = 100,
) -> NpgResult:
    """Approximately minimize ||F delta - g||_2 over the ball.

    Warm start: conjugate residual on the ridge-regularized system, projected
    into the ball.  Then fixed-budget projected gradient descent with
    stepsize 1 / lambda_max^2 (power-iteration estimate), keeping the best
    iterate seen.  The returned point is always feasible and never worse
    than the warm start.
    """

    def matvec_ridge(v: np.ndarray) -> np.ndarray:
        return fisher.matvec(v) + ridge * v

    # conjugate residual for the symmetric PSD warm-start system
    x = np.zeros_like(g)
    r = g - matvec_ridge(x)
    g_norm = float(np.linalg.norm(g))
    if g_norm > 0.0:
        p = r.copy()
        ar = matvec_ridge(r)
        ap = ar.copy()
        for _ in range(cr_iters):
            r_ar = float(np.vdot(r, ar))
            denom = float(np.vdot(ap, ap))
            if denom <= 0.0 or r_ar == 0.0:
                break
            step = r_ar / denom
            x = x + step * p
            r = r - step * ap
            if float(np.linalg.norm(r)) <= 1e-13 * g_norm:
                break
            ar_new = matvec_ridge(r)
            cr_beta = float(np.vdot(r, ar_new)) / r_ar
            p = r + cr_beta * p
            ap = ar_new + cr_beta * ap
            ar = ar_new
    best = project_ball(x, ball)
    best_obj = float(np.linalg.norm(fisher.matvec(best) - g))
    initial_obj = best_obj

    # power iteration for the largest eigenvalue of the (ridge-free) operator
    v = g.copy() if g_norm > 0.0 else np.ones_like(g)
    v /= float(np.linalg.norm(v))
    lam_max = 0.0
    for _ in range(power_iters):
        av = fisher.matvec(v)
        lam_max = float(np.linalg.norm(av))
        if lam_max == 0.0:
            break
        v = av / lam_max
    if lam_max <= 0.0:
        return NpgResult(best, best_obj, initial_obj, lam_max)

    step = 1.0 / lam_max**2
    delta = best
    for _ in range(n_iters):
        resid = fisher.matvec(delta) - g
        obj = float(np.linalg.norm(resid))
        if obj < best_obj:
            best_obj, best = obj, delta
        grad = 2.0 * fisher.matvec(resid)
        delta = project_ball(delta - step * grad, ball)
    obj = float(np.linalg.norm(fisher.matvec(delta) - g))
    if obj < best_obj:
        best_obj, best = obj, delta
    return NpgResult(best, best_obj, initial_obj, lam_max)


def actor_step(
    state: GailState,
    mdp: FiniteEmbeddedMDP,
    critic: CriticNet,
    batch,
    cfg: GailConfig,
) -> GailState:
    """One policy update: estimators, direction solve, temperature-weighted step.

    Records npg_residual and grad_theta_norm on the returned state, appends
    the pre-update (theta_k, tau_k) snapshot to the history, and bumps k.
    """
    eta = cfg.effective_eta()
    b_theta = cfg.effective_b_theta()
    w0 = state.net0.w0
    pol = EnergyPolicy(state.net0.with_weights(state.theta), state.tau)
    fisher = estimate_fisher(pol, mdp, batch)
    ghat = estimate_policy_grad(pol, critic, mdp, batch)
    center = w0 if cfg.delta_ball_center == "anchor" else np.zeros_like(w0)
    sol = solve_npg_direction(
        fisher,
        state.tau * ghat,
        BallConstraint(center, b_theta),
        n_iters=cfg.npg_iters,
        power_iters=cfg.npg_power_iters,
        ridge=cfg.npg_ridge,
        cr_iters=cfg.npg_cr_iters,
    )
    direction = sol.delta - center
    tau_next = (state.k + 1) * eta
    rel_next = (state.tau * (state.theta - w0) - eta * direction) / tau_next
    violations = state.ball_violations
    if float(np.linalg.norm(rel_next)) > b_theta + 1e-9:
        violations += 1
        rel_next = project_ball(w0 + rel_next, BallConstraint(w0, b_theta)) - w0
    return replace(
        state,
        theta=w0 + rel_next,
        tau=tau_next,
        omega=critic.net.w,
        k=state.k + 1,
        policy_history=[*state.policy_history, (state.theta, state.tau)],
        ball_violations=violations,
        npg_residual=sol.residual,
        grad_theta_norm=float(np.linalg.norm(ghat)),
    )


def reward_step(state: GailState, grad_hat: np.ndarray, cfg: GailConfig) -> GailState:
    """Projected ascent step on the reward weights."""
    eta = cfg.effective_eta()
    ball = BallConstraint(state.net0.w0, cfg.B_beta)
    beta_next = project_ball(state.beta + eta * grad_hat, ball)
    return replace(
        state,
        beta=beta_next,
        grad_beta_norm=float(np.linalg.norm(grad_hat)),
    )


def mixed_policy_value(mp: MixedPolicy, mdp: FiniteEmbeddedMDP, r: np.ndarray) -> float:
    """Value of the mixture: the arithmetic mean of component values."""
    vals = [exact_j(mdp, policy_as_table(p, mdp), r) for p in mp.components]
    return float(np.mean(vals))


def run_gail(
    mdp: FiniteEmbeddedMDP,
    expert_data,
    expert_policy: TabularPolicy,
    cfg: GailConfig,
    rng: np.random.Generator,
    net0: TwoLayerNet | None = None,
) -> GailResult:
    """Run the full alternating loop and return the mixture plus metrics.

    expert_data is a sequence of (s, a) pairs treated as draws from the
    expert's visitation measure; expert_policy is used only for the exact
    per-iteration diagnostics (value gap, KL), never by the updates.
    """
    cfg.validate()
    expert_states, expert_actions = _as_batch(expert_data)
    if net0 is None:
        net0 = init_net(cfg.m, mdp.d, cfg.init_scheme, rng)
    if net0.d != mdp.d:
        raise ConfigError(f"network input dim {net0.d} != embedding dim {mdp.d}")
    d_expert, _ = exact_visitation(mdp, expert_policy)
    state = initial_state(net0)
    components: list[EnergyPolicy] = []
    rows: list[MetricsRow] = []
    for k in range(cfg.T):
        pol = EnergyPolicy(net0.with_weights(state.theta), state.tau)
        table = policy_as_table(pol, mdp)
        rew = make_reward(net0.with_weights(state.beta), mdp.gamma)
        critic = neural_td(mdp, table, rew, net0.w0, net0.b, cfg.td, rng)
        batch = sample_visitation_batch(mdp, table, cfg.N, rng)
        idx = rng.integers(0, expert_states.shape[0], size=cfg.N)
        expert_batch = (expert_states[idx], expert_actions[idx])

        r_tab = reward_table(rew, mdp)
        j_pi = exact_j(mdp, table, r_tab)
        j_e = exact_j(mdp, expert_policy, r_tab)
        kl = expected_kl(mdp, d_expert, expert_policy, table)
        try:
            _, rho_tab = exact_stationary(mdp, table)
            q_gap = critic_table(critic, mdp) - exact_q(mdp, table, r_tab)
            td_err = float(np.sqrt(np.sum(rho_tab * q_gap**2)))
        except DegenerateChainError:
            td_err = math.nan

        components.append(pol)
        tau_k = state.tau
        state = actor_step(state, mdp, critic, batch, cfg)
        grad_beta = estimate_reward_grad(
            rew, mdp, expert_batch, batch, cfg.lam, cfg.regularizer_kind
        )
        state = reward_step(state, grad_beta, cfg)
        rows.append(
            MetricsRow(
                k=k,
                tau=tau_k,
                J_pi_r=j_pi,
                J_E_r=j_e,
                kl_to_expert=kl,
                grad_theta_norm=state.grad_theta_norm,
                grad_beta_norm=state.grad_beta_norm,
                td_error=td_err,
                npg_residual=state.npg_residual,
                ball_violations=state.ball_violations,
            )
        )
    return GailResult(MixedPolicy(components), rows, state)
