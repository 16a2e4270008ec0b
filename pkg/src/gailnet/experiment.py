"""Experiment orchestration: environments, experts, configs, and artifacts.

An experiment is described by a TOML or JSON config with sections [env],
[expert], [gail], [gail.td], [eval] plus an optional out_dir.  Running one
produces four files in the output directory: metrics.csv (per-iteration
diagnostics), rdistance.json (reward-class distance reports), summary.json
(convergence summary plus the full effective config echo), and
checkpoint.npz (weights and the policy history needed to rebuild the
mixture).  Same seed, same bytes.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .critic import TdConfig, default_alpha
from .driver import (
    ConfigError,
    GailConfig,
    GailResult,
    MixedPolicy,
    metrics_to_csv,
    run_gail,
)
from .evaluation import convergence_summary, r_distance
from .mdp import (
    FiniteEmbeddedMDP,
    TabularPolicy,
    generate_expert_trajectory,
    load_mdp,
    random_mdp,
    uniform_policy,
)
from .network import init_net
from .policy import EnergyPolicy

BUNDLED_ENVS = ("single_state", "chain4", "grid3x3")
CHECKPOINT_VERSION = 1


class NumericalGuardError(RuntimeError):
    """A run produced non-finite diagnostics or broke a feasibility bound."""


def _unit_ball_embedding(
    n_states: int, n_actions: int, d: int, rng: np.random.Generator
) -> np.ndarray:
    g = rng.standard_normal((n_states, n_actions, d))
    g /= np.linalg.norm(g, axis=2, keepdims=True)
    emb = g * rng.random((n_states, n_actions, 1)) ** (1.0 / d)
    return emb / np.linalg.norm(emb, axis=2).max()


def bundled_mdp(name: str, gamma: float | None = None) -> FiniteEmbeddedMDP:
    """Construct one of the frozen reference environments.

    single_state: one state, two actions.  chain4: a 4-state left/right
    chain.  grid3x3: a 3x3 gridworld with four compass actions and bouncing
    walls.  Every transition row is blended with 5% uniform noise so all
    chains mix, and embeddings are frozen unit-ball draws.
    """
    mix = 0.05
    if name == "single_state":
        gamma = 0.9 if gamma is None else gamma
        rng = np.random.default_rng(101)
        S, A, d = 1, 2, 2
        P = np.ones((S, A, S))
        rho = np.ones(S)
    elif name == "chain4":
        gamma = 0.9 if gamma is None else gamma
        rng = np.random.default_rng(202)
        S, A, d = 4, 2, 6
        P = np.zeros((S, A, S))
        for s in range(S):
            P[s, 0, max(s - 1, 0)] = 1.0
            P[s, 1, min(s + 1, S - 1)] = 1.0
        P = (1.0 - mix) * P + mix / S
        rho = np.full(S, 1.0 / S)
    elif name == "grid3x3":
        gamma = 0.9 if gamma is None else gamma
        rng = np.random.default_rng(303)
        S, A, d = 9, 4, 8
        moves = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left
        P = np.zeros((S, A, S))
        for s in range(S):
            r_pos, c_pos = divmod(s, 3)
            for a, (dr, dc) in enumerate(moves):
                nr = min(max(r_pos + dr, 0), 2)
                nc = min(max(c_pos + dc, 0), 2)
                P[s, a, 3 * nr + nc] = 1.0
        P = (1.0 - mix) * P + mix / S
        rho = np.full(S, 1.0 / S)
    else:
        raise ConfigError(f"unknown bundled environment {name!r}")
    emb = _unit_ball_embedding(S, A, d, rng)
    return FiniteEmbeddedMDP(S, A, emb, P, rho, gamma)


def bundled_hidden_reward(name: str, mdp: FiniteEmbeddedMDP) -> np.ndarray:
    """Goal-style reward tables that define the default experts."""
    r = np.zeros((mdp.n_states, mdp.n_actions))
    if name == "single_state":
        r[0, 0] = 1.0
    elif name == "chain4":
        r[3, :] = 1.0
    elif name == "grid3x3":
        r[8, :] = 1.0
    else:
        raise ConfigError(f"unknown bundled environment {name!r}")
    return r


def value_iteration(
    mdp: FiniteEmbeddedMDP, r: np.ndarray, tol: float = 1e-10
) -> np.ndarray:
    """Optimal Q table under the normalized-return convention.

    Iterates Q <- (1-gamma) r + gamma P max_a' Q until the sup-norm change
    is at most tol.
    """
    r = np.asarray(r, dtype=float)
    q = np.zeros_like(r)
    while True:
        v = q.max(axis=1)
        q_next = (1.0 - mdp.gamma) * r + mdp.gamma * np.einsum("sat,t->sa", mdp.P, v)
        if np.abs(q_next - q).max() <= tol:
            return q_next
        q = q_next


def make_expert(
    mdp: FiniteEmbeddedMDP, hidden_reward: np.ndarray, temp: float
) -> TabularPolicy:
    """Near-optimal softmax expert: softmax(Q*/temp) rows.

    Full support by construction, which keeps the expert-policy KL
    diagnostics finite; temp -> 0 approaches the greedy policy.
    """
    if temp <= 0:
        raise ConfigError("expert temperature must be positive")
    q = value_iteration(mdp, hidden_reward)
    z = q / temp
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return TabularPolicy(p / p.sum(axis=1, keepdims=True))


@dataclass
class EnvSpec:
    """Where the MDP comes from: a bundled name, a JSON file, or a generator."""

    name: str | None = None
    path: str | None = None
    n_states: int = 5
    n_actions: int = 3
    d: int = 6
    gamma: float | None = None
    mix: float = 0.05
    seed: int = 0


@dataclass
class ExpertSpec:
    hidden_reward_seed: int | None = None
    vi_tol: float = 1e-10
    temp: float = 0.2
    T_E: int = 20000


@dataclass
class EvalSpec:
    n_restarts: int = 8
    b_beta_grid: list | None = None
    steps: int = 500


@dataclass
class ExperimentSpec:
    env: EnvSpec = field(default_factory=EnvSpec)
    expert: ExpertSpec = field(default_factory=ExpertSpec)
    gail: GailConfig = field(default_factory=GailConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    out_dir: str | None = None

    def validate(self) -> None:
        if self.env.path is not None and not Path(self.env.path).exists():
            raise ConfigError(f"MDP file not found: {self.env.path}")
        if self.expert.T_E < 1:
            raise ConfigError("T_E must be >= 1")
        if self.expert.temp <= 0:
            raise ConfigError("expert temperature must be positive")
        if self.eval.n_restarts < 1:
            raise ConfigError("n_restarts must be >= 1")
        if self.eval.steps < 1:
            raise ConfigError("eval steps must be >= 1")
        if self.eval.b_beta_grid is not None:
            if any(bb < 0 for bb in self.eval.b_beta_grid):
                raise ConfigError("B_beta grid entries must be nonnegative")
        self.gail.validate()


def build_mdp(env: EnvSpec) -> FiniteEmbeddedMDP:
    if env.name is not None:
        return bundled_mdp(env.name, env.gamma)
    if env.path is not None:
        return load_mdp(env.path)
    gamma = 0.9 if env.gamma is None else env.gamma
    return random_mdp(
        env.n_states, env.n_actions, env.d, gamma,
        np.random.default_rng(env.seed), env.mix,
    )


def build_expert(
    spec: ExperimentSpec, mdp: FiniteEmbeddedMDP
) -> tuple[TabularPolicy, np.ndarray]:
    """Expert policy plus the hidden reward it optimizes."""
    if spec.expert.hidden_reward_seed is not None:
        rng = np.random.default_rng(spec.expert.hidden_reward_seed)
        hidden = rng.uniform(0.0, 1.0, (mdp.n_states, mdp.n_actions))
    elif spec.env.name is not None:
        hidden = bundled_hidden_reward(spec.env.name, mdp)
    else:
        rng = np.random.default_rng(spec.env.seed + 1)
        hidden = rng.uniform(0.0, 1.0, (mdp.n_states, mdp.n_actions))
    expert = make_expert(mdp, hidden, spec.expert.temp)
    return expert, hidden


def _build_section(cls, doc: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{where}] section: {exc}") from exc


def spec_from_dict(doc: dict) -> ExperimentSpec:
    doc = dict(doc)
    out_dir = doc.pop("out_dir", None)
    allowed = {"env", "expert", "gail", "eval"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    gail_doc = dict(doc.get("gail", {}))
    td_doc = gail_doc.pop("td", {})
    td = _build_section(TdConfig, td_doc, "gail.td")
    gail = _build_section(GailConfig, {**gail_doc, "td": td}, "gail")
    spec = ExperimentSpec(
        env=_build_section(EnvSpec, doc.get("env", {}), "env"),
        expert=_build_section(ExpertSpec, doc.get("expert", {}), "expert"),
        gail=gail,
        eval=_build_section(EvalSpec, doc.get("eval", {}), "eval"),
        out_dir=out_dir,
    )
    spec.validate()
    return spec


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def spec_to_echo(spec: ExperimentSpec, mdp: FiniteEmbeddedMDP) -> dict:
    """Full effective configuration, defaults and resolved values included."""
    doc = dataclasses.asdict(spec)
    doc["gail"]["eta_effective"] = spec.gail.effective_eta()
    doc["gail"]["B_theta_effective"] = spec.gail.effective_b_theta()
    td = spec.gail.td
    doc["gail"]["td"]["alpha_effective"] = (
        td.alpha if td.alpha is not None else default_alpha(mdp.gamma, spec.gail.m)
    )
    doc["env"]["gamma_effective"] = mdp.gamma
    if spec.eval.b_beta_grid is None:
        doc["eval"]["b_beta_grid_effective"] = [spec.gail.B_beta]
    else:
        doc["eval"]["b_beta_grid_effective"] = list(spec.eval.b_beta_grid)
    return doc


def rebuild_mixture(
    hist_theta: np.ndarray, hist_tau: np.ndarray, net0
) -> MixedPolicy:
    comps = [
        EnergyPolicy(net0.with_weights(hist_theta[j]), float(hist_tau[j]))
        for j in range(hist_theta.shape[0])
    ]
    return MixedPolicy(comps)


def _check_finite(result: GailResult) -> None:
    for row in result.metrics:
        checked = (
            row.tau, row.J_pi_r, row.J_E_r, row.kl_to_expert,
            row.grad_theta_norm, row.grad_beta_norm, row.npg_residual,
        )
        if not all(math.isfinite(v) for v in checked):
            raise NumericalGuardError(f"non-finite diagnostic at iteration {row.k}")


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> int:
    """Execute one experiment end to end; returns a process exit code.

    0 on success, 2 on configuration errors (before anything is written),
    3 on numerical guard failures.
    """
    try:
        spec.validate()
        mdp = build_mdp(spec.env)
        out = Path(out_dir) if out_dir is not None else resolve_out_dir(spec, None, None)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        expert, hidden = build_expert(spec, mdp)
        data = generate_expert_trajectory(
            mdp, expert, spec.expert.T_E, np.random.default_rng([spec.gail.seed, 1])
        )
        rng = np.random.default_rng([spec.gail.seed, 0])
        net0 = init_net(spec.gail.m, mdp.d, spec.gail.init_scheme, rng)
        result = run_gail(mdp, data, expert, spec.gail, rng, net0=net0)
        _check_finite(result)

        grid = spec.eval.b_beta_grid or [spec.gail.B_beta]
        eval_rng = np.random.default_rng([spec.gail.seed, 2])
        reports = []
        for bb in grid:
            rep = r_distance(
                mdp, expert, result.mixed_policy, bb, net0.w0, net0.b,
                spec.eval.n_restarts, eval_rng, steps=spec.eval.steps,
            )
            reports.append(
                {
                    "B_beta": bb,
                    "value_pga": rep.value_pga,
                    "value_linearized": rep.value_linearized,
                    "n_restarts": rep.n_restarts,
                    "restart_values": rep.restart_values,
                    "argmax_beta": rep.argmax_beta.tolist(),
                }
            )
        summary = convergence_summary(result.metrics).to_dict() if len(result.metrics) >= 8 else None

        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(metrics_to_csv(result.metrics))
        with open(out / "rdistance.json", "w", encoding="utf-8") as fh:
            json.dump({"reports": reports}, fh, indent=2)
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "config": spec_to_echo(spec, mdp),
                    "convergence": summary,
                    "hidden_reward": hidden.tolist(),
                },
                fh,
                indent=2,
            )
        st = result.final_state
        hist_theta = np.stack([th for th, _ in st.policy_history])
        hist_tau = np.array([t for _, t in st.policy_history])
        np.savez(
            out / "checkpoint.npz",
            version=np.array(CHECKPOINT_VERSION),
            m=np.array(net0.m),
            d=np.array(net0.d),
            b=net0.b,
            w0=net0.w0,
            theta=st.theta,
            tau=np.array(st.tau),
            beta=st.beta,
            omega=st.omega,
            hist_theta=hist_theta,
            hist_tau=hist_tau,
        )
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalGuardError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def resolve_out_dir(
    spec: ExperimentSpec, flag_out: str | None, config_stem: str | None
) -> Path:
    """Output directory precedence: flag > config out_dir > env root > ./runs."""
    if flag_out is not None:
        return Path(flag_out)
    if spec.out_dir is not None:
        return Path(spec.out_dir)
    stem = config_stem or "experiment"
    root = os.environ.get("GAILNET_OUTPUT_ROOT")
    if root:
        return Path(root) / stem
    return Path("runs") / stem


def run_sweep(
    spec: ExperimentSpec, seeds: list[int], base_out: Path, max_workers: int | None = None
) -> int:
    """Run one experiment per seed in separate processes; returns the max exit code."""
    import concurrent.futures as cf

    jobs = []
    for s in seeds:
        sub = dataclasses.replace(
            spec, gail=dataclasses.replace(spec.gail, seed=s)
        )
        jobs.append((sub, base_out / f"seed_{s}"))
    workers = max_workers or min(len(jobs), os.cpu_count() or 1)
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        codes = list(pool.map(_sweep_worker, jobs))
    return max(codes)


def _sweep_worker(job: tuple) -> int:
    spec, out = job
    return run_experiment(spec, out_dir=out)
