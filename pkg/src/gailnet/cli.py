"""Command-line entry point.

Subcommands:
  run                 execute one experiment (or a seed sweep) from a config
  eval                recompute reward-class distance from a saved checkpoint
  probe-linearization measure the lazy-training gap of the feature map vs width

Config values come from a TOML or JSON file; a handful of flags override
file values (precedence: flag > file > default).  The config argument may
also name a bundled environment config (single_state, chain4, grid3x3).
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .driver import ConfigError
from .evaluation import r_distance
from .experiment import (
    BUNDLED_ENVS,
    ExperimentSpec,
    build_expert,
    build_mdp,
    load_config,
    rebuild_mixture,
    resolve_out_dir,
    run_experiment,
    run_sweep,
    spec_from_dict,
)
from .network import TwoLayerNet, init_net, linearization_probe


def resolve_config(arg: str) -> Path:
    """Accept a filesystem path or a bundled config name."""
    path = Path(arg)
    if path.exists():
        return path
    name = arg[:-5] if arg.endswith(".toml") else arg
    if name in BUNDLED_ENVS:
        pkg_path = resources.files("gailnet") / "configs" / f"{name}.toml"
        with resources.as_file(pkg_path) as real:
            return Path(real)
    raise ConfigError(f"config not found: {arg}")


def _parse_sweep(arg: str) -> list[int]:
    if not arg.startswith("seeds="):
        raise ConfigError("sweep syntax is seeds=a..b")
    lo, sep, hi = arg[len("seeds="):].partition("..")
    if not sep:
        raise ConfigError("sweep syntax is seeds=a..b")
    try:
        a, bnd = int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError("sweep bounds must be integers") from exc
    if bnd < a:
        raise ConfigError("sweep range is empty")
    return list(range(a, bnd + 1))


def _apply_overrides(doc: dict, args: argparse.Namespace) -> dict:
    doc = dict(doc)
    gail = dict(doc.get("gail", {}))
    for flag, key in (("seed", "seed"), ("T", "T"), ("m", "m"), ("N", "N")):
        val = getattr(args, flag)
        if val is not None:
            gail[key] = val
    doc["gail"] = gail
    return doc


def _cmd_run(args: argparse.Namespace) -> int:
    config_path = resolve_config(args.config)
    doc = _apply_overrides(load_config(config_path), args)
    spec = spec_from_dict(doc)
    out = resolve_out_dir(spec, args.out, config_path.stem)
    if args.sweep is not None:
        seeds = _parse_sweep(args.sweep)
        return run_sweep(spec, seeds, out)
    return run_experiment(spec, out_dir=out)


def _load_checkpoint(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(p) as ck:
        return {k: ck[k] for k in ck.files}


def _cmd_eval(args: argparse.Namespace) -> int:
    spec = spec_from_dict(load_config(resolve_config(args.config)))
    ck = _load_checkpoint(args.checkpoint)
    m, d = int(ck["m"]), int(ck["d"])
    net0 = TwoLayerNet(m=m, d=d, b=ck["b"], w=ck["w0"].copy(), w0=ck["w0"])
    mdp = build_mdp(spec.env)
    if mdp.d != d:
        raise ConfigError(f"checkpoint dim {d} != environment embedding dim {mdp.d}")
    expert, _ = build_expert(spec, mdp)
    mixed = rebuild_mixture(ck["hist_theta"], ck["hist_tau"], net0)
    grid = spec.eval.b_beta_grid or [spec.gail.B_beta]
    rng = np.random.default_rng([spec.gail.seed, 2])
    reports = []
    for bb in grid:
        rep = r_distance(
            mdp, expert, mixed, bb, net0.w0, net0.b,
            spec.eval.n_restarts, rng, steps=spec.eval.steps,
        )
        reports.append(
            {
                "B_beta": bb,
                "value_pga": rep.value_pga,
                "value_linearized": rep.value_linearized,
                "n_restarts": rep.n_restarts,
                "restart_values": rep.restart_values,
            }
        )
    json.dump({"reports": reports}, sys.stdout, indent=2)
    print()
    return 0


def _cmd_probe(args: argparse.Namespace) -> int:
    try:
        m_list = [int(tok) for tok in args.m_list.split(",") if tok]
    except ValueError as exc:
        raise ConfigError("--m-list must be comma-separated integers") from exc
    if not m_list:
        raise ConfigError("--m-list must be nonempty")
    means = []
    for m in m_list:
        gaps = []
        for s in range(args.seeds):
            rng = np.random.default_rng([args.seed_base, m, s])
            net = init_net(m, args.d, "standard", rng)
            gaps.append(linearization_probe(net, args.B, args.n_inputs, rng))
        means.append(float(np.mean(gaps)))
        print(f"m={m} mean_gap={means[-1]!r}")
    dec = all(means[i + 1] < means[i] for i in range(len(means) - 1))
    print(f"strictly_decreasing={str(dec).lower()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gailnet",
        description="Adversarial imitation learning on finite embedded MDPs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment or a seed sweep")
    p_run.add_argument("--config", required=True, help="TOML/JSON config path or bundled name")
    p_run.add_argument("--seed", type=int, default=None, help="override gail.seed")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--T", type=int, default=None, help="override iteration count")
    p_run.add_argument("--m", type=int, default=None, help="override network width")
    p_run.add_argument("--N", type=int, default=None, help="override minibatch size")
    p_run.add_argument("--sweep", default=None, metavar="seeds=a..b",
                       help="run one experiment per seed in subprocesses")
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval", help="reward-class distance of a saved run")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.set_defaults(func=_cmd_eval)

    p_probe = sub.add_parser(
        "probe-linearization", help="feature-map drift vs width at fixed ball radius"
    )
    p_probe.add_argument("--m-list", default="64,256,1024,4096")
    p_probe.add_argument("--d", type=int, default=6)
    p_probe.add_argument("--B", type=float, default=1.0)
    p_probe.add_argument("--n-inputs", type=int, default=256)
    p_probe.add_argument("--seeds", type=int, default=20)
    p_probe.add_argument("--seed-base", type=int, default=0)
    p_probe.set_defaults(func=_cmd_probe)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
