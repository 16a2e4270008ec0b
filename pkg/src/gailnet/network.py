"""Two-layer ReLU networks with frozen output signs and an anchored weight ball.

The network is u(x) = (1/sqrt(m)) * sum_l b_l * 1{x.W_l > 0} * x.W_l with
b_l in {-1, +1} fixed at initialization and only W trained.  Equivalently
u(x) = <W, phi_W(x)> where phi_W is the gated feature map; both views are
implemented and cross-checked in tests.  Weights live in a Euclidean ball
around the initialization anchor W_0, enforced by projection.

The ReLU gate is the strict indicator x.W_l > 0: a block sitting exactly on
its kink contributes nothing.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "gailnet-net"
CHECKPOINT_VERSION = 1


@dataclass
class TwoLayerNet:
    """Width-m ReLU network state: signs b, trainable W, frozen anchor W_0.

    W and W_0 are stored as (m, d) arrays; block l is row l.  b and W_0 are
    marked read-only after construction.
    """

    m: int
    d: int
    b: np.ndarray
    w: np.ndarray
    w0: np.ndarray

    def __post_init__(self) -> None:
        self.b = np.asarray(self.b, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.w0 = np.asarray(self.w0, dtype=float)
        if self.b.shape != (self.m,):
            raise ValueError(f"b must have shape ({self.m},)")
        if self.w.shape != (self.m, self.d) or self.w0.shape != (self.m, self.d):
            raise ValueError(f"weights must have shape ({self.m}, {self.d})")
        if not np.all(np.isin(self.b, (-1.0, 1.0))):
            raise ValueError("b entries must be -1 or +1")
        self.b.setflags(write=False)
        self.w0.setflags(write=False)

    def with_weights(self, w: np.ndarray) -> "TwoLayerNet":
        """New net sharing b and W_0 but carrying different trainable weights."""
        return TwoLayerNet(self.m, self.d, self.b, np.asarray(w, dtype=float), self.w0)

    def clone(self) -> "TwoLayerNet":
        return self.with_weights(self.w.copy())


@dataclass
class BallConstraint:
    """Euclidean ball {W : ||W - anchor||_2 <= radius} in weight space."""

    anchor: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        self.anchor = np.asarray(self.anchor, dtype=float)
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")

    def contains(self, w: np.ndarray, atol: float = 0.0) -> bool:
        return float(np.linalg.norm(w - self.anchor)) <= self.radius + atol


def init_net(
    m: int, d: int, scheme: str, rng: np.random.Generator
) -> TwoLayerNet:
    """Initialize a network: b ~ Unif{-1,+1}, W_0 rows ~ N(0, I_d / d).

    scheme "standard" draws all m blocks independently.  scheme "symmetric"
    (requires even m) draws m/2 blocks and mirrors them into the second half
    with flipped signs, so the initial function is identically zero.  The
    trainable W starts equal to W_0.
    """
    if m < 1 or d < 1:
        raise ValueError("m and d must be positive")
    if scheme == "standard":
        b = rng.choice(np.array([-1.0, 1.0]), size=m)
        w0 = rng.standard_normal((m, d)) / np.sqrt(d)
    elif scheme == "symmetric":
        if m % 2 != 0:
            raise ValueError("symmetric initialization requires even m")
        half = m // 2
        b_half = rng.choice(np.array([-1.0, 1.0]), size=half)
        w_half = rng.standard_normal((half, d)) / np.sqrt(d)
        b = np.concatenate([b_half, -b_half])
        w0 = np.vstack([w_half, w_half])
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return TwoLayerNet(m=m, d=d, b=b, w=w0.copy(), w0=w0)


def _check_input(net: TwoLayerNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.d:
        raise ValueError(f"input dim {x.shape[-1]} != network dim {net.d}")
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms > 1.0 + 1e-9):
        warnings.warn("input norm exceeds 1; the function class assumes unit-ball inputs")
    return x


def forward(net: TwoLayerNet, x: np.ndarray) -> float:
    """Evaluate u(x) for a single d-vector."""
    x = _check_input(net, x)
    z = net.w @ x
    return float(net.b @ np.where(z > 0.0, z, 0.0)) / np.sqrt(net.m)


def forward_many(net: TwoLayerNet, xs: np.ndarray) -> np.ndarray:
    """Evaluate u on a batch of inputs with shape (..., d)."""
    xs = _check_input(net, xs)
    z = xs @ net.w.T
    return np.where(z > 0.0, z, 0.0) @ net.b / np.sqrt(net.m)


def features(net: TwoLayerNet, x: np.ndarray) -> np.ndarray:
    """Gated feature map phi_W(x) as an (m, d) array.

    Block l is m^{-1/2} * b_l * 1{x.W_l > 0} * x, so <W, phi_W(x)> recovers
    forward(net, x) and ||phi_W(x)|| <= ||x||.
    """
    x = _check_input(net, x)
    gates = (net.w @ x > 0.0).astype(float)
    return (net.b * gates)[:, None] * x[None, :] / np.sqrt(net.m)


def features_many(net: TwoLayerNet, xs: np.ndarray) -> np.ndarray:
    """Feature maps for a batch: input (n, d) -> output (n, m, d)."""
    xs = _check_input(net, xs)
    gates = (xs @ net.w.T > 0.0).astype(float)
    return (gates * net.b)[:, :, None] * xs[:, None, :] / np.sqrt(net.m)


def project_ball(w: np.ndarray, c: BallConstraint) -> np.ndarray:
    """Euclidean projection onto the ball; returns w itself when already inside.

    The scaled point is nudged down by single ulps until the recomputed
    distance test passes, which makes the projection bitwise idempotent.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != c.anchor.shape:
        raise ValueError("weight and anchor shapes differ")
    delta = w - c.anchor
    dist = float(np.linalg.norm(delta))
    if dist <= c.radius:
        return w
    scaled = delta * (c.radius / dist)
    cand = c.anchor + scaled
    while float(np.linalg.norm(cand - c.anchor)) > c.radius:
        scaled *= 1.0 - 1e-16
        cand = c.anchor + scaled
    return cand


def sample_in_ball(c: BallConstraint, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the ball (direction uniform, radius ~ U^{1/dim})."""
    g = rng.standard_normal(c.anchor.shape)
    nrm = float(np.linalg.norm(g))
    if nrm == 0.0:
        return c.anchor.copy()
    dim = c.anchor.size
    return c.anchor + g * (c.radius * rng.random() ** (1.0 / dim) / nrm)


def linearization_probe(
    net: TwoLayerNet,
    B: float,
    n_inputs: int,
    rng: np.random.Generator,
    inputs: np.ndarray | None = None,
) -> float:
    """Mean feature-drift gap of the network class at ball radius B.

    Draws W, W1, W2 uniformly from the radius-B ball around the anchor and
    returns mean_x |<W, phi_W1(x)> - <W, phi_W2(x)>| over the probe inputs
    (random unit-ball points unless given).  The gap measures how far the
    class is from being linear in W at this width, and shrinks as m grows.
    """
    if B < 0:
        raise ValueError("B must be nonnegative")
    if inputs is None:
        g = rng.standard_normal((n_inputs, net.d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        inputs = g * rng.random((n_inputs, 1)) ** (1.0 / net.d)
    ball = BallConstraint(net.w0, B)
    w = sample_in_ball(ball, rng)
    w1 = sample_in_ball(ball, rng)
    w2 = sample_in_ball(ball, rng)
    gates1 = (inputs @ w1.T > 0.0).astype(float)
    gates2 = (inputs @ w2.T > 0.0).astype(float)
    z = inputs @ w.T
    vals1 = (gates1 * z) @ net.b / np.sqrt(net.m)
    vals2 = (gates2 * z) @ net.b / np.sqrt(net.m)
    return float(np.mean(np.abs(vals1 - vals2)))


def net_to_doc(net: TwoLayerNet) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "m": net.m,
        "d": net.d,
        "b": net.b.tolist(),
        "w0": net.w0.tolist(),
        "w": net.w.tolist(),
    }


def net_from_doc(doc: dict) -> TwoLayerNet:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a network checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    return TwoLayerNet(
        m=int(doc["m"]),
        d=int(doc["d"]),
        b=np.asarray(doc["b"], dtype=float),
        w=np.asarray(doc["w"], dtype=float),
        w0=np.asarray(doc["w0"], dtype=float),
    )


def save_net(net: TwoLayerNet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_doc(net), fh)


def load_net(path: str) -> TwoLayerNet:
    with open(path, "r", encoding="utf-8") as fh:
        return net_from_doc(json.load(fh))
