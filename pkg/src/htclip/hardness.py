"""Hard-instance generators matching the convergence lower bounds.

Both families draw coordinates of xi independently from the three-point
law D_v:  xi_i = 0 with probability 1 - q_i, +1 with (1 + v_i theta_i) q_i / 2,
-1 with (1 - v_i theta_i) q_i / 2, where v is a sign codeword.

Convex family (kind "cvx"):
    f(x, xi) = sum_i M_i |xi_i| |x_i - xi_i y_i|,
    stochastic subgradient  M_i |xi_i| sign(x_i - xi_i y_i) e_i,
    minimizer x*_i = v_i y_i, F* = sum_i (1 - theta_i) q_i M_i |y_i|.

Strongly convex family (kind "str"): f(x, xi) = -mu <x, M * xi> plus the
quadratic regularizer (mu/2)||x||^2, so F_v is a shifted parabola with
minimizer x*_i = mu-free mean M_i q_i theta_i v_i and
F* = -(mu/2)||x*||^2.

Active coordinates are the first d_star of d; the rest have M_i = q_i = 0
and never produce gradient mass.  The declared noise bounds are
(p, sigma_l / sqrt(d_star), sigma_l): with the sigma-branch magnitude M
both are tight for the directional and full-norm moments respectively.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._util import as_vector
from .noise import GradOracle, NoiseSpec, make_oracle
from .problems import (
    AllSpace,
    CompositeObjective,
    HardCvx,
    HardStr,
    Optimum,
    QuadReg,
)

__all__ = [
    "HARD_REGIMES",
    "HardParams",
    "hard_params",
    "HardInstance",
    "sample_dv",
    "make_hard_instance",
    "Codebook",
    "gv_codebook",
    "two_point_codebook",
    "pad_codewords",
]

HARD_REGIMES = ("cvx-fano", "cvx-twopoint", "str-fano", "str-twopoint")

SUPPORT_CAP = 2_000_000


@dataclass(frozen=True)
class HardParams:
    """Resolved scalars (q, theta, M, y) for one lower-bound regime."""

    regime: str
    d_star: int
    T: int
    G: float
    D: float
    mu: float
    sigma_l: float
    sigma_s: float
    p: float
    delta: Optional[float]
    q: float
    theta: float
    M: float
    y: float

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "d_star": self.d_star,
            "T": self.T,
            "G": self.G,
            "D": self.D,
            "mu": self.mu,
            "sigma_l": self.sigma_l,
            "sigma_s": self.sigma_s,
            "p": self.p,
            "delta": self.delta,
            "q": self.q,
            "theta": self.theta,
            "M": self.M,
            "y": self.y,
        }


def _twopoint_q(T: int, d_star: int, theta: float, delta: float) -> float:
    if not (0.0 < delta < 1.0 / 8.0):
        raise ValueError("two-point regimes require delta in (0, 1/8)")
    kl = theta * math.log((1.0 + theta) / (1.0 - theta))
    return min(math.log(1.0 / (8.0 * delta)) / (T * d_star * kl), 1.0)


def hard_params(
    regime: str,
    *,
    d_star: int,
    T: int,
    G: float,
    D: float,
    sigma_l: float,
    p: float,
    mu: float = 0.0,
    delta: Optional[float] = None,
) -> HardParams:
    """Resolve (q, theta, M, y) for a lower-bound regime.

    Fano regimes use q = 1/T and theta = 1/10; two-point regimes use
    theta = 1/2 and the delta-dependent q.  The magnitude M is the
    minimum of the Lipschitz-budget and noise-budget branches.
    """
    if regime not in HARD_REGIMES:
        raise ValueError(f"unknown hard regime: {regime!r}")
    d_star = int(d_star)
    T = int(T)
    if d_star < 1 or T < 1:
        raise ValueError("d_star and T must be positive integers")
    G = float(G)
    D = float(D)
    sigma_l = float(sigma_l)
    p = float(p)
    mu = float(mu)
    if not (G > 0 and D > 0 and sigma_l > 0):
        raise ValueError("G, D, sigma_l must be positive")
    if not (1.0 < p <= 2.0):
        raise ValueError("moment order p must lie in (1, 2]")
    strongly = regime.startswith("str")
    if strongly and mu <= 0.0:
        raise ValueError("strongly convex regimes require mu > 0")
    if not strongly and mu != 0.0:
        raise ValueError("convex regimes require mu = 0")

    if regime.endswith("fano"):
        q = 1.0 / T
        theta = 0.1
    else:
        theta = 0.5
        if delta is None:
            raise ValueError("two-point regimes require delta")
        q = _twopoint_q(T, d_star, theta, float(delta))

    rd = math.sqrt(d_star)
    if strongly:
        M = min(
            D / (theta * q * rd),
            G / (mu * theta * q * rd),
            sigma_l / (mu * (4.0 * q * d_star) ** (1.0 / p)),
        )
        y = 0.0
    else:
        M = min(G / (q * rd), sigma_l / ((4.0 * q * d_star) ** (1.0 / p)))
        y = D / rd
    return HardParams(
        regime=regime,
        d_star=d_star,
        T=T,
        G=G,
        D=D,
        mu=mu,
        sigma_l=sigma_l,
        sigma_s=sigma_l / rd,
        p=p,
        delta=None if delta is None else float(delta),
        q=q,
        theta=theta,
        M=M,
        y=y,
    )


@dataclass(frozen=True)
class HardInstance:
    """Concrete instance: per-coordinate arrays plus optimum metadata."""

    kind: str
    d: int
    d_star: int
    v: np.ndarray
    q: np.ndarray
    theta: np.ndarray
    M: np.ndarray
    y: np.ndarray
    mu: float
    x_star: np.ndarray
    F_star: float
    p: float
    sigma_s: float
    sigma_l: float

    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.p, self.sigma_s, self.sigma_l)

    def sample_xi(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n rows of xi from D_v (one uniform per coordinate).

        Threshold order maps [0, 1-q) to 0, then the +1 mass, then -1.
        """
        u = rng.random((n, self.d))
        p0 = 1.0 - self.q
        pp = (1.0 + self.v * self.theta) * self.q / 2.0
        return np.where(u < p0, 0.0, np.where(u < p0 + pp, 1.0, -1.0))

    def grad_rows(self, X: np.ndarray, Xi: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "cvx":
            return self.M * np.abs(Xi) * np.sign(X - Xi * self.y)
        return -self.mu * self.M * Xi

    def mean_grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        wq = self.M * self.q
        if self.kind == "cvx":
            wp = wq * (1.0 + self.v * self.theta) / 2.0
            wm = wq * (1.0 - self.v * self.theta) / 2.0
            return wp * np.sign(x - self.y) + wm * np.sign(x + self.y)
        return -self.mu * wq * self.theta * self.v

    def support(self):
        """Full product support (states, probs); active coordinates only
        contribute three outcomes, inactive ones are pinned at 0."""
        vals, probs = [], []
        size = 1
        for i in range(self.d):
            if self.q[i] > 0.0:
                pp = (1.0 + self.v[i] * self.theta[i]) * self.q[i] / 2.0
                pm = (1.0 - self.v[i] * self.theta[i]) * self.q[i] / 2.0
                vals.append((0.0, 1.0, -1.0))
                probs.append((1.0 - self.q[i], pp, pm))
                size *= 3
            else:
                vals.append((0.0,))
                probs.append((1.0,))
            if size > SUPPORT_CAP:
                raise ValueError(
                    f"support size exceeds the enumeration cap {SUPPORT_CAP}"
                )
        states = np.array(list(itertools.product(*vals)), dtype=float)
        w = np.ones(1)
        for plist in probs:
            w = (w[:, None] * np.asarray(plist)[None, :]).ravel()
        return states, w


def sample_dv(
    instance: HardInstance, rng: np.random.Generator, n: Optional[int] = None
) -> np.ndarray:
    """Draw from D_v: a single state vector, or an (n, d) batch when n given."""
    if n is None:
        return instance.sample_xi(rng, 1)[0]
    return instance.sample_xi(rng, n)


def pad_codewords(words: np.ndarray, d: int) -> np.ndarray:
    """Extend codewords from d_star to d coordinates with +1 fill."""
    words = np.atleast_2d(np.asarray(words, dtype=float))
    m, ds = words.shape
    if d < ds:
        raise ValueError("cannot pad codewords into fewer coordinates")
    out = np.ones((m, d))
    out[:, :ds] = words
    return out


def make_hard_instance(
    kind: str, d: int, d_star: int, params: HardParams, v
) -> tuple:
    """Build (objective, oracle) for one codeword v.

    v may have length d_star (padded with +1) or d; entries must be +/-1.
    The composite objective carries the budget Lipschitz constant G and,
    for the strongly convex family, the quadratic (mu/2)||x||^2 as its
    regularizer.
    """
    if kind not in ("cvx", "str"):
        raise ValueError(f"unknown hard instance kind: {kind!r}")
    if kind != params.regime.split("-")[0]:
        raise ValueError(f"params regime {params.regime!r} does not match kind {kind!r}")
    d = int(d)
    ds = params.d_star
    if int(d_star) != ds:
        raise ValueError("d_star does not match the resolved parameters")
    if d < ds:
        raise ValueError("need d >= d_star")
    v = as_vector(v)
    if v.shape[0] == ds and d > ds:
        v = pad_codewords(v, d)[0]
    if v.shape[0] != d:
        raise ValueError(f"codeword length must be d_star={ds} or d={d}")
    if np.any(np.abs(v) != 1.0):
        raise ValueError("codeword entries must be +/-1")

    act = (np.arange(d) < ds).astype(float)
    q = params.q * act
    theta = params.theta * act
    M = params.M * act
    y = params.y * act

    if kind == "cvx":
        x_star = v * y
        F_star = float(np.add.reduce((1.0 - theta) * q * M * np.abs(y)))
        mu = 0.0
        r = None
    else:
        x_star = M * q * theta * v
        F_star = -0.5 * params.mu * float(np.add.reduce(x_star * x_star))
        mu = params.mu
        r = QuadReg(mu, np.zeros(d))

    inst = HardInstance(
        kind=kind,
        d=d,
        d_star=ds,
        v=v,
        q=q,
        theta=theta,
        M=M,
        y=y,
        mu=mu,
        x_star=x_star,
        F_star=F_star,
        p=params.p,
        sigma_s=params.sigma_s,
        sigma_l=params.sigma_l,
    )
    f = HardCvx(inst) if kind == "cvx" else HardStr(inst)
    objective = CompositeObjective(
        f=f,
        r=r,
        domain=AllSpace(d),
        lipschitz_G=params.G,
        mu=mu,
        optimum=Optimum(x_star, F_star),
    )
    oracle = make_oracle(objective, "hard-instance", instance=inst)
    return objective, oracle


# ---------------------------------------------------------------------------
# codebooks


@dataclass(frozen=True)
class Codebook:
    """Sign codewords with verified pairwise Hamming separation."""

    words: np.ndarray
    d_star: int
    min_distance: float
    target_size: int
    shortfall: bool

    @property
    def size(self) -> int:
        return self.words.shape[0]


def _pairwise_min_distance(words: np.ndarray) -> float:
    m = words.shape[0]
    if m < 2:
        return float(words.shape[1])
    best = math.inf
    for i in range(m - 1):
        dist = np.count_nonzero(words[i + 1 :] != words[i], axis=1)
        best = min(best, int(np.min(dist)))
    return float(best)


def gv_codebook(
    d_star: int,
    rng: np.random.Generator,
    target_size: Optional[int] = None,
    max_consecutive_rejects: int = 10_000,
) -> Codebook:
    """Randomized greedy codebook with pairwise distance >= d_star / 4.

    Aims for ceil(exp(d_star / 8)) codewords (the packing guarantee);
    gives up after max_consecutive_rejects straight rejections and flags
    the shortfall instead of failing.
    """
    d_star = int(d_star)
    if d_star < 1:
        raise ValueError("d_star must be a positive integer")
    if target_size is None:
        target_size = int(math.ceil(math.exp(d_star / 8.0)))
    need = d_star / 4.0
    kept = []
    rejects = 0
    while len(kept) < target_size and rejects < max_consecutive_rejects:
        w = rng.integers(0, 2, d_star) * 2.0 - 1.0
        if all(np.count_nonzero(w != k) >= need for k in kept):
            kept.append(w)
            rejects = 0
        else:
            rejects += 1
    words = np.array(kept)
    return Codebook(
        words=words,
        d_star=d_star,
        min_distance=_pairwise_min_distance(words),
        target_size=target_size,
        shortfall=len(kept) < target_size,
    )


def two_point_codebook(d_star: int) -> Codebook:
    """The pair {+1^d_star, -1^d_star}, Hamming distance exactly d_star."""
    d_star = int(d_star)
    if d_star < 1:
        raise ValueError("d_star must be a positive integer")
    words = np.stack([np.ones(d_star), -np.ones(d_star)])
    return Codebook(
        words=words,
        d_star=d_star,
        min_distance=float(d_star),
        target_size=2,
        shortfall=False,
    )
