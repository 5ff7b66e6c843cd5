"""Norm clipping, clipping-error decomposition, and bound verification.

The clipped oracle is g^c = min(1, tau/||g||) g.  Against the true mean
f = E[g | F] its error splits into a variance part d^u = g^c - E[g^c | F]
and a bias part d^b = E[g^c | F] - f.  Under declared moment bounds
(p, sigma_s, sigma_l) the following hold, with chi = 1 if
(1 - alpha) tau >= ||f||:

  (1) ||d^u|| <= 2 tau                                  always
  (2) E ||d^u||^2 <= 4 sigma_l^p tau^{2-p}              always
  (3) ||E d^u (d^u)^T|| <= 4 sigma_s^p tau^{2-p} + 4 ||f||^2
  (4) chi: same LHS <= 4 sigma_s^p tau^{2-p}
                      + 4 alpha^{1-p} sigma_l^p ||f||^2 tau^{-p}
  (5) ||d^b|| <= sqrt2 (sigma_l^{p-1} + ||f||^{p-1}) sigma_s tau^{1-p}
               + 2 (sigma_l^p + ||f||^p) ||f|| tau^{-p}
  (6) chi: ||d^b|| <= sigma_s sigma_l^{p-1} tau^{1-p}
                    + alpha^{1-p} sigma_l^p ||f|| tau^{-p}

Verifiers check measured quantities against these bounds, exactly (finite
support) or by Monte Carlo with standard-error margins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._util import as_vector, row_norms
from .noise import GradOracle, directional_bound_independent

__all__ = [
    "clip",
    "clip_batch",
    "clip_bounds",
    "ClipErrorReport",
    "clip_error_exact",
    "clip_error_mc",
    "operator_norm",
]

BOUND_NAMES = (
    "du_max_norm",
    "du_sq_mean",
    "du_cov_opnorm",
    "du_cov_opnorm_chi",
    "db_norm",
    "db_norm_chi",
)

# largest finite support size the exact verifier will enumerate
EXACT_SUPPORT_CAP = 1_000_000


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not (tau > 0):
        raise ValueError("clipping threshold tau must be positive")
    return tau


def clip_batch(G: np.ndarray, tau: float) -> np.ndarray:
    """Clip rows of G to Euclidean norm at most tau (tau = inf passes through)."""
    tau = _check_tau(tau)
    G = np.asarray(G, dtype=float)
    nrm = row_norms(G)
    over = nrm > tau
    if not np.any(over):
        return G
    scale = np.where(over, tau / np.where(over, nrm, 1.0), 1.0)
    return G * scale[..., None]


def clip(g: np.ndarray, tau: float) -> np.ndarray:
    """Clip a single vector; same code path as the batched version."""
    g = np.asarray(g, dtype=float)
    return clip_batch(g[None, :], tau)[0]


def _term(coef: float, tau: float, expo: float) -> float:
    # coef * tau**expo with 0 * inf resolved to 0
    if coef == 0.0:
        return 0.0
    return coef * tau**expo


def clip_bounds(
    p: float,
    sigma_s: float,
    sigma_l: float,
    f_norm: float,
    tau: float,
    alpha: float,
) -> tuple:
    """The six clipping-error bounds at threshold tau; see module docstring.

    Entries 4 and 6 are only meaningful when chi = 1, i.e. when
    (1 - alpha) tau >= f_norm; they are returned regardless.
    """
    tau = _check_tau(tau)
    p = float(p)
    if not (1.0 < p <= 2.0):
        raise ValueError("moment order p must lie in (1, 2]")
    if not (0.0 < alpha < 1.0):
        raise ValueError("clipping margin alpha must lie in (0, 1)")
    ss = float(sigma_s)
    sl = float(sigma_l)
    fn = float(f_norm)
    if ss < 0 or sl < ss or fn < 0:
        raise ValueError("need 0 <= sigma_s <= sigma_l and f_norm >= 0")
    b1 = 2.0 * tau
    b2 = _term(4.0 * sl**p, tau, 2.0 - p)
    b3 = _term(4.0 * ss**p, tau, 2.0 - p) + 4.0 * fn * fn
    b4 = _term(4.0 * ss**p, tau, 2.0 - p) + _term(
        4.0 * alpha ** (1.0 - p) * sl**p * fn * fn, tau, -p
    )
    b5 = _term(
        math.sqrt(2.0) * (sl ** (p - 1.0) + fn ** (p - 1.0)) * ss, tau, 1.0 - p
    ) + _term(2.0 * (sl**p + fn**p) * fn, tau, -p)
    b6 = _term(ss * sl ** (p - 1.0), tau, 1.0 - p) + _term(
        alpha ** (1.0 - p) * sl**p * fn, tau, -p
    )
    return b1, b2, b3, b4, b5, b6


@dataclass(frozen=True)
class ClipErrorReport:
    """Measured clipping-error statistics against their theoretical bounds.

    passes[i] is True/False per bound in BOUND_NAMES order, or None for
    the chi-conditional bounds when chi = 0.  margins are the 3-standard-
    error Monte Carlo allowances (all zero for exact enumeration).
    """

    method: str
    tau: float
    alpha: float
    chi: int
    f_norm: float
    p: float
    sigma_s: float
    sigma_l: float
    measured: dict
    bounds: tuple
    margins: dict = field(default_factory=dict)
    n_samples: Optional[int] = None

    @property
    def passes(self) -> tuple:
        m = self.measured
        g = self.margins.get
        out = [
            m["du_max_norm"] <= self.bounds[0],
            m["du_sq_mean"] <= self.bounds[1] + 3.0 * g("du_sq_mean", 0.0),
            m["du_cov_opnorm"] <= self.bounds[2] + 3.0 * g("du_cov_opnorm", 0.0),
            None,
            m["db_norm"] <= self.bounds[4] + 3.0 * g("db_norm", 0.0),
            None,
        ]
        if self.chi:
            out[3] = m["du_cov_opnorm"] <= self.bounds[3] + 3.0 * g("du_cov_opnorm", 0.0)
            out[5] = m["db_norm"] <= self.bounds[5] + 3.0 * g("db_norm", 0.0)
        return tuple(out)

    def ok(self) -> bool:
        return all(p is not False for p in self.passes)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "tau": self.tau,
            "alpha": self.alpha,
            "chi": self.chi,
            "f_norm": self.f_norm,
            "p": self.p,
            "sigma_s": self.sigma_s,
            "sigma_l": self.sigma_l,
            "n_samples": self.n_samples,
            "measured": dict(self.measured),
            "bounds": {name: b for name, b in zip(BOUND_NAMES, self.bounds)},
            "margins": dict(self.margins),
            "passes": {
                name: p for name, p in zip(BOUND_NAMES, self.passes)
            },
            "ok": self.ok(),
        }


def _report_inputs(oracle: GradOracle, x, grad_true, tau, alpha):
    x = as_vector(x, oracle.d)
    if grad_true is None:
        grad_true = oracle.mean_grad(x)
    grad_true = as_vector(grad_true, oracle.d)
    tau = _check_tau(tau)
    alpha = float(alpha)
    if not (0.0 < alpha < 1.0):
        raise ValueError("clipping margin alpha must lie in (0, 1)")
    fn = float(row_norms(grad_true))
    chi = int((1.0 - alpha) * tau >= fn)
    return x, grad_true, tau, alpha, fn, chi


def clip_error_exact(
    oracle: GradOracle,
    x,
    tau: float,
    alpha: float = 0.5,
    grad_true=None,
) -> ClipErrorReport:
    """Zero-tolerance bound verification by finite-support enumeration.

    The moment pair used for the bounds is computed from the same
    enumeration: sigma_l^p exactly, sigma_s^p as the independent-
    coordinate directional bound capped by sigma_l^p (the supported
    discrete oracles all have independent coordinates).
    """
    x, grad_true, tau, alpha, fn, chi = _report_inputs(
        oracle, x, grad_true, tau, alpha
    )
    supp = oracle.support()
    if supp is None:
        raise ValueError("exact verification requires a finitely supported oracle")
    states, probs = supp
    if states.shape[0] > EXACT_SUPPORT_CAP:
        raise ValueError(
            f"support size {states.shape[0]} exceeds the enumeration cap "
            f"{EXACT_SUPPORT_CAP}"
        )
    X = np.broadcast_to(x, states.shape)
    G = oracle.grad_rows(X, states)

    mean = probs @ G
    if float(row_norms(mean - grad_true)) > 1e-8 * (1.0 + fn):
        raise ValueError("grad_true does not match the oracle mean at x")

    noise = G - grad_true
    p = oracle.noise.p
    sig_l_p = float(probs @ row_norms(noise) ** p)
    coord_m = probs @ np.abs(noise) ** p
    sig_s_p = min(directional_bound_independent(coord_m, p), sig_l_p)
    sigma_l = sig_l_p ** (1.0 / p)
    sigma_s = sig_s_p ** (1.0 / p)

    Gc = clip_batch(G, tau)
    mean_c = probs @ Gc
    du = Gc - mean_c
    du_norms = row_norms(du)
    du_max = float(np.max(du_norms))
    du_sq = float(probs @ du_norms**2)
    cov = (du * probs[:, None]).T @ du
    cov_op = operator_norm(cov)
    db = float(row_norms(mean_c - grad_true))

    measured = {
        "du_max_norm": du_max,
        "du_sq_mean": du_sq,
        "du_cov_opnorm": cov_op,
        "db_norm": db,
    }
    bounds = clip_bounds(p, sigma_s, sigma_l, fn, tau, alpha)
    return ClipErrorReport(
        method="exact-enumeration",
        tau=tau,
        alpha=alpha,
        chi=chi,
        f_norm=fn,
        p=p,
        sigma_s=sigma_s,
        sigma_l=sigma_l,
        measured=measured,
        bounds=bounds,
        margins={},
        n_samples=int(states.shape[0]),
    )


def clip_error_mc(
    oracle: GradOracle,
    x,
    tau: float,
    alpha: float = 0.5,
    n_samples: int = 1_000_000,
    rng: Optional[np.random.Generator] = None,
    grad_true=None,
) -> ClipErrorReport:
    """Monte Carlo bound verification with 3-standard-error margins.

    Two passes of n_samples fresh draws each: pass 1 estimates E[g^c]
    (whose per-coordinate variances give the bias margin), pass 2
    estimates the centered moments around that estimate.  Bounds use the
    oracle's declared (p, sigma_s, sigma_l).
    """
    x, grad_true, tau, alpha, fn, chi = _report_inputs(
        oracle, x, grad_true, tau, alpha
    )
    n = int(n_samples)
    if n < 10_000:
        raise ValueError("Monte Carlo verification needs at least 10^4 samples")
    d = oracle.d
    if n * d > 80_000_000:
        raise ValueError("n_samples too large to hold pass-2 draws in memory")
    if rng is None:
        rng = np.random.default_rng(0)
    chunk = 1 << 15

    # pass 1: mean of the clipped oracle, with per-coordinate variances
    s1 = np.zeros(d)
    s1_sq = np.zeros(d)
    left = n
    while left > 0:
        m = min(chunk, left)
        G = oracle.grad_rows(
            np.broadcast_to(x, (m, d)), oracle.draw(rng, m)
        )
        Gc = clip_batch(G, tau)
        s1 += np.add.reduce(Gc, axis=0)
        s1_sq += np.add.reduce(Gc * Gc, axis=0)
        left -= m
    mean_c = s1 / n
    var_c = np.maximum(s1_sq / n - mean_c**2, 0.0)
    db = float(row_norms(mean_c - grad_true))
    db_margin = math.sqrt(float(np.add.reduce(var_c)) / n)

    # pass 2: centered moments around the pass-1 mean
    rows = []
    left = n
    while left > 0:
        m = min(chunk, left)
        G = oracle.grad_rows(
            np.broadcast_to(x, (m, d)), oracle.draw(rng, m)
        )
        rows.append(clip_batch(G, tau) - mean_c)
        left -= m
    du = np.concatenate(rows, axis=0)
    del rows
    du_norms_sq = np.add.reduce(du * du, axis=-1)
    du_max = float(np.sqrt(np.max(du_norms_sq)))
    du_sq = float(np.mean(du_norms_sq))
    du_sq_margin = float(np.std(du_norms_sq, ddof=1)) / math.sqrt(n)
    cov = du.T @ du / n
    cov_op, top = _sym_eig_max(cov)
    proj_sq = (du @ top) ** 2
    cov_margin = float(np.std(proj_sq, ddof=1)) / math.sqrt(n)

    spec = oracle.noise
    measured = {
        "du_max_norm": du_max,
        "du_sq_mean": du_sq,
        "du_cov_opnorm": float(cov_op),
        "db_norm": db,
    }
    margins = {
        "du_sq_mean": du_sq_margin,
        "du_cov_opnorm": cov_margin,
        "db_norm": db_margin,
    }
    bounds = clip_bounds(spec.p, spec.sigma_s, spec.sigma_l, fn, tau, alpha)
    return ClipErrorReport(
        method="monte-carlo",
        tau=tau,
        alpha=alpha,
        chi=chi,
        f_norm=fn,
        p=spec.p,
        sigma_s=spec.sigma_s,
        sigma_l=spec.sigma_l,
        measured=measured,
        bounds=bounds,
        margins=margins,
        n_samples=n,
    )


# ---------------------------------------------------------------------------
# symmetric operator norm


def _jacobi_eig(A: np.ndarray):
    """Cyclic Jacobi diagonalization; returns (eigenvalues, eigenvectors)."""
    d = A.shape[0]
    B = A.copy()
    V = np.eye(d)
    scale = max(float(np.max(np.abs(A))), 1.0)
    for _ in range(100):
        off = 0.0
        for i in range(d - 1):
            for j in range(i + 1, d):
                off = max(off, abs(B[i, j]))
                if abs(B[i, j]) <= 1e-15 * scale:
                    continue
                theta = (B[j, j] - B[i, i]) / (2.0 * B[i, j])
                t = math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(1.0 + theta * theta)
                )
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot_i = c * B[:, i] - s * B[:, j]
                rot_j = s * B[:, i] + c * B[:, j]
                B[:, i], B[:, j] = rot_i, rot_j
                rot_i = c * B[i, :] - s * B[j, :]
                rot_j = s * B[i, :] + c * B[j, :]
                B[i, :], B[j, :] = rot_i, rot_j
                rot_i = c * V[:, i] - s * V[:, j]
                rot_j = s * V[:, i] + c * V[:, j]
                V[:, i], V[:, j] = rot_i, rot_j
        if off <= 1e-15 * scale:
            break
    return np.diag(B).copy(), V


def _power_eig_max(A: np.ndarray):
    """Dominant |eigenvalue| of symmetric A by power iteration on A^2.

    Squaring removes the +/- lambda ambiguity; the start vector is a
    fixed deterministic ramp so results are reproducible.
    """
    d = A.shape[0]
    v = 1.0 + 1e-3 * np.arange(d)
    v /= float(row_norms(v))
    lam = 0.0
    for _ in range(100_000):
        w = A @ (A @ v)
        nw = float(row_norms(w))
        if nw == 0.0:
            return 0.0, v
        v_new = w / nw
        lam_new = math.sqrt(nw)
        if abs(lam_new - lam) <= 1e-10 * max(lam_new, 1e-300):
            return lam_new, v_new
        v = v_new
        lam = lam_new
    return lam, v


def _sym_eig_max(A: np.ndarray):
    """(largest |eigenvalue|, a corresponding unit vector) of symmetric A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("operator norm requires a square matrix")
    if A.shape[0] == 0:
        raise ValueError("operator norm requires a nonempty matrix")
    if float(np.max(np.abs(A - A.T))) > 1e-10:
        raise ValueError("matrix is not symmetric within 1e-10")
    A = 0.5 * (A + A.T)
    if A.shape[0] <= 64:
        vals, vecs = _jacobi_eig(A)
        k = int(np.argmax(np.abs(vals)))
        return abs(float(vals[k])), vecs[:, k]
    return _power_eig_max(A)


def operator_norm(A: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix.

    Cyclic Jacobi for d <= 64, power iteration on A^2 above that; both
    paths are deterministic.  Raises if A is not symmetric within 1e-10.
    """
    val, _ = _sym_eig_max(A)
    return val
