"""Spherical geometry for categorical diffusion.

A categorical distribution p on the simplex maps to u = sqrt(p) on the
positive orthant of the unit sphere, where the Fisher-Rao metric becomes
the ordinary round metric.  Everything here is plain numpy; the neural
models convert at their boundary.

All point-valued functions broadcast over leading batch axes; vectors live
on the last axis.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeodesic

_EPS = 1e-12


def simplex_to_sphere(p: np.ndarray) -> np.ndarray:
    """Square-root diffeomorphism from the probability simplex to the sphere.

    :param p: points on the simplex, shape (..., d), entries >= 0 summing to 1.
    :return: unit vectors on the positive orthant, same shape.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-9):
        raise ValueError("simplex point has negative coordinates")
    return np.sqrt(np.clip(p, 0.0, None))


def sphere_to_simplex(u: np.ndarray) -> np.ndarray:
    """Inverse of :func:`simplex_to_sphere`: coordinate-wise square."""
    u = np.asarray(u, dtype=np.float64)
    return u * u


def project_tangent(base: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Remove the radial component of v at the sphere point base."""
    inner = np.sum(base * v, axis=-1, keepdims=True)
    return v - inner * base


def exp_map(base: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Riemannian exponential map on the unit sphere.

    exp_x(v) = cos(|v|) x + sin(|v|) v / |v|, with v projected to the
    tangent space at x first.  |v| = 0 returns x itself.

    :param base: unit vectors, shape (..., d).
    :param v: tangent (or ambient, projected here) vectors, same shape.
    """
    v = project_tangent(base, np.asarray(v, dtype=np.float64))
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    # sinc form is stable at norm -> 0: sin(n)/n -> 1
    out = np.cos(norm) * base + np.sinc(norm / np.pi) * v
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def to_orthant(u: np.ndarray) -> np.ndarray:
    """Clamp negative coordinates at zero and renormalize to the sphere."""
    u = np.clip(u, 0.0, None)
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    return u / np.maximum(norm, _EPS)


def geodesic_mean(tau0: np.ndarray, tau1: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Point on the tau0 -> tau1 geodesic at progress alpha = sin(angle travelled).

    mu = (alpha / sin Phi) tau1 + (sqrt(1 - alpha^2) - alpha cos Phi / sin Phi) tau0
    with Phi the angle between the endpoints.  Requires 0 <= alpha <= sin Phi.

    :param alpha: progress, shape broadcastable against the batch axes.
    :raises DegenerateGeodesic: endpoints coincident or antipodal.
    """
    tau0 = np.asarray(tau0, dtype=np.float64)
    tau1 = np.asarray(tau1, dtype=np.float64)
    cos_phi = np.clip(np.sum(tau0 * tau1, axis=-1), -1.0, 1.0)
    sin_phi = np.sqrt(np.clip(1.0 - cos_phi * cos_phi, 0.0, None))
    if np.any(sin_phi < 1e-8):
        raise DegenerateGeodesic("geodesic endpoints coincident or antipodal")
    alpha = np.asarray(alpha, dtype=np.float64)
    a = alpha / sin_phi
    b = np.sqrt(np.clip(1.0 - alpha * alpha, 0.0, None)) - alpha * cos_phi / sin_phi
    return a[..., None] * tau1 + b[..., None] * tau0


def riemannian_normal_sample(
    mu: np.ndarray, rho: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sample from the Riemannian normal: isotropic N(0, rho^2) in the tangent
    space at mu pushed through the exponential map.  rho = 0 returns mu."""
    mu = np.asarray(mu, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    w = rng.standard_normal(mu.shape)
    v = project_tangent(mu, w) * rho[..., None]
    return exp_map(mu, v)


@dataclass(frozen=True)
class GeometricSchedule:
    """Noise rate interpolated geometrically between beta0 and beta_f over [0, 1]."""

    beta0: float = 1e-3
    beta_f: float = 0.2

    @property
    def _log_ratio(self) -> float:
        return float(np.log(self.beta_f / self.beta0))

    def rate(self, t: np.ndarray) -> np.ndarray:
        """beta(t) = beta0 (beta_f / beta0)^t."""
        return self.beta0 * np.exp(self._log_ratio * np.asarray(t, dtype=np.float64))

    def rate_sq_integral(self, t: np.ndarray) -> np.ndarray:
        """A(t) = int_0^t beta(s)^2 ds, closed form."""
        lr = 2.0 * self._log_ratio
        return self.beta0**2 * np.expm1(lr * np.asarray(t, dtype=np.float64)) / lr

    def drift_gain(self, t: np.ndarray) -> np.ndarray:
        """gamma(t) = beta(t)^2 / int_t^1 beta(s)^2 ds.

        This is the bridge pull strength: the rate-squared at t over the
        rate-squared mass remaining.  Diverges as t -> 1.
        """
        lr = 2.0 * self._log_ratio
        remaining = np.expm1(lr * (1.0 - np.asarray(t, dtype=np.float64)))
        return lr / np.maximum(remaining, _EPS)


@dataclass(frozen=True)
class TimeImportance:
    """Stepped proposal density over diffusion time.

    Piecewise-constant weight w_low outside (t_lo, t_hi], w_high inside;
    draws by inverse CDF.  The density integrates the raw weights to
    total = w_low t_lo + w_high (t_hi - t_lo) + w_low (1 - t_hi).
    """

    w_low: float = 1e-4
    w_high: float = 1.0
    t_lo: float = 0.3
    t_hi: float = 0.75

    @property
    def total(self) -> float:
        return (
            self.w_low * self.t_lo
            + self.w_high * (self.t_hi - self.t_lo)
            + self.w_low * (1.0 - self.t_hi)
        )

    def cdf(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        lo_mass = self.w_low * self.t_lo
        mid_mass = lo_mass + self.w_high * (self.t_hi - self.t_lo)
        return np.where(
            t <= self.t_lo,
            self.w_low * t,
            np.where(
                t <= self.t_hi,
                lo_mass + self.w_high * (t - self.t_lo),
                mid_mass + self.w_low * (t - self.t_hi),
            ),
        )

    def density(self, t: np.ndarray) -> np.ndarray:
        """Normalized density q(t); the training loss divides by this."""
        t = np.asarray(t, dtype=np.float64)
        w = np.where((t > self.t_lo) & (t <= self.t_hi), self.w_high, self.w_low)
        return w / self.total

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Inverse-CDF draws; samples lie in (0, 1]."""
        u = rng.uniform(0.0, self.total, size=n)
        lo_mass = self.w_low * self.t_lo
        mid_mass = lo_mass + self.w_high * (self.t_hi - self.t_lo)
        t = np.where(
            u <= lo_mass,
            u / self.w_low,
            np.where(
                u <= mid_mass,
                self.t_lo + (u - lo_mass) / self.w_high,
                self.t_hi + (u - mid_mass) / self.w_low,
            ),
        )
        return np.clip(t, 1e-12, 1.0)


@dataclass
class InterpolantTable:
    """Monte-Carlo summary of the forward geodesic bridge.

    Row i holds (alpha, rho) of the bridge marginal at t = i/K: alpha is the
    mean progress sin(theta_t) along the mask -> class geodesic, rho the
    tangential residual std per dimension around the geodesic mean.
    """

    ts: np.ndarray
    alphas: np.ndarray
    rhos: np.ndarray
    schedule: GeometricSchedule = field(default_factory=GeometricSchedule)
    dim: int = 145
    n_mc: int = 0
    seed: int = 0

    def lookup(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation of (alpha_t, rho_t) at arbitrary t in [0, 1]."""
        t = np.asarray(t, dtype=np.float64)
        return np.interp(t, self.ts, self.alphas), np.interp(t, self.ts, self.rhos)

    def _payload(self) -> dict:
        return {
            "ts": [float(x) for x in self.ts],
            "alphas": [float(x) for x in self.alphas],
            "rhos": [float(x) for x in self.rhos],
            "beta0": self.schedule.beta0,
            "beta_f": self.schedule.beta_f,
            "dim": self.dim,
            "n_mc": self.n_mc,
            "seed": self.seed,
        }

    def checksum(self) -> str:
        blob = json.dumps(self._payload(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_json(self) -> str:
        payload = self._payload()
        payload["checksum"] = self.checksum()
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "InterpolantTable":
        payload = json.loads(text)
        stated = payload.pop("checksum", None)
        table = cls(
            ts=np.asarray(payload["ts"], dtype=np.float64),
            alphas=np.asarray(payload["alphas"], dtype=np.float64),
            rhos=np.asarray(payload["rhos"], dtype=np.float64),
            schedule=GeometricSchedule(payload["beta0"], payload["beta_f"]),
            dim=int(payload["dim"]),
            n_mc=int(payload["n_mc"]),
            seed=int(payload["seed"]),
        )
        if stated is not None and stated != table.checksum():
            raise ValueError("interpolant table checksum mismatch")
        return table


def _log_map_to(target: np.ndarray, states: np.ndarray) -> np.ndarray:
    """log_x(target) batched over states: geodesic distance times unit tangent."""
    c = np.clip(np.sum(states * target, axis=-1, keepdims=True), -1.0, 1.0)
    dist = np.arccos(c)
    denom = np.sqrt(np.clip(1.0 - c * c, _EPS, None))
    direction = (target - c * states) / denom
    # already at (or numerically on top of) the target: nothing to pull
    return np.where(c > 1.0 - 1e-12, 0.0, dist * direction)


def precompute_interpolant_table(
    K: int = 64,
    n_mc: int = 2048,
    schedule: GeometricSchedule | None = None,
    dim: int = 145,
    seed: int = 0,
    substeps: int = 8,
) -> InterpolantTable:
    """Simulate forward geodesic random-walk bridges and tabulate (alpha, rho).

    Bridges run from the mask one-hot e_{dim-1} at t=0 to a class one-hot e_0
    at t=1 (orthogonal endpoints, as all distinct one-hots are).  Per substep
    the state takes the bridge drift gamma(t) log_tau(tau1) dt plus tangential
    noise beta(t) sqrt(dt).  Noise is antithetic over pairs so the recorded
    means are stable at small t where increments sit below raw MC noise.

    Row 0 is pinned to (0, 0); alpha is monotone by construction.
    """
    schedule = schedule or GeometricSchedule()
    rng = np.random.default_rng(seed)
    half = max(1, n_mc // 2)
    tau0 = np.zeros(dim)
    tau0[dim - 1] = 1.0
    tau1 = np.zeros(dim)
    tau1[0] = 1.0

    states = np.tile(tau0, (2 * half, 1))
    dt = 1.0 / (K * substeps)
    ts = np.arange(K + 1) / K
    alphas = np.zeros(K + 1)
    rhos = np.zeros(K + 1)

    def record(i: int) -> None:
        a = np.sum(states * tau0, axis=-1)
        b = np.sum(states * tau1, axis=-1)
        theta = np.arctan2(np.clip(b, 0.0, None), np.clip(a, 0.0, None))
        alpha = float(np.mean(np.sin(theta)))
        alphas[i] = alpha
        mu = geodesic_mean(tau0, tau1, np.asarray(alpha))
        resid = project_tangent(mu, states - mu)
        rhos[i] = float(np.sqrt(np.mean(np.sum(resid * resid, axis=-1)) / (dim - 1)))

    for i in range(K):
        for s in range(substeps):
            t = (i * substeps + s) * dt
            pull = np.minimum(schedule.drift_gain(t) * dt, 1.0)
            w = rng.standard_normal((half, dim))
            noise = np.concatenate([w, -w], axis=0) * (schedule.rate(t) * np.sqrt(dt))
            v = pull * _log_map_to(tau1, states) + project_tangent(states, noise)
            states = to_orthant(exp_map(states, v))
        record(i + 1)

    alphas[0] = 0.0
    rhos[0] = 0.0
    alphas[K] = min(alphas[K], 1.0)
    return InterpolantTable(
        ts=ts, alphas=alphas, rhos=rhos, schedule=schedule, dim=dim, n_mc=2 * half, seed=seed
    )
