"""Topology-conditioned diffusion over the full design/observation vector.

Every design is a fixed sequence of 136 slots (126 parameters + 10
observation channels).  A presence mask zeroes the slots a topology does
not have; a condition mask pins observed slots to their values.  The
transformer denoises only the present, unconditioned slots.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .checkpoints import (
    Checkpoint,
    StandardizationStats,
    adam_arrays,
    ema_init,
    ema_update,
    load_arrays,
    load_ema,
    module_arrays,
    restore_adam,
)
from .design_space import FEATURE_KEYS, N_FEATURES, mask_for_topology
from .errors import NonFiniteLoss, SingularTime
from .mixedit import continuous_drift
from .nets import GaussianFourierEmbedding, SmallKeyAttention, sinusoidal_embedding

MASK_MIXTURE_VERSION = 1


def feature_key_digest() -> str:
    return hashlib.sha256("\n".join(FEATURE_KEYS).encode()).hexdigest()


@dataclass(frozen=True)
class MaskeDiTConfig:
    d_theta: int = N_FEATURES
    d_x: int = 10
    layers: int = 16
    heads: int = 2
    key_size: int = 10
    widening: int = 3
    d_id: int = 64
    d_value: int = 64
    d_cond: int = 32
    d_time: int = 64
    t_min: float = 1e-3
    steps: int = 500
    sigma_min: float = 1e-4
    sigma_max: float = 15.0
    epochs: int = 500
    batch_size: int = 256
    lr: float = 1e-4
    ema_decay: float = 0.999
    integrator: str = "sde"
    x1_clip: float | None = 6.0

    def __post_init__(self):
        for name in ("d_theta", "d_x", "layers", "heads", "key_size", "d_id",
                     "d_value", "d_cond", "d_time"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.integrator not in ("sde", "alg4"):
            raise ValueError("integrator must be 'sde' or 'alg4'")
        if not 0.0 < self.t_min < 1.0:
            raise ValueError("t_min must lie in (0, 1)")

    @property
    def d_max(self) -> int:
        return self.d_theta + self.d_x

    @property
    def token_dim(self) -> int:
        return self.d_id + self.d_value + self.d_cond

    @classmethod
    def desk(cls, **overrides) -> "MaskeDiTConfig":
        base = dict(layers=4, epochs=60, ema_decay=0.995)
        base.update(overrides)
        return cls(**base)


def sample_condition_mask(
    rng: np.random.Generator, d_theta: int = N_FEATURES, d_x: int = 10
) -> np.ndarray:
    """One draw from the five-arm conditioning mixture."""
    d = d_theta + d_x
    arm = int(rng.integers(5))
    if arm == 0:
        return (rng.random(d) < 0.3).astype(np.float64)
    if arm == 1:
        return (rng.random(d) < 0.7).astype(np.float64)
    if arm == 2:
        return np.zeros(d)
    if arm == 3:
        return np.concatenate([np.zeros(d_theta), np.ones(d_x)])
    return np.concatenate([np.ones(d_theta), np.zeros(d_x)])


def combined_mask(m_c: np.ndarray, m_tau: np.ndarray) -> np.ndarray:
    """Loss support: present and not conditioned."""
    m_c = np.asarray(m_c, dtype=np.float64)
    m_tau = np.asarray(m_tau, dtype=np.float64)
    if m_c.shape != m_tau.shape:
        raise ValueError("mask lengths differ")
    return (1.0 - m_c) * m_tau


def topology_mask(tau, cfg: MaskeDiTConfig) -> np.ndarray:
    """Presence mask over all slots; observation slots are always present."""
    if hasattr(tau, "index"):
        if cfg.d_theta != N_FEATURES:
            raise ValueError("Topology masks need the full parameter layout")
        theta_mask = mask_for_topology(tau).astype(np.float64)
    else:
        theta_mask = np.asarray(tau, dtype=np.float64)
        if theta_mask.shape == (cfg.d_max,):
            if not np.all(theta_mask[cfg.d_theta:] == 1.0):
                raise ValueError("observation slots must be present")
            return theta_mask
        if theta_mask.shape != (cfg.d_theta,):
            raise ValueError("presence mask has the wrong length")
    return np.concatenate([theta_mask, np.ones(cfg.d_x)])


def noise_to_score(eps_hat: np.ndarray, t: float) -> np.ndarray:
    """Convert a noise prediction to a score: s = -eps/beta(t)."""
    beta = math.sqrt(max(1.0 - t * t, 0.0))
    if beta < 1e-8:
        raise SingularTime(f"score undefined at t={t} (beta -> 0)")
    return -np.asarray(eps_hat, dtype=np.float64) / beta


class MaskeDiT(nn.Module):
    def __init__(self, cfg: MaskeDiTConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.token_dim
        self.id_embed = nn.Parameter(torch.randn(cfg.d_max, cfg.d_id) * 0.02)
        self.register_buffer(
            "id_sinusoid",
            sinusoidal_embedding(
                torch.arange(cfg.d_max, dtype=torch.get_default_dtype()),
                cfg.d_id,
            ),
        )
        self.value_in = nn.Linear(1, cfg.d_value)
        self.cond_in = nn.Linear(cfg.d_cond, cfg.d_cond)
        self.time_embed = GaussianFourierEmbedding(cfg.d_time)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.d_time, cfg.d_time),
            nn.SiLU(),
            nn.Linear(cfg.d_time, cfg.d_time),
        )
        self.time_inject = nn.ModuleList(
            nn.Linear(cfg.d_time, d) for _ in range(cfg.layers)
        )
        self.ln1 = nn.ModuleList(nn.LayerNorm(d) for _ in range(cfg.layers))
        self.ln2 = nn.ModuleList(nn.LayerNorm(d) for _ in range(cfg.layers))
        self.attn = nn.ModuleList(
            SmallKeyAttention(d, cfg.heads, cfg.key_size)
            for _ in range(cfg.layers)
        )
        self.ffn = nn.ModuleList(
            nn.Sequential(
                nn.Linear(d, cfg.widening * d),
                nn.GELU(),
                nn.Linear(cfg.widening * d, d),
            )
            for _ in range(cfg.layers)
        )
        self.head = nn.Linear(d, 1)

    def tokenize(
        self, z: torch.Tensor, m_c: torch.Tensor, values: torch.Tensor
    ) -> torch.Tensor:
        """Per-slot tokens: identity | value | condition channels."""
        b = z.shape[0]
        ident = (self.id_embed + self.id_sinusoid).expand(b, -1, -1)
        val = self.value_in(z[..., None])
        cond_feat = sinusoidal_embedding(values, self.cfg.d_cond, max_period=100.0)
        cond = self.cond_in(cond_feat) * m_c[..., None]
        return torch.cat([ident, val, cond], dim=-1)

    @staticmethod
    def attention_support(m_c: torch.Tensor, m_tau: torch.Tensor) -> torch.Tensor:
        """Edges present->present, minus any edge that would let an
        observed token read an unobserved one; self-edges always on."""
        mt = m_tau > 0.5
        mc = m_c > 0.5
        allowed = mt[:, :, None] & mt[:, None, :]
        allowed &= ~(mc[:, :, None] & ~mc[:, None, :])
        eye = torch.eye(m_tau.shape[1], dtype=torch.bool, device=m_tau.device)
        return allowed | eye

    def forward(
        self,
        z_t: torch.Tensor,
        values: torch.Tensor,
        m_c: torch.Tensor,
        m_tau: torch.Tensor,
        t: torch.Tensor,
    ) -> torch.Tensor:
        keep = m_tau[..., None]
        allowed = self.attention_support(m_c, m_tau)
        t_feat = self.time_mlp(self.time_embed(t))
        h = self.tokenize(z_t, m_c, values) * keep
        for i in range(self.cfg.layers):
            h = (h + self.time_inject[i](t_feat)[:, None, :]) * keep
            h = h + self.attn[i](self.ln1[i](h), allowed)
            h = h * keep
            h = h + self.ffn[i](self.ln2[i](h))
            h = h * keep
        return self.head(h).squeeze(-1) * m_tau


def masked_denoising_loss(
    eps_hat: torch.Tensor, eps: torch.Tensor, m: torch.Tensor
) -> torch.Tensor:
    """Mean squared error over active slots, averaged per sample; samples
    with an empty mask are excluded from the normalizer."""
    active = m.sum(dim=1)
    per = (m * (eps_hat - eps) ** 2).sum(dim=1) / torch.clamp(active, min=1.0)
    nonempty = (active > 0).to(per.dtype)
    return (per * nonempty).sum() / torch.clamp(nonempty.sum(), min=1.0)


@dataclass
class MaskeDiTTrainResult:
    model: MaskeDiT
    ema: dict[str, np.ndarray]
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int
    best_val: float
    step: int
    opt: dict[str, np.ndarray] = field(default_factory=dict)


def _prepare_rows(dataset, cfg: MaskeDiTConfig):
    rows = dataset.rows
    theta = np.stack([np.asarray(r.theta, dtype=np.float64) for r in rows])
    x = np.stack([np.asarray(r.x, dtype=np.float64) for r in rows])
    m_tau = np.stack(
        [
            np.concatenate(
                [np.asarray(r.mask, dtype=np.float64), np.ones(cfg.d_x)]
            )
            for r in rows
        ]
    )
    theta_std = (theta - np.asarray(dataset.theta_mean)) / np.asarray(
        dataset.theta_std
    )
    theta_std = np.where(np.isnan(theta_std), 0.0, theta_std)
    x_std = (x - np.asarray(dataset.x_mean)) / np.asarray(dataset.x_std)
    z1 = np.concatenate([theta_std, x_std], axis=1)
    if z1.shape[1] != cfg.d_max:
        raise ValueError(
            f"dataset rows have {z1.shape[1]} slots, config expects {cfg.d_max}"
        )
    return z1, m_tau


def _batch_inputs(z1, m_tau, idx, cfg, rng):
    b = len(idx)
    t = rng.uniform(cfg.t_min, 1.0, b)
    m_c = np.stack(
        [sample_condition_mask(rng, cfg.d_theta, cfg.d_x) for _ in range(b)]
    )
    eps = rng.standard_normal((b, cfg.d_max))
    z_clean = z1[idx]
    z_t = t[:, None] * z_clean + np.sqrt(1.0 - t**2)[:, None] * eps
    z_in = np.where(m_c > 0, z_clean, z_t)
    return z_in, z_clean, m_c, m_tau[idx], t, eps


def train(
    dataset,
    cfg: MaskeDiTConfig,
    seed: int,
    init: Checkpoint | None = None,
    log=None,
    snapshot=None,
) -> MaskeDiTTrainResult:
    """Fit the masked denoiser with a 2:1 train/validation split; the
    returned parameters are the ones with the lowest validation loss.
    snapshot(epoch, result) sees the live state after every epoch."""
    z1, m_tau_all = _prepare_rows(dataset, cfg)
    n = len(z1)
    split_rng = np.random.default_rng(np.random.SeedSequence([seed, 1 << 20]))
    perm = split_rng.permutation(n)
    n_val = n // 3
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]

    torch.manual_seed(seed)
    model = MaskeDiT(cfg)
    dtype = next(model.parameters()).dtype
    if init is not None:
        load_arrays(model, init.params)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    shadow = ema_init(model)
    if init is not None:
        for name, arr in init.ema.items():
            shadow[name] = torch.as_tensor(arr, dtype=dtype)
        restore_adam(opt, model, init.opt)
    step = init.step if init is not None else 0

    # fixed validation interpolants so epoch losses are comparable
    val_rng = np.random.default_rng(np.random.SeedSequence([seed, (1 << 20) + 1]))
    val_batches = []
    for start in range(0, len(val_idx), cfg.batch_size):
        idx = val_idx[start : start + cfg.batch_size]
        if len(idx):
            val_batches.append(_batch_inputs(z1, m_tau_all, idx, cfg, val_rng))

    def to_t(a):
        return torch.as_tensor(a, dtype=dtype)

    def eval_val() -> float:
        model.eval()
        total, count = 0.0, 0
        with torch.no_grad():
            for z_in, z_clean, m_c, m_tau, t, eps in val_batches:
                eps_hat = model(to_t(z_in), to_t(z_clean), to_t(m_c), to_t(m_tau), to_t(t))
                m = combined_mask(m_c, m_tau)
                loss = masked_denoising_loss(eps_hat, to_t(eps), to_t(m))
                total += float(loss) * len(z_in)
                count += len(z_in)
        model.train()
        return total / max(count, 1)

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = math.inf
    best_epoch = -1
    best_params: dict[str, torch.Tensor] = {}
    best_ema: dict[str, torch.Tensor] = {}

    # resumed runs keep advancing the per-epoch RNG streams
    epoch0 = step // max(1, math.ceil(len(train_idx) / cfg.batch_size))
    for epoch in range(epoch0, epoch0 + cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([seed, epoch])
        ).permutation(train_idx)
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch_seed = (seed, epoch, b)
            rng = np.random.default_rng(np.random.SeedSequence(list(batch_seed)))
            z_in, z_clean, m_c, m_tau, t, eps = _batch_inputs(
                z1, m_tau_all, idx, cfg, rng
            )
            eps_hat = model(to_t(z_in), to_t(z_clean), to_t(m_c), to_t(m_tau), to_t(t))
            m = combined_mask(m_c, m_tau)
            loss = masked_denoising_loss(eps_hat, to_t(eps), to_t(m))
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at step {step} (batch seed {batch_seed})",
                    batch_seed=batch_seed,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            ema_update(shadow, model, cfg.ema_decay)
            step += 1
            train_losses.append(loss.item())
        val = eval_val()
        val_losses.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = {
                k: v.detach().clone() for k, v in model.state_dict().items()
            }
            best_ema = {k: v.clone() for k, v in shadow.items()}
        if log is not None:
            log(epoch, train_losses[-1], val)
        if snapshot is not None:
            # live weights, not the best-val restore: a resumed run must
            # continue the trajectory exactly
            snapshot(
                epoch,
                MaskeDiTTrainResult(
                    model=model,
                    ema={k: v.double().numpy() for k, v in shadow.items()},
                    train_losses=train_losses,
                    val_losses=val_losses,
                    best_epoch=best_epoch,
                    best_val=best_val,
                    step=step,
                    opt=adam_arrays(opt, model),
                ),
            )

    if best_params:
        model.load_state_dict(best_params)
    else:
        best_ema = shadow
    return MaskeDiTTrainResult(
        model=model,
        ema={k: v.double().numpy() for k, v in best_ema.items()},
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
        best_val=best_val,
        step=step,
        opt=adam_arrays(opt, model),
    )


def make_denoiser(model: MaskeDiT, m_c, values, m_tau):
    """Wrap a model as a numpy (z, u) -> eps_hat map with fixed masks."""
    model.eval()
    dtype = next(model.parameters()).dtype
    m_c = np.asarray(m_c, dtype=np.float64)
    values = np.where(m_c > 0, np.asarray(values, dtype=np.float64), 0.0)
    m_tau = np.asarray(m_tau, dtype=np.float64)

    def fn(z: np.ndarray, u: float) -> np.ndarray:
        n = z.shape[0]
        with torch.no_grad():
            out = model(
                torch.as_tensor(z, dtype=dtype),
                torch.as_tensor(np.tile(values, (n, 1)), dtype=dtype),
                torch.as_tensor(np.tile(m_c, (n, 1)), dtype=dtype),
                torch.as_tensor(np.tile(m_tau, (n, 1)), dtype=dtype),
                torch.full((n,), float(u), dtype=dtype),
            )
        return out.double().numpy()

    return fn


def em_walk(
    denoise,
    cfg: MaskeDiTConfig,
    n: int,
    d: int,
    m_c: np.ndarray,
    values: np.ndarray,
    m_tau: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """K annealed Euler-Maruyama steps from white noise.

    The noise ladder sigma(t_k) runs hot to cold on the annealing clock
    t_k = 1-(k/K)(1-t_min) while the denoiser is queried at the ascending
    interpolation time u_k = t_min + k*du; conditioning is imposed before
    the first step and again after every step.
    """
    m_c = np.asarray(m_c, dtype=np.float64)
    m_tau = np.asarray(m_tau, dtype=np.float64)
    values = np.where(m_c > 0, np.asarray(values, dtype=np.float64), 0.0)
    z = rng.standard_normal((n, d)) * m_tau
    z = np.where(m_c > 0, values, z)
    K = cfg.steps
    du = (1.0 - cfg.t_min) / K
    for k in range(K):
        t_k = 1.0 - (k / K) * (1.0 - cfg.t_min)
        u_k = cfg.t_min + k * du
        sig = cfg.sigma_min * (cfg.sigma_max / cfg.sigma_min) ** t_k
        eps_hat = denoise(z, u_k)
        w = rng.standard_normal((n, d))
        if cfg.integrator == "sde":
            # drift time floored at the step size so the first update cannot
            # overshoot; clean-estimate clipping reins in runaway chains
            u_eff = max(u_k, du)
            drift = continuous_drift(z, eps_hat, u_eff, sig * sig)
            if cfg.x1_clip is not None:
                z1_hat = (z - math.sqrt(1.0 - u_eff * u_eff) * eps_hat) / u_eff
                drift = drift - (z1_hat - np.clip(z1_hat, -cfg.x1_clip, cfg.x1_clip))
            z_new = z + drift * du + sig * math.sqrt(du) * w
        else:
            s = noise_to_score(eps_hat, u_k)
            z_new = z + sig * sig * s / K + sig * math.sqrt(1.0 / K) * w
        z = z_new * m_tau
        z = np.where(m_c > 0, values, z)
    return z


def sample(
    model: MaskeDiT,
    cfg: MaskeDiTConfig,
    tau,
    condition: tuple[np.ndarray, np.ndarray] | None = None,
    seed: int = 0,
    n: int = 1,
) -> np.ndarray:
    """Draw standardized slot vectors for a topology.

    condition is (M_C, values) with values already standardized; absent
    slots come back as NaN.
    """
    m_tau = topology_mask(tau, cfg)
    if condition is None:
        m_c = np.zeros(cfg.d_max)
        values = np.zeros(cfg.d_max)
    else:
        m_c, values = condition
        m_c = np.asarray(m_c, dtype=np.float64)
        if m_c.shape != (cfg.d_max,):
            raise ValueError("condition mask has the wrong length")
        if np.any((m_c > 0) & (m_tau == 0)):
            raise ValueError("cannot condition on a slot the topology lacks")
        values = np.where(m_c > 0, np.asarray(values, dtype=np.float64), 0.0)
        if not np.all(np.isfinite(values)):
            raise ValueError("conditioned values must be finite")
    rng = np.random.default_rng(seed)
    fn = make_denoiser(model, m_c, values, m_tau)
    z = em_walk(fn, cfg, n, cfg.d_max, m_c, values, m_tau, rng)
    return np.where(m_tau > 0, z, np.nan)


def make_checkpoint(
    result: MaskeDiTTrainResult,
    cfg: MaskeDiTConfig,
    stats: StandardizationStats,
) -> Checkpoint:
    return Checkpoint(
        kind="maskedit",
        config=asdict(cfg),
        stats=stats,
        schedule={
            "alpha": "t",
            "beta": "sqrt(1-t^2)",
            "sigma_min": cfg.sigma_min,
            "sigma_max": cfg.sigma_max,
            "t_min": cfg.t_min,
            "steps": cfg.steps,
        },
        step=result.step,
        params=module_arrays(result.model),
        ema=result.ema,
        extra={
            "mask_mixture_version": MASK_MIXTURE_VERSION,
            "feature_key_digest": feature_key_digest(),
            "best_epoch": result.best_epoch,
            "best_val": result.best_val,
        },
        opt=result.opt,
    )


def model_from_checkpoint(
    ckpt: Checkpoint, use_ema: bool = True
) -> tuple[MaskeDiT, MaskeDiTConfig, StandardizationStats]:
    if ckpt.kind != "maskedit":
        raise ValueError(f"checkpoint kind {ckpt.kind!r} is not 'maskedit'")
    cfg = MaskeDiTConfig(**ckpt.config)
    model = MaskeDiT(cfg)
    load_arrays(model, ckpt.params)
    if use_ema:
        load_ema(model, ckpt.ema)
    return model, cfg, ckpt.stats
