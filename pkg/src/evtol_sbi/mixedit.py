"""Joint diffusion model over topology class and observation vector.

The discrete topology lives on the positive orthant of the 144-sphere
(classes plus one mask slot), the observation in standardized Euclidean
space.  One transformer predicts both the class probabilities and the
continuous noise; training interpolates each head on its own clock,
sampling runs both chains side by side with Euler steps.
"""

from __future__ import annotations

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
from .design_space import VOCAB_SIZE, topology_from_index
from .errors import NonFiniteLoss, SingularTime
from .manifold import (
    GeometricSchedule,
    TimeImportance,
    exp_map,
    geodesic_mean,
    precompute_interpolant_table,
    project_tangent,
    riemannian_normal_sample,
    sphere_to_simplex,
)
from .nets import AdaLNBlock, sinusoidal_embedding


@dataclass(frozen=True)
class MixeDiTConfig:
    vocab: int = VOCAB_SIZE
    d_x: int = 10
    hidden: int = 128
    heads: int = 4
    blocks: int = 4
    gamma: float = 0.9
    lr: float = 3e-4
    ema_decay: float = 0.995
    clip_norm: float = 1.0
    batch_size: int = 256
    epochs: int = 60
    sample_steps: int = 250
    sigma_t: float = 2.5
    discrete_noise: str = "schedule"
    beta0: float = 1e-3
    beta_f: float = 0.2
    t_floor: float | None = None
    x1_clip: float | None = 6.0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for name in ("vocab", "d_x", "hidden", "heads", "blocks"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.discrete_noise not in ("schedule", "constant"):
            raise ValueError("discrete_noise must be 'schedule' or 'constant'")

    @classmethod
    def paper(cls, **overrides) -> "MixeDiTConfig":
        base = dict(hidden=768, heads=12, blocks=12, ema_decay=0.9999)
        base.update(overrides)
        return cls(**base)


@dataclass
class MixeDiTOutput:
    p_hat: torch.Tensor
    eps_hat: torch.Tensor
    logits: torch.Tensor


class MixeDiT(nn.Module):
    def __init__(self, cfg: MixeDiTConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden
        self.tau_in = nn.Linear(cfg.vocab, h)
        self.x_in = nn.Linear(cfg.d_x, h)
        self.time_mlp = nn.Sequential(
            nn.Linear(2 * h, h), nn.SiLU(), nn.Linear(h, h)
        )
        self.blocks = nn.ModuleList(
            AdaLNBlock(h, cfg.heads) for _ in range(cfg.blocks)
        )
        self.ln_out = nn.LayerNorm(h, elementwise_affine=False)
        self.mod_out = nn.Linear(h, 2 * h)
        nn.init.zeros_(self.mod_out.weight)
        nn.init.zeros_(self.mod_out.bias)
        self.head_tau = nn.Linear(h, cfg.vocab)
        self.head_x = nn.Linear(h, cfg.d_x)

    def forward(self, tau_t, x_t, t_tau, t_x) -> MixeDiTOutput:
        h = self.cfg.hidden
        tok = self.tau_in(tau_t) + self.x_in(x_t)
        emb = torch.cat(
            [sinusoidal_embedding(t_tau, h), sinusoidal_embedding(t_x, h)],
            dim=-1,
        )
        cond = self.time_mlp(emb)
        seq = tok[:, None, :]
        for block in self.blocks:
            seq = block(seq, cond)
        shift, scale = self.mod_out(torch.nn.functional.silu(cond)).chunk(
            2, dim=-1
        )
        out = self.ln_out(seq)[:, 0, :] * (1.0 + scale) + shift
        logits = self.head_tau(out)
        eps_hat = self.head_x(out)
        return MixeDiTOutput(
            p_hat=torch.softmax(logits, dim=-1), eps_hat=eps_hat, logits=logits
        )


def discrete_drift(p_hat, tau_t, gamma_t) -> np.ndarray:
    """Tangent drift toward the predicted class mixture.

    Each class k pulls along the geodesic from tau toward the vertex e_k,
    weighted by its probability; terms where tau already sits at a vertex
    have a removable zero limit and are skipped.
    """
    p = np.asarray(p_hat, dtype=np.float64)
    tau = np.asarray(tau_t, dtype=np.float64)
    dots = np.clip(tau, -1.0, 1.0)
    safe = np.abs(dots) <= 1.0 - 1e-8
    denom = np.sqrt(np.clip(1.0 - dots * dots, 1e-300, None))
    coef = np.where(safe, p * np.arccos(dots) / denom, 0.0)
    coef = coef * np.asarray(gamma_t, dtype=np.float64)[..., None]
    eta = coef - np.sum(coef * tau, axis=-1, keepdims=True) * tau
    return project_tangent(tau, eta)


def continuous_drift(x_t, eps_hat, t: float, sigma_t: float) -> np.ndarray:
    """Probability-flow drift for the linear interpolant alpha=t,
    beta=sqrt(1-t^2), with sigma_t the injected variance rate."""
    if t < 1e-6:
        raise SingularTime(f"continuous drift undefined at t={t} (alpha -> 0)")
    if t >= 1.0 - 1e-12:
        raise SingularTime(f"continuous drift undefined at t={t} (beta -> 0)")
    x = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps_hat, dtype=np.float64)
    beta = math.sqrt(1.0 - t * t)
    beta_dot = -t / beta
    # grouped to avoid the beta^2/t - t cancellation of the naive form
    return (x - beta * eps) / t + beta_dot * eps - 0.5 * sigma_t * eps / beta


def training_loss(
    model: MixeDiT,
    cfg: MixeDiTConfig,
    tau_t: torch.Tensor,
    x_t: torch.Tensor,
    t_tau: torch.Tensor,
    t_x: torch.Tensor,
    labels: torch.Tensor,
    eps: torch.Tensor,
    weights: torch.Tensor,
) -> torch.Tensor:
    """Weighted cross-entropy on the discrete head plus noise MSE on the
    continuous head, combined with weight gamma."""
    out = model(tau_t, x_t, t_tau, t_x)
    logp = torch.log_softmax(out.logits, dim=-1)
    picked = logp.gather(1, labels[:, None]).squeeze(1)
    loss_rd = (-weights * picked).mean()
    loss_csm = ((out.eps_hat - eps) ** 2).sum(dim=1).mean()
    return cfg.gamma * loss_rd + (1.0 - cfg.gamma) * loss_csm


@dataclass
class MixeDiTTrainResult:
    model: MixeDiT
    ema: dict[str, np.ndarray]
    losses: list[float]
    step: int
    opt: dict[str, np.ndarray] = field(default_factory=dict)


def _onehot(labels: np.ndarray, vocab: int) -> np.ndarray:
    out = np.zeros((len(labels), vocab), dtype=np.float64)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def train(
    dataset,
    table,
    cfg: MixeDiTConfig,
    seed: int,
    init: Checkpoint | None = None,
    log=None,
    snapshot=None,
) -> MixeDiTTrainResult:
    """Fit the joint model on (topology index, observation) pairs.

    The discrete clock is drawn from the importance density q, the
    continuous clock uniformly; the same batch seed reproduces the same
    interpolants bit for bit.  snapshot(epoch, result) is called after
    every epoch with the live state so callers can checkpoint long runs.
    """
    rows = dataset.rows
    labels_all = np.asarray([r.topology_index for r in rows], dtype=np.int64)
    if labels_all.min() < 0 or labels_all.max() >= cfg.vocab - 1:
        raise ValueError("topology index outside the class range (last slot is the mask)")
    x_all = np.stack([np.asarray(r.x, dtype=np.float64) for r in rows])
    x_std = (x_all - np.asarray(dataset.x_mean)) / np.asarray(dataset.x_std)

    if table is None:
        table = precompute_interpolant_table(dim=cfg.vocab)

    torch.manual_seed(seed)
    model = MixeDiT(cfg)
    dtype = next(model.parameters()).dtype
    if init is not None:
        load_arrays(model, init.params)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    shadow = ema_init(model)
    if init is not None:
        for name, arr in init.ema.items():
            shadow[name] = torch.as_tensor(arr, dtype=dtype)
        restore_adam(opt, model, init.opt)
    importance = TimeImportance()
    step = init.step if init is not None else 0
    n = len(rows)
    losses: list[float] = []

    tau0_row = np.zeros(cfg.vocab, dtype=np.float64)
    tau0_row[cfg.vocab - 1] = 1.0

    # resumed runs keep advancing the per-epoch RNG streams
    epoch0 = step // max(1, math.ceil(n / cfg.batch_size))
    for epoch in range(epoch0, epoch0 + cfg.epochs):
        perm = np.random.default_rng(
            np.random.SeedSequence([seed, epoch])
        ).permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            batch_seed = (seed, epoch, b)
            rng = np.random.default_rng(np.random.SeedSequence(list(batch_seed)))

            t_tau = importance.sample(rng, len(idx))
            t_x = rng.uniform(0.0, 1.0, len(idx))
            eps = rng.standard_normal((len(idx), cfg.d_x))

            tau1 = _onehot(labels_all[idx], cfg.vocab)
            tau0 = np.tile(tau0_row, (len(idx), 1))
            alpha, rho = table.lookup(t_tau)
            mu = geodesic_mean(tau0, tau1, alpha)
            tau_t = riemannian_normal_sample(mu, rho, rng)
            x_t = t_x[:, None] * x_std[idx] + np.sqrt(1.0 - t_x**2)[:, None] * eps
            weights = 1.0 / importance.density(t_tau)

            loss = training_loss(
                model,
                cfg,
                torch.as_tensor(tau_t, dtype=dtype),
                torch.as_tensor(x_t, dtype=dtype),
                torch.as_tensor(t_tau, dtype=dtype),
                torch.as_tensor(t_x, dtype=dtype),
                torch.as_tensor(labels_all[idx]),
                torch.as_tensor(eps, dtype=dtype),
                torch.as_tensor(weights, dtype=dtype),
            )
            if not torch.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at step {step} (batch seed {batch_seed})",
                    batch_seed=batch_seed,
                )
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            ema_update(shadow, model, cfg.ema_decay)
            step += 1
            losses.append(loss.item())
        if log is not None:
            log(epoch, losses[-1])
        if snapshot is not None:
            snapshot(epoch, _result(model, shadow, losses, step, opt))

    return _result(model, shadow, losses, step, opt)


def _result(model, shadow, losses, step, opt) -> MixeDiTTrainResult:
    return MixeDiTTrainResult(
        model=model,
        ema={k: v.double().numpy() for k, v in shadow.items()},
        losses=losses,
        step=step,
        opt=adam_arrays(opt, model),
    )


def make_denoiser(model: MixeDiT):
    """Wrap a model as a numpy (tau, x, t_tau, t_x) -> (p_hat, eps_hat) map."""
    model.eval()
    dtype = next(model.parameters()).dtype

    def fn(tau, x, t_tau, t_x):
        with torch.no_grad():
            out = model(
                torch.as_tensor(tau, dtype=dtype),
                torch.as_tensor(x, dtype=dtype),
                torch.as_tensor(t_tau, dtype=dtype),
                torch.as_tensor(t_x, dtype=dtype),
            )
        return (
            out.p_hat.double().numpy(),
            out.eps_hat.double().numpy(),
        )

    return fn


def euler_walk(
    denoise,
    cfg: MixeDiTConfig,
    n: int,
    rng: np.random.Generator,
    condition: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the joint Euler sampler from the mask vertex and N(0, I).

    denoise maps (tau [n,V], x [n,Dx], t_tau [n], t_x [n]) to
    (p_hat [n,V], eps_hat [n,Dx]) in numpy.  With a condition (already
    standardized) x stays pinned and its clock sits at 1; otherwise both
    clocks advance together.  Returns the final (tau on the sphere,
    x standardized).
    """
    V, M = cfg.vocab, cfg.sample_steps
    dt = 1.0 / M
    # flooring the drift time at the step size keeps the first updates from
    # overshooting: (x - beta*eps)/t integrates to at most one recovery unit
    t_floor = cfg.t_floor if cfg.t_floor is not None else dt
    sched = GeometricSchedule(cfg.beta0, cfg.beta_f)
    tau = np.zeros((n, V), dtype=np.float64)
    tau[:, V - 1] = 1.0
    if condition is None:
        x = rng.standard_normal((n, cfg.d_x))
    else:
        x = np.tile(np.asarray(condition, dtype=np.float64), (n, 1))

    for m in range(M):
        t = m * dt
        t_x = 1.0 if condition is not None else t
        p_hat, eps_hat = denoise(
            tau, x, np.full(n, t), np.full(n, t_x)
        )
        eta = discrete_drift(p_hat, tau, sched.drift_gain(t))
        sig_d = sched.rate(t) if cfg.discrete_noise == "schedule" else cfg.sigma_t
        w = rng.standard_normal((n, V))
        kick = eta * dt + sig_d * math.sqrt(dt) * project_tangent(tau, w)
        tau = exp_map(tau, kick)
        if condition is None:
            t_eff = max(t, t_floor)
            drift = continuous_drift(x, eps_hat, t_eff, cfg.sigma_t)
            if cfg.x1_clip is not None:
                # pull runaway chains back: the implied clean estimate
                # (x - beta*eps)/t must stay inside the standardized data box
                x1_hat = (x - math.sqrt(1.0 - t_eff * t_eff) * eps_hat) / t_eff
                drift = drift - (x1_hat - np.clip(x1_hat, -cfg.x1_clip, cfg.x1_clip))
            x = (
                x
                + drift * dt
                + math.sqrt(cfg.sigma_t * dt) * rng.standard_normal((n, cfg.d_x))
            )
    return tau, x


def argmax_topology(tau: np.ndarray) -> np.ndarray:
    """Hardest class under the simplex pullback, mask slot excluded."""
    probs = sphere_to_simplex(tau)
    return np.argmax(probs[..., :-1], axis=-1)


def sample(
    model: MixeDiT,
    cfg: MixeDiTConfig,
    stats: StandardizationStats,
    condition: np.ndarray | None = None,
    n: int = 1,
    seed: int = 0,
    condition_standardized: bool = False,
):
    """Draw (Topology, observation) pairs, optionally conditioned on an
    observation in raw units."""
    if cfg.vocab != VOCAB_SIZE:
        raise ValueError("sample() maps classes to topologies; vocab must be 145")
    rng = np.random.default_rng(seed)
    cond = None
    if condition is not None:
        cond = np.asarray(condition, dtype=np.float64)
        if not condition_standardized:
            cond = stats.standardize_x(cond)
    tau, x_std = euler_walk(make_denoiser(model), cfg, n, rng, cond)
    idx = argmax_topology(tau)
    x_raw = stats.destandardize_x(x_std)
    return [
        (topology_from_index(int(i)), x_raw[j]) for j, i in enumerate(idx)
    ]


def make_checkpoint(
    result: MixeDiTTrainResult,
    cfg: MixeDiTConfig,
    stats: StandardizationStats,
) -> Checkpoint:
    return Checkpoint(
        kind="mixedit",
        config=asdict(cfg),
        stats=stats,
        schedule={
            "alpha": "t",
            "beta": "sqrt(1-t^2)",
            "beta0": cfg.beta0,
            "beta_f": cfg.beta_f,
        },
        step=result.step,
        params=module_arrays(result.model),
        ema=result.ema,
        opt=result.opt,
    )


def model_from_checkpoint(
    ckpt: Checkpoint, use_ema: bool = True
) -> tuple[MixeDiT, MixeDiTConfig, StandardizationStats]:
    if ckpt.kind != "mixedit":
        raise ValueError(f"checkpoint kind {ckpt.kind!r} is not 'mixedit'")
    cfg = MixeDiTConfig(**ckpt.config)
    model = MixeDiT(cfg)
    load_arrays(model, ckpt.params)
    if use_ema:
        load_ema(model, ckpt.ema)
    return model, cfg, ckpt.stats
