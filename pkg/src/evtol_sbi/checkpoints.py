"""Checkpoint files shared by both diffusion models.

A checkpoint is a single ``.npz`` holding a JSON header (config, schedule,
standardization stats, step counter) plus named parameter arrays and an EMA
shadow copy.  Sampling never needs the dataset itself, only the stats frozen
here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .surrogate_sim import FEATURE_TABLE_VERSION, StatsMismatch

_HEADER = "__header__"
_PARAM = "param::"
_EMA = "ema::"
_OPT = "opt::"


@dataclass(frozen=True)
class StandardizationStats:
    """Per-slot mean/std frozen from a training dataset."""

    theta_mean: np.ndarray
    theta_std: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray

    @classmethod
    def from_dataset(cls, dataset) -> "StandardizationStats":
        return cls(
            theta_mean=np.asarray(dataset.theta_mean, dtype=np.float64),
            theta_std=np.asarray(dataset.theta_std, dtype=np.float64),
            x_mean=np.asarray(dataset.x_mean, dtype=np.float64),
            x_std=np.asarray(dataset.x_std, dtype=np.float64),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.theta_mean, self.theta_std, self.x_mean, self.x_std):
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()

    def standardize_theta(self, theta: np.ndarray) -> np.ndarray:
        return (theta - self.theta_mean) / self.theta_std

    def destandardize_theta(self, z: np.ndarray) -> np.ndarray:
        return z * self.theta_std + self.theta_mean

    def standardize_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_std

    def destandardize_x(self, z: np.ndarray) -> np.ndarray:
        return z * self.x_std + self.x_mean

    def to_jsonable(self) -> dict:
        return {
            "theta_mean": self.theta_mean.tolist(),
            "theta_std": self.theta_std.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "StandardizationStats":
        return cls(
            theta_mean=np.asarray(d["theta_mean"], dtype=np.float64),
            theta_std=np.asarray(d["theta_std"], dtype=np.float64),
            x_mean=np.asarray(d["x_mean"], dtype=np.float64),
            x_std=np.asarray(d["x_std"], dtype=np.float64),
        )


@dataclass
class Checkpoint:
    kind: str
    config: dict
    stats: StandardizationStats
    schedule: dict
    step: int
    params: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)
    opt: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = FEATURE_TABLE_VERSION


def module_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    """Parameters and buffers as plain float64 arrays, keyed by name."""
    out = {}
    for name, p in module.named_parameters():
        out[name] = p.detach().cpu().numpy().astype(np.float64)
    for name, b in module.named_buffers():
        out[name] = b.detach().cpu().numpy().astype(np.float64)
    return out


def load_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    """Copy named arrays back into a module, shape-checked."""
    with torch.no_grad():
        for name, tensor in list(module.named_parameters()) + list(
            module.named_buffers()
        ):
            if name not in arrays:
                raise ValueError(f"checkpoint is missing array {name!r}")
            src = arrays[name]
            if tuple(src.shape) != tuple(tensor.shape):
                raise ValueError(
                    f"array {name!r} has shape {tuple(src.shape)}, "
                    f"module expects {tuple(tensor.shape)}"
                )
            tensor.copy_(torch.as_tensor(src, dtype=tensor.dtype))


def ema_init(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: p.detach().clone() for name, p in module.named_parameters()
    }


def ema_update(
    shadow: dict[str, torch.Tensor], module: torch.nn.Module, decay: float
) -> None:
    with torch.no_grad():
        for name, p in module.named_parameters():
            shadow[name].mul_(decay).add_(p.detach(), alpha=1.0 - decay)


def load_ema(module: torch.nn.Module, ema: dict[str, np.ndarray]) -> None:
    """Overwrite trainable parameters with their EMA shadows."""
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name not in ema:
                raise ValueError(f"EMA shadow is missing array {name!r}")
            p.copy_(torch.as_tensor(ema[name], dtype=p.dtype))


def adam_arrays(opt: torch.optim.Adam, module: torch.nn.Module) -> dict[str, np.ndarray]:
    """Adam moments keyed by parameter name, for checkpoint resume."""
    out = {}
    for name, p in module.named_parameters():
        state = opt.state.get(p)
        if not state:
            continue
        out[name + ".step"] = np.asarray(float(state["step"]))
        out[name + ".exp_avg"] = state["exp_avg"].detach().numpy().astype(np.float64)
        out[name + ".exp_avg_sq"] = (
            state["exp_avg_sq"].detach().numpy().astype(np.float64)
        )
    return out


def restore_adam(
    opt: torch.optim.Adam, module: torch.nn.Module, arrays: dict
) -> None:
    for name, p in module.named_parameters():
        key = name + ".step"
        if key not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(arrays[key])),
            "exp_avg": torch.as_tensor(arrays[name + ".exp_avg"], dtype=p.dtype),
            "exp_avg_sq": torch.as_tensor(
                arrays[name + ".exp_avg_sq"], dtype=p.dtype
            ),
        }


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "schedule": ckpt.schedule,
        "step": ckpt.step,
        "stats": ckpt.stats.to_jsonable(),
        "stats_digest": ckpt.stats.digest(),
        "extra": ckpt.extra,
        "version": ckpt.version,
    }
    arrays = {_HEADER: np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for name, a in ckpt.params.items():
        arrays[_PARAM + name] = a
    for name, a in ckpt.ema.items():
        arrays[_EMA + name] = a
    for name, a in ckpt.opt.items():
        arrays[_OPT + name] = a
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as z:
        if _HEADER not in z:
            raise ValueError(f"{path} is not a model checkpoint")
        header = json.loads(bytes(z[_HEADER].tobytes()).decode())
        params, ema, opt = {}, {}, {}
        for key in z.files:
            if key.startswith(_PARAM):
                params[key[len(_PARAM):]] = z[key]
            elif key.startswith(_EMA):
                ema[key[len(_EMA):]] = z[key]
            elif key.startswith(_OPT):
                opt[key[len(_OPT):]] = z[key]
    if header.get("version") != FEATURE_TABLE_VERSION:
        raise StatsMismatch(
            f"checkpoint feature-table version {header.get('version')} "
            f"does not match {FEATURE_TABLE_VERSION}"
        )
    stats = StandardizationStats.from_jsonable(header["stats"])
    if stats.digest() != header["stats_digest"]:
        raise StatsMismatch("checkpoint stats digest does not match its stats")
    return Checkpoint(
        kind=header["kind"],
        config=header["config"],
        stats=stats,
        schedule=header["schedule"],
        step=header["step"],
        params=params,
        ema=ema,
        extra=header["extra"],
        opt=opt,
        version=header["version"],
    )
