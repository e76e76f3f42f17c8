"""Hierarchical sampling over trained models and experiment sweeps.

A design request runs in two stages: the topology model proposes classes
conditioned on the requested observation, then the masked denoiser fills
in the continuous parameters for each class under the same conditioning.
Results come back clamped to the prior box and rebuilt into trees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import maskedit, mixedit
from .design_space import (
    FEATURE_INDEX,
    N_FEATURES,
    Topology,
    clamp_to_prior,
    mask_for_topology,
    slot,
    topology_from_index,
    unflatten,
)
from .design_space.tree import Aircraft
from .errors import DegenerateInput, StatsMismatch
from .maskedit import MaskeDiTConfig
from .mixedit import MixeDiTConfig
from .surrogate_sim import (
    CHANNELS,
    DEFAULT_CONSTANTS,
    DEFAULT_MISSION,
    Mission,
    SimConstants,
    resimulate_flat,
)


@dataclass(frozen=True)
class SampleRequest:
    """What a caller wants sampled, in raw physical units.

    x_target may be a full 10-vector (NaN marks unspecified channels), a
    {channel name: value} dict, or None for marginal sampling.  theta_pins
    conditions individual parameter slots by feature key.
    """

    x_target: object = None
    topology_index: int | None = None
    theta_pins: dict[str, float] = field(default_factory=dict)
    n: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.topology_index is not None:
            topology_from_index(self.topology_index)  # range check
        for key in self.theta_pins:
            if key not in FEATURE_INDEX:
                raise ValueError(f"unknown feature key {key!r}")


@dataclass
class SampledDesign:
    topology: Topology
    theta: np.ndarray
    aircraft: Aircraft
    seed: int
    x_conditioned: np.ndarray | None


def resolve_x_target(x_target, stats) -> tuple[np.ndarray, np.ndarray] | None:
    """Normalize a conditioning spec to (full raw vector, specified mask).

    Unspecified channels are imputed at the dataset mean so the topology
    stage always sees a complete observation; the parameter stage only
    conditions on the specified ones.
    """
    if x_target is None:
        return None
    mean = np.asarray(stats.x_mean, dtype=np.float64)
    if isinstance(x_target, dict):
        full = mean.copy()
        specified = np.zeros(len(CHANNELS), dtype=bool)
        for name, value in x_target.items():
            if name not in CHANNELS:
                raise ValueError(f"unknown observation channel {name!r}")
            j = CHANNELS.index(name)
            full[j] = float(value)
            specified[j] = True
    else:
        arr = np.asarray(x_target, dtype=np.float64)
        if arr.shape != mean.shape:
            raise ValueError("x_target length does not match the channels")
        specified = np.isfinite(arr)
        full = np.where(specified, arr, mean)
    if not specified.any():
        return None
    return full, specified


def _theta_pin_slots(pins: dict[str, float]) -> list[tuple[int, float]]:
    return [(slot(k), float(v)) for k, v in pins.items()]


def sample_designs(
    mixedit_ckpt,
    maskedit_ckpt,
    request: SampleRequest,
    mission: Mission = DEFAULT_MISSION,
    constants: SimConstants = DEFAULT_CONSTANTS,
) -> list[SampledDesign]:
    """Run the two-stage sampler for one request.

    Designs with the same topology share one denoiser walk batch; each
    design still gets its own provenance seed for tree reconstruction.
    """
    if mixedit_ckpt.stats.digest() != maskedit_ckpt.stats.digest():
        raise StatsMismatch("checkpoints disagree on standardization stats")
    stats = mixedit_ckpt.stats
    resolved = resolve_x_target(request.x_target, stats)

    if request.topology_index is not None:
        topologies = [topology_from_index(request.topology_index)] * request.n
    else:
        mix_model, mix_cfg, _ = mixedit.model_from_checkpoint(mixedit_ckpt)
        cond = resolved[0] if resolved is not None else None
        pairs = mixedit.sample(
            mix_model, mix_cfg, stats, condition=cond,
            n=request.n, seed=request.seed,
        )
        topologies = [t for t, _ in pairs]

    mask_model, mask_cfg, _ = maskedit.model_from_checkpoint(maskedit_ckpt)
    pin_slots = _theta_pin_slots(request.theta_pins)

    # group identical topologies so their walks share a batch
    groups: dict[int, list[int]] = {}
    for i, topo in enumerate(topologies):
        groups.setdefault(topo.index, []).append(i)

    designs: list[SampledDesign | None] = [None] * request.n
    for topo_idx, members in groups.items():
        topo = topology_from_index(topo_idx)
        theta_mask = mask_for_topology(topo)
        m_c = np.zeros(mask_cfg.d_max)
        values = np.zeros(mask_cfg.d_max)
        for j, raw in pin_slots:
            if not theta_mask[j]:
                raise ValueError(
                    f"pinned slot {j} is absent under topology {topo_idx}"
                )
            m_c[j] = 1.0
            values[j] = (raw - stats.theta_mean[j]) / stats.theta_std[j]
        if resolved is not None:
            full, specified = resolved
            x_std = stats.standardize_x(full)
            for j in np.flatnonzero(specified):
                m_c[N_FEATURES + j] = 1.0
                values[N_FEATURES + j] = x_std[j]

        z = maskedit.sample(
            mask_model, mask_cfg, topo,
            condition=(m_c, values),
            seed=request.seed + topo_idx + 1,
            n=len(members),
        )
        theta_std = z[:, :N_FEATURES]
        theta_raw = stats.destandardize_theta(theta_std)
        for row, i in enumerate(members):
            design_seed = request.seed + i
            theta = clamp_to_prior(theta_raw[row], theta_mask)
            aircraft = unflatten(theta, theta_mask, topo_idx, design_seed)
            designs[i] = SampledDesign(
                topology=topo,
                theta=theta,
                aircraft=aircraft,
                seed=design_seed,
                x_conditioned=resolved[0].copy() if resolved else None,
            )
    return designs  # type: ignore[return-value]


def conditional_profile(
    xs: np.ndarray, j: int, value: float, bandwidth_sigma: float = 0.25
) -> np.ndarray:
    """Full observation vector whose other channels sit at their
    kernel-conditional means given channel j at the requested value.

    Weights are Gaussian in the swept channel with bandwidth expressed
    in data standard deviations; shifting the log-weights by their max
    keeps the average defined even far into the tails.
    """
    xs = np.asarray(xs, dtype=np.float64)
    sd = float(xs[:, j].std())
    if sd <= 0:
        raise DegenerateInput(f"channel {j} is constant in the profile data")
    logw = -0.5 * ((xs[:, j] - value) / (bandwidth_sigma * sd)) ** 2
    w = np.exp(logw - logw.max())
    prof = (xs * w[:, None]).sum(axis=0) / w.sum()
    prof[j] = value
    return prof


def case_study_sweep(
    mixedit_ckpt,
    maskedit_ckpt,
    channel: str,
    offsets_sigma: list[float],
    n: int,
    seed: int = 0,
    mission: Mission = DEFAULT_MISSION,
    constants: SimConstants = DEFAULT_CONSTANTS,
    topology_index: int | None = None,
    resimulate: bool = True,
    profile_xs: np.ndarray | None = None,
) -> list[dict]:
    """Sweep one observation channel over sigma offsets from the dataset
    mean; each row reports the topology summary and the re-simulated
    observations of the designs drawn at that target.

    With profile_xs (training observations), the other nine channels
    follow their conditional means given the swept one, so every grid
    point is an on-manifold observation; without it they sit at the
    global mean, which contradicts the swept channel away from the
    center wherever channels are strongly coupled.
    """
    from .evaluation import topology_summary

    if channel not in CHANNELS:
        raise ValueError(f"unknown observation channel {channel!r}")
    stats = mixedit_ckpt.stats
    j = CHANNELS.index(channel)
    rows = []
    for k, off in enumerate(offsets_sigma):
        target = float(stats.x_mean[j] + off * stats.x_std[j])
        if profile_xs is not None:
            full = conditional_profile(profile_xs, j, target)
            x_target = {
                name: float(full[i]) for i, name in enumerate(CHANNELS)
            }
        else:
            x_target = {channel: target}
        request = SampleRequest(
            x_target=x_target,
            topology_index=topology_index,
            n=n,
            seed=seed + 1000 * k,
        )
        designs = sample_designs(
            mixedit_ckpt, maskedit_ckpt, request, mission, constants
        )
        summary = topology_summary([d.topology for d in designs])
        row = {
            "channel": channel,
            "offset_sigma": off,
            "target": target,
            "x_target": x_target,
            "n": n,
            "summary": summary.to_jsonable(),
        }
        if resimulate:
            resims, failures = [], 0
            for d in designs:
                obs, _ = resimulate_flat(
                    d.theta, d.topology.index, d.seed,
                    mission=mission, constants=constants,
                )
                if obs is None:
                    failures += 1
                else:
                    resims.append(obs.as_vector())
            row["resim"] = [v.tolist() for v in resims]
            row["resim_mean"] = (
                np.mean(resims, axis=0).tolist() if resims else None
            )
            row["failures"] = failures
        rows.append(row)
    return rows


# --- run configuration ---

_PROFILES = ("desk", "paper")


@dataclass(frozen=True)
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    out_dir: str = "runs"
    n_raw: int = 20_000
    mission: Mission = DEFAULT_MISSION
    constants: SimConstants = DEFAULT_CONSTANTS
    mixedit: MixeDiTConfig = field(default_factory=MixeDiTConfig)
    maskedit: MaskeDiTConfig = field(default_factory=MaskeDiTConfig.desk)

    def __post_init__(self):
        if self.profile not in _PROFILES:
            raise ValueError(f"profile must be one of {_PROFILES}")

    @classmethod
    def desk(cls, **overrides) -> "RunConfig":
        return cls(profile="desk", **overrides)

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        base = dict(
            profile="paper",
            n_raw=250_000,
            mixedit=MixeDiTConfig.paper(),
            maskedit=MaskeDiTConfig(),
        )
        base.update(overrides)
        return cls(**base)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def to_jsonable(self) -> dict:
        from dataclasses import asdict

        return {
            "profile": self.profile,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "n_raw": self.n_raw,
            "mission": asdict(self.mission),
            "constants": asdict(self.constants),
            "mixedit": asdict(self.mixedit),
            "maskedit": asdict(self.maskedit),
        }


def load_run_config(path: str | Path) -> RunConfig:
    """Read a JSON run config: a profile name plus field overrides."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    raw = json.loads(path.read_text())
    profile = raw.pop("profile", "desk")
    if profile not in _PROFILES:
        raise ValueError(f"profile must be one of {_PROFILES}")
    base = RunConfig.desk() if profile == "desk" else RunConfig.paper()
    kwargs: dict = {}
    try:
        if "mission" in raw:
            kwargs["mission"] = Mission(**raw.pop("mission"))
        if "constants" in raw:
            kwargs["constants"] = SimConstants(**raw.pop("constants"))
        if "mixedit" in raw:
            kwargs["mixedit"] = replace(base.mixedit, **raw.pop("mixedit"))
        if "maskedit" in raw:
            kwargs["maskedit"] = replace(base.maskedit, **raw.pop("maskedit"))
    except TypeError as err:
        raise ValueError(f"{path}: {err}") from err
    allowed = {"seed", "out_dir", "n_raw"}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    kwargs.update(raw)
    return replace(base, **kwargs)
