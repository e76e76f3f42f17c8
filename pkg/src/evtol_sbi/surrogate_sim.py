"""Closed-form performance model and dataset generator.

Maps a design tree plus a mission to ten summary statistics using
textbook sizing relations: trapezoidal wing areas, a quadratic drag
polar, momentum-theory hover power and an energy budget.  It is meant to
be cheap and smooth, not accurate; every constant lives in
``SimConstants`` and can be overridden from a flat config file.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .design_space import (
    FEATURE_KEYS,
    FEATURE_TABLE_VERSION,
    N_FEATURES,
    compute_layout,
    flatten,
    geometric_feasibility,
    sample_design,
    structural_feasibility,
    topology_from_index,
    unflatten,
)
from .design_space.geometry import Layout
from .design_space.tree import Aircraft
from .errors import EmptyDataset, NonPhysical, StatsMismatch

CHANNELS = (
    "total_mass",
    "wing_mass_total",
    "C_L",
    "C_D",
    "alpha_cruise",
    "final_SoC",
    "cruise_power",
    "hover_power",
    "static_margin",
    "lift_to_drag",
)
N_CHANNELS = len(CHANNELS)


@dataclass(frozen=True)
class Observation:
    """Ten performance statistics; masses kg, powers kW, angle deg."""

    total_mass: float
    wing_mass_total: float
    C_L: float
    C_D: float
    alpha_cruise: float
    final_SoC: float
    cruise_power: float
    hover_power: float
    static_margin: float
    lift_to_drag: float
    # carried for the tip-speed gate, not one of the ten channels
    hover_tip_thrust_coeff: float = 0.0

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in CHANNELS], dtype=float)


@dataclass(frozen=True)
class Mission:
    hover_time: float = 120.0
    cruise_time: float = 1800.0
    cruise_speed: float = 50.0
    air_density: float = 1.1
    specific_energy: float = 720e3
    propulsive_efficiency: float = 0.8
    figure_of_merit: float = 0.7

    def __post_init__(self):
        # durations of zero mean "skip the phase"; rates must stay positive
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("hover_time", "cruise_time"):
                if v < 0:
                    raise NonPhysical(f"mission field {f.name} must be nonnegative")
            elif v <= 0:
                raise NonPhysical(f"mission field {f.name} must be positive")


@dataclass(frozen=True)
class SimConstants:
    wing_mass_coeff: float = 8.0  # kg/m^2
    rotor_mass_coeff: float = 5.0  # kg/m^2
    arm_mass_coeff: float = 3.0  # kg/m
    fixed_mass: float = 400.0  # kg, cabin/systems/crew lump
    fixed_mass_x_rel: float = 0.45  # fraction of fuselage length
    cd0_base: float = 0.02
    cd0_per_rotor: float = 0.004
    cd0_wetted_coeff: float = 0.004
    oswald: float = 0.85
    biplane_oswald_penalty: float = 0.10
    aero_noise_sigma: float = 0.02
    gravity: float = 9.81
    speed_of_sound: float = 340.0
    tip_thrust_coeff_limit: float = 0.14
    min_final_soc: float = 0.1
    static_margin_min: float = 0.0
    static_margin_max: float = 0.4
    allowable_stress: float = 276e6


DEFAULT_MISSION = Mission()
DEFAULT_CONSTANTS = SimConstants()


def config_hash(mission: Mission, constants: SimConstants) -> str:
    blob = json.dumps(
        {"mission": asdict(mission), "constants": asdict(constants)},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path: str | Path) -> tuple[Mission, SimConstants]:
    """Read ``key = value`` lines into a Mission and SimConstants pair."""
    mission_fields = {f.name for f in fields(Mission)}
    constant_fields = {f.name for f in fields(SimConstants)}
    mission_kw: dict[str, float] = {}
    constant_kw: dict[str, float] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in mission_fields:
            mission_kw[key] = float(value)
        elif key in constant_fields:
            constant_kw[key] = float(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    return Mission(**mission_kw), SimConstants(**constant_kw)


@dataclass(frozen=True)
class MassBreakdown:
    total: float
    wing_total: float
    battery: float
    items: tuple[tuple[float, float], ...]  # (mass kg, x position m)

    @property
    def x_cg(self) -> float:
        return sum(m * x for m, x in self.items) / self.total


def rotor_mass(tip_radius: float, n_blades: int, coeff: float) -> float:
    return coeff * tip_radius**2 * math.sqrt(n_blades)


def _target_static_margin(layout: Layout) -> float:
    """Trim target: a bare minimum without an h-tail, more with tail volume."""
    mains = layout.main_wings
    s_w = sum(s.area for s in mains)
    x_ac_w = sum(s.area * s.x_ac for s in mains) / s_w
    v_h = sum(
        s.area * (s.x_ac - x_ac_w) / (s_w * layout.mean_chord)
        for s in layout.surfaces
        if s.name == "h_tail"
    )
    return min(max(0.08 + 0.25 * v_h, 0.05), 0.35)


def mass_buildup(
    aircraft: Aircraft, layout: Layout, constants: SimConstants = DEFAULT_CONSTANTS
) -> MassBreakdown:
    c = constants
    items: list[tuple[float, float]] = [
        (c.fixed_mass, c.fixed_mass_x_rel * layout.fuselage_length),
    ]
    wing_total = 0.0
    for s in layout.main_wings:
        m = c.wing_mass_coeff * s.area * (1 + s.aspect_ratio / 10.0)
        wing_total += m
        items.append((m, s.x_ac))
    for b in layout.booms:
        items.append((c.arm_mass_coeff * b.length, b.x_center))
    for r in layout.rotors:
        tmpl = aircraft.lift_prop if r.kind == "lift" else aircraft.forward_prop
        items.append((rotor_mass(tmpl.tip_radius, tmpl.number_of_blades, c.rotor_mass_coeff), r.x))
    # the battery is the trim mass: slide it along the cabin so the loaded
    # cg sits the target margin ahead of the neutral point
    m_b = aircraft.battery.mass
    if m_b <= 0:
        raise NonPhysical("battery mass must be positive")
    dry = sum(m for m, _ in items)
    dry_moment = sum(m * x for m, x in items)
    x_cg_target = neutral_point(layout) - _target_static_margin(layout) * layout.mean_chord
    x_b = ((dry + m_b) * x_cg_target - dry_moment) / m_b
    x_b = min(max(x_b, 0.05 * layout.fuselage_length), 0.95 * layout.fuselage_length)
    items.append((m_b, x_b))
    return MassBreakdown(
        total=dry + m_b, wing_total=wing_total, battery=m_b, items=tuple(items)
    )


def lift_curve_slope(aspect_ratio: float) -> float:
    return 2.0 * math.pi * aspect_ratio / (aspect_ratio + 2.0)


def parasite_drag_coeff(
    n_rotors: int, wetted_area: float, wing_area: float, constants: SimConstants
) -> float:
    c = constants
    return c.cd0_base + c.cd0_per_rotor * n_rotors + c.cd0_wetted_coeff * wetted_area / wing_area


def drag_coeff(cl: float, cd0: float, oswald: float, aspect_ratio: float) -> float:
    return cd0 + cl**2 / (math.pi * oswald * aspect_ratio)


def hover_power(thrust: float, disk_area: float, air_density: float, figure_of_merit: float) -> float:
    """Momentum-theory hover power in watts."""
    return thrust * math.sqrt(thrust / (2.0 * air_density * disk_area)) / figure_of_merit


def neutral_point(layout: Layout) -> float:
    surfaces = [s for s in layout.surfaces if not s.vertical]
    weights = [s.area * lift_curve_slope(s.aspect_ratio) for s in surfaces]
    return sum(w * s.x_ac for w, s in zip(weights, surfaces)) / sum(weights)


def simulate(
    design: Aircraft,
    mission: Mission = DEFAULT_MISSION,
    rng_seed: int = 0,
    constants: SimConstants = DEFAULT_CONSTANTS,
) -> Observation:
    """Evaluate one design on one mission.

    Deterministic given ``rng_seed``; the seed drives the lognormal
    observation noise standing in for re-drawn interior geometry.  Set
    ``aero_noise_sigma`` to zero for the noise-free pure function.
    """
    c = constants
    layout = compute_layout(design)
    masses = mass_buildup(design, layout, c)
    if masses.battery <= 0:
        raise NonPhysical("battery mass must be positive")

    mains = layout.main_wings
    wing_area = sum(s.area for s in mains)
    if wing_area <= 0:
        raise NonPhysical("total wing area must be positive")
    biplane = len(mains) > 1
    ar_eff = max(s.span for s in mains) ** 2 / wing_area
    oswald = c.oswald - (c.biplane_oswald_penalty if biplane else 0.0)

    weight = masses.total * c.gravity
    rho = mission.air_density
    v = mission.cruise_speed
    q = 0.5 * rho * v**2
    cl = weight / (q * wing_area)
    alpha_rad = cl / lift_curve_slope(ar_eff)
    n_rotors = len(layout.rotors)
    cd0 = parasite_drag_coeff(n_rotors, design.fuselage.area_wetted, wing_area, c)
    cd = drag_coeff(cl, cd0, oswald, ar_eff)

    if c.aero_noise_sigma > 0:
        z = np.random.default_rng([int(rng_seed), 0xA0]).standard_normal(3)
        cl *= math.exp(c.aero_noise_sigma * z[0])
        cd *= math.exp(c.aero_noise_sigma * z[1])
        alpha_rad *= math.exp(c.aero_noise_sigma * z[2])

    p_cruise = cd * q * wing_area * v / mission.propulsive_efficiency

    hover_rotors = [r for r in layout.rotors if r.kind == "lift"]
    if not hover_rotors:
        hover_rotors = list(layout.rotors)
    disk_area = sum(math.pi * r.radius**2 for r in hover_rotors)
    if disk_area <= 0:
        raise NonPhysical("hover disk area must be positive")
    p_hover = hover_power(weight, disk_area, rho, mission.figure_of_merit)

    thrust_each = weight / len(hover_rotors)
    c_t = 0.0
    for r in hover_rotors:
        tmpl = design.lift_prop if r.kind == "lift" else design.forward_prop
        v_tip = tmpl.design_tip_mach * c.speed_of_sound
        c_t = max(c_t, thrust_each / (rho * math.pi * r.radius**2 * v_tip**2))

    energy = p_hover * mission.hover_time + p_cruise * mission.cruise_time
    soc = 1.0 - energy / (mission.specific_energy * masses.battery)
    soc = min(max(soc, 0.0), 1.0)

    sm = (neutral_point(layout) - masses.x_cg) / layout.mean_chord

    obs = Observation(
        total_mass=masses.total,
        wing_mass_total=masses.wing_total,
        C_L=cl,
        C_D=cd,
        alpha_cruise=math.degrees(alpha_rad),
        final_SoC=soc,
        cruise_power=p_cruise / 1e3,
        hover_power=p_hover / 1e3,
        static_margin=sm,
        lift_to_drag=cl / cd,
        hover_tip_thrust_coeff=c_t,
    )
    vec = obs.as_vector()
    if not np.isfinite(vec).all():
        raise NonPhysical("observation contains non-finite values")
    if obs.C_D <= 0 or obs.total_mass <= 0:
        raise NonPhysical("observation violates positivity")
    return obs


def mission_feasibility(
    obs: Observation, constants: SimConstants = DEFAULT_CONSTANTS
) -> "FeasibilityReport":
    from .design_space.feasibility import FeasibilityReport

    c = constants
    reasons: list[str] = []
    if obs.final_SoC < c.min_final_soc:
        reasons.append(
            f"mission: final state of charge {obs.final_SoC:.3f} below {c.min_final_soc}"
        )
    if not c.static_margin_min <= obs.static_margin <= c.static_margin_max:
        reasons.append(
            f"mission: static margin {obs.static_margin:.3f} outside "
            f"[{c.static_margin_min}, {c.static_margin_max}]"
        )
    if obs.hover_tip_thrust_coeff > c.tip_thrust_coeff_limit:
        reasons.append(
            f"mission: hover thrust coefficient {obs.hover_tip_thrust_coeff:.3f} "
            f"exceeds {c.tip_thrust_coeff_limit}"
        )
    return FeasibilityReport(passed=not reasons, reasons=reasons)


def check_design(
    design: Aircraft,
    mission: Mission = DEFAULT_MISSION,
    rng_seed: int = 0,
    constants: SimConstants = DEFAULT_CONSTANTS,
) -> tuple[Observation | None, str | None]:
    """Run the full filter chain; returns (observation, failed stage).

    Designs with no forward propeller anywhere fall outside the template
    and are rejected before any geometry is evaluated.
    """
    from .design_space import topology_of

    if not topology_of(design).has_forward_prop:
        return None, "template"
    layout = compute_layout(design)
    if not geometric_feasibility(design, layout).passed:
        return None, "geometric"
    masses = mass_buildup(design, layout, constants)
    structural = structural_feasibility(
        design,
        masses.total * constants.gravity,
        layout,
        allowable=constants.allowable_stress,
        rotor_mass_coeff=constants.rotor_mass_coeff,
        g=constants.gravity,
    )
    if not structural.passed:
        return None, "structural"
    try:
        obs = simulate(design, mission, rng_seed, constants)
    except NonPhysical:
        return None, "simulate"
    if not mission_feasibility(obs, constants).passed:
        return obs, "mission"
    return obs, None


@dataclass
class DatasetRow:
    theta: np.ndarray
    mask: np.ndarray
    topology_index: int
    x: np.ndarray
    seed: int


@dataclass
class Dataset:
    rows: list[DatasetRow]
    feature_keys: tuple[str, ...] = tuple(FEATURE_KEYS)
    version: str = FEATURE_TABLE_VERSION
    theta_mean: np.ndarray | None = None
    theta_std: np.ndarray | None = None
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    config_digest: str = ""
    acceptance: dict = field(default_factory=dict)
    mission: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def thetas(self) -> np.ndarray:
        return np.stack([r.theta for r in self.rows])

    def masks(self) -> np.ndarray:
        return np.stack([r.mask for r in self.rows])

    def topologies(self) -> np.ndarray:
        return np.array([r.topology_index for r in self.rows], dtype=int)

    def xs(self) -> np.ndarray:
        return np.stack([r.x for r in self.rows])

    def compute_stats(self) -> None:
        """Per-slot moments over present entries; absent-only slots get (0, 1)."""
        if not self.rows:
            raise EmptyDataset("cannot compute statistics of an empty dataset")
        thetas = self.thetas()
        with warnings.catch_warnings():
            # all-NaN columns are legal (slot never active in any row)
            warnings.simplefilter("ignore", RuntimeWarning)
            mean = np.nanmean(thetas, axis=0)
            std = np.nanstd(thetas, axis=0)
        never = np.isnan(mean)
        mean[never] = 0.0
        std[never] = 1.0
        std[std < 1e-8] = 1.0
        self.theta_mean, self.theta_std = mean, std
        xs = self.xs()
        self.x_mean = xs.mean(axis=0)
        x_std = xs.std(axis=0)
        x_std[x_std < 1e-8] = 1.0
        self.x_std = x_std

    def standardize_theta(self, theta: np.ndarray) -> np.ndarray:
        return (theta - self.theta_mean) / self.theta_std

    def destandardize_theta(self, z: np.ndarray) -> np.ndarray:
        return z * self.theta_std + self.theta_mean

    def standardize_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_std

    def destandardize_x(self, z: np.ndarray) -> np.ndarray:
        return z * self.x_std + self.x_mean

    def header(self) -> dict:
        return {
            "kind": "design-dataset",
            "version": self.version,
            "feature_keys": list(self.feature_keys),
            "channels": list(CHANNELS),
            "n_rows": len(self.rows),
            "theta_mean": self.theta_mean.tolist(),
            "theta_std": self.theta_std.tolist(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "config_hash": self.config_digest,
            "acceptance": self.acceptance,
            "mission": self.mission,
            "constants": self.constants,
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for r in self.rows:
                theta = [None if not m else v for v, m in zip(r.theta.tolist(), r.mask.tolist())]
                fh.write(
                    json.dumps(
                        {
                            "theta": theta,
                            "mask": [int(m) for m in r.mask.tolist()],
                            "topology_index": int(r.topology_index),
                            "x": r.x.tolist(),
                            "seed": int(r.seed),
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path, expected_config_hash: str | None = None) -> "Dataset":
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header.get("kind") != "design-dataset":
                raise StatsMismatch(f"{path} is not a dataset file")
            required = (
                "version", "config_hash", "mission", "constants", "feature_keys",
                "theta_mean", "theta_std", "x_mean", "x_std", "acceptance",
            )
            missing = [k for k in required if k not in header]
            if missing:
                raise StatsMismatch(f"dataset header is missing fields: {missing}")
            if header["version"] != FEATURE_TABLE_VERSION:
                raise StatsMismatch(
                    f"feature table {header['version']} does not match {FEATURE_TABLE_VERSION}"
                )
            if expected_config_hash and header["config_hash"] != expected_config_hash:
                raise StatsMismatch("dataset was generated under a different config")
            try:
                declared = config_hash(
                    Mission(**header["mission"]), SimConstants(**header["constants"])
                )
            except TypeError as err:
                raise StatsMismatch(f"dataset header mission/constants malformed: {err}") from err
            if header["config_hash"] != declared:
                raise StatsMismatch(
                    "config hash does not match the mission/constants in the header"
                )
            rows = []
            for line in fh:
                rec = json.loads(line)
                mask = np.array(rec["mask"], dtype=bool)
                theta = np.array(
                    [np.nan if v is None else v for v in rec["theta"]], dtype=float
                )
                rows.append(
                    DatasetRow(
                        theta=theta,
                        mask=mask,
                        topology_index=int(rec["topology_index"]),
                        x=np.array(rec["x"], dtype=float),
                        seed=int(rec["seed"]),
                    )
                )
        ds = cls(
            rows=rows,
            feature_keys=tuple(header["feature_keys"]),
            version=header["version"],
            theta_mean=np.array(header["theta_mean"]),
            theta_std=np.array(header["theta_std"]),
            x_mean=np.array(header["x_mean"]),
            x_std=np.array(header["x_std"]),
            config_digest=header["config_hash"],
            acceptance=header.get("acceptance", {}),
            mission=header.get("mission", {}),
            constants=header.get("constants", {}),
        )
        if len(ds.rows) != header["n_rows"]:
            raise StatsMismatch(
                f"expected {header['n_rows']} rows, file holds {len(ds.rows)}"
            )
        return ds


def _row_seed(base_seed: int, i: int) -> int:
    return int(np.random.SeedSequence([base_seed, i]).generate_state(1)[0])


def generate_dataset(
    n_raw: int,
    seed: int,
    mission: Mission = DEFAULT_MISSION,
    constants: SimConstants = DEFAULT_CONSTANTS,
) -> Dataset:
    """Sample, filter and simulate ``n_raw`` prior draws."""
    if n_raw <= 0:
        raise ValueError("n_raw must be positive")
    rejected = {"template": 0, "geometric": 0, "structural": 0, "simulate": 0, "mission": 0}
    rows: list[DatasetRow] = []
    for i in range(n_raw):
        design = sample_design(np.random.default_rng([seed, i]))
        row_seed = _row_seed(seed, i)
        obs, failed = check_design(design, mission, row_seed, constants)
        if failed is not None:
            rejected[failed] += 1
            continue
        flat = flatten(design)
        rows.append(
            DatasetRow(
                theta=flat.theta,
                mask=flat.mask,
                topology_index=flat.topology_index,
                x=obs.as_vector(),
                seed=row_seed,
            )
        )
    if not rows:
        raise EmptyDataset(f"no design survived the filters out of {n_raw}")
    ds = Dataset(
        rows=rows,
        config_digest=config_hash(mission, constants),
        acceptance={
            "n_raw": n_raw,
            "accepted": len(rows),
            "fraction": len(rows) / n_raw,
            "rejected": rejected,
        },
        mission=asdict(mission),
        constants=asdict(constants),
    )
    ds.compute_stats()
    return ds


def resimulate_flat(
    theta: np.ndarray,
    topology_index: int,
    seed: int,
    mission: Mission = DEFAULT_MISSION,
    constants: SimConstants = DEFAULT_CONSTANTS,
) -> tuple[Observation | None, str | None]:
    """Rebuild a tree from a flat vector and push it through the filters."""
    design = unflatten(theta, None, topology_index, seed)
    return check_design(design, mission, seed, constants)
