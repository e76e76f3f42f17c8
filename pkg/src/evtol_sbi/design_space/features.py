"""Canonical flat feature table for the design space.

126 retained scalar leaves in a fixed, versioned order: depth-first over the
maximal tree with components ordered wing 1, wing 2 (each with its arm slots
inboard to outboard), horizontal tail, vertical tail, fuselage (plus the nose
propeller vertical offset), battery, then the two aircraft-level rotor
templates shared by every propeller instance.

Internal wing/fuselage cross sections and the fuselage variant are not part
of the table; they are redrawn from the prior at unflatten time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_TABLE_VERSION = "design-features-v1"

REAL = "real"
COUNT = "count"


@dataclass(frozen=True)
class FeatureSpec:
    key: str
    lo: float
    hi: float
    kind: str = REAL


_WING_CS_FIELDS = [
    ("twist_deg", -5.0, 5.0),
    ("root_chord_percent", 0.1, 1.0),
    ("dihedral_outboard_deg", -5.0, 5.0),
    ("sweep_quarter_chord_deg", -45.0, 45.0),
    ("thickness_to_chord", 0.06, 0.24),
]

_ARM_BASE_FIELDS = [
    ("origin_x_rel", -0.5, 0.5),
    ("origin_y_rel", 0.1, 1.0),
    ("origin_z_rel", -0.5, 0.5),
    ("length_nose_tail", 0.05, 0.3),
    ("width", 0.05, 0.3),
    ("fineness", 0.5, 1.0),
]

_ROTOR_TEMPLATE_FIELDS = [
    ("tip_radius", 0.5, 1.5),
    ("hub_radius", 0.1, 0.2),
    ("number_of_blades", 2.0, 5.0),
    ("design_tip_mach", 0.5, 0.8),
    ("design_altitude", 500.0, 2000.0),
    ("design_thrust", 1500.0, 3000.0),
]


def _build_table() -> list[FeatureSpec]:
    specs: list[FeatureSpec] = []

    def add(key: str, lo: float, hi: float, kind: str = REAL) -> None:
        specs.append(FeatureSpec(key, lo, hi, kind))

    for i in (1, 2):
        w = f"root/wing/{i}"
        add(f"{w}/origin_x_rel", 0.0, 1.0)
        add(f"{w}/origin_z_rel", -0.5, 0.5)
        add(f"{w}/span_proj", 10.0, 40.0)
        add(f"{w}/chord_root", 0.5, 5.0)
        for section in ("root_cross_section", "tip_cross_section"):
            for name, lo, hi in _WING_CS_FIELDS:
                add(f"{w}/{section}/{name}", lo, hi)
        for j in (1, 2):
            for name, lo, hi in _ARM_BASE_FIELDS:
                add(f"{w}/lift_arm/{j}/{name}", lo, hi)
            add(f"{w}/lift_arm/{j}/length_main", 1.0, 8.0)
        for j in (1, 2):
            for name, lo, hi in _ARM_BASE_FIELDS:
                add(f"{w}/fwd_arm/{j}/{name}", lo, hi)
            add(f"{w}/fwd_arm/{j}/length_main", 0.5, 3.0)

    add("root/h_tail/origin_x_rel", 0.0, 1.0)
    add("root/h_tail/origin_z_rel", -0.5, 0.5)
    add("root/h_tail/area_reference", 0.0, 30.0)
    add("root/h_tail/taper", 0.1, 1.0)
    add("root/h_tail/aspect_ratio", 3.0, 15.0)
    add("root/h_tail/sweep_quarter_chord_deg", -30.0, 30.0)
    add("root/h_tail/thickness_to_chord", 0.06, 0.24)
    add("root/h_tail/dihedral_deg", -5.0, 5.0)

    add("root/v_tail/origin_x_rel", 0.0, 1.0)
    add("root/v_tail/origin_z_rel", -0.5, 0.5)
    add("root/v_tail/area_reference", 0.5, 5.0)
    add("root/v_tail/taper", 0.1, 1.0)
    add("root/v_tail/aspect_ratio", 1.0, 5.0)
    add("root/v_tail/sweep_quarter_chord_deg", 0.0, 30.0)
    add("root/v_tail/thickness_to_chord", 0.06, 0.24)

    add("root/fuselage/length_cabin", 1.5, 4.0)
    add("root/fuselage/area_wetted", 15.0, 30.0)
    for section in ("nose_cross_section", "tail_cross_section"):
        add(f"root/fuselage/{section}/percent_x_location", 0.0, 1.0)
        add(f"root/fuselage/{section}/percent_z_location", -0.1, 0.1)
        add(f"root/fuselage/{section}/height", 0.05, 0.2)
        add(f"root/fuselage/{section}/width", 0.05, 0.2)

    add("root/fuselage/nose_prop/origin_z_rel", -0.5, 0.5)

    add("root/battery/voltage", 300.0, 800.0)
    add("root/battery/mass", 300.0, 2000.0)

    for name, lo, hi in _ROTOR_TEMPLATE_FIELDS:
        kind = COUNT if name == "number_of_blades" else REAL
        add(f"root/forward_prop/{name}", lo, hi, kind)
    add("root/forward_prop/origin_z_rel", -0.5, 0.5)
    for name, lo, hi in _ROTOR_TEMPLATE_FIELDS:
        kind = COUNT if name == "number_of_blades" else REAL
        add(f"root/lift_prop/{name}", lo, hi, kind)
    add("root/lift_prop/origin_z_rel", 0.1, 0.5)

    return specs


FEATURES: tuple[FeatureSpec, ...] = tuple(_build_table())
FEATURE_KEYS: tuple[str, ...] = tuple(f.key for f in FEATURES)
FEATURE_INDEX: dict[str, int] = {f.key: i for i, f in enumerate(FEATURES)}
N_FEATURES = len(FEATURES)

LOWER = np.array([f.lo for f in FEATURES])
UPPER = np.array([f.hi for f in FEATURES])
IS_COUNT = np.array([f.kind == COUNT for f in FEATURES])


def slot(key: str) -> int:
    return FEATURE_INDEX[key]


def slots(prefix: str) -> list[int]:
    """All slot indices whose key starts with the given path prefix."""
    return [i for i, k in enumerate(FEATURE_KEYS) if k.startswith(prefix)]


def clamp_to_prior(theta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Clamp present entries to the prior support; counts snap to the nearest
    integer in range.  Absent entries pass through untouched."""
    theta = np.array(theta, dtype=np.float64, copy=True)
    mask = np.asarray(mask, dtype=bool)
    present = mask & np.isfinite(theta)
    clamped = np.clip(theta, LOWER, UPPER)
    clamped = np.where(IS_COUNT, np.clip(np.round(clamped), LOWER, UPPER), clamped)
    theta[present] = clamped[present]
    return theta
