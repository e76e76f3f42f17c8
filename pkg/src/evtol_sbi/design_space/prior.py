"""Prior sampling over design trees.

Counts come from truncated Poisson draws, booleans from a fair coin, and
continuous leaves from the uniform supports in the feature table.  Draw
order is fixed, so one seed always yields one tree.  Template rejection
(no forward propeller anywhere, etc.) happens downstream at data
generation, not here.
"""

from __future__ import annotations

import math

import numpy as np

from . import features
from .tree import (
    Aircraft,
    Battery,
    ForwardPropArm,
    ForwardRotor,
    InnerFuselageCrossSection,
    InnerFuselagePowerSeriesCrossSection,
    InnerMainWingCrossSection,
    LiftRotor,
    LiftRotorArmSymmetric,
    MainWing,
    HorizontalTail,
    NoseFuselageCrossSection,
    PowerSeriesFuselage,
    RandomFuselage,
    RootMainWingCrossSection,
    TailFuselageCrossSection,
    TipMainWingCrossSection,
    VerticalTail,
)

# internal list-length caps; these leaves are redrawn at simulation time and
# never enter the flat feature vector
_WING_INNER_CAP = 3
_FUSELAGE_INNER_CAP = 8
_POWER_SERIES_CAP = 5


def truncated_poisson(rng: np.random.Generator, lam: float, lo: int, hi: int) -> int:
    """Poisson(lam) renormalized onto the integers [lo, hi]."""
    values = np.arange(lo, hi + 1)
    pmf = np.array([lam**k * math.exp(-lam) / math.factorial(k) for k in values])
    pmf /= pmf.sum()
    return int(rng.choice(values, p=pmf))


def _u(rng: np.random.Generator, key: str) -> float:
    spec = features.FEATURES[features.slot(key)]
    return float(rng.uniform(spec.lo, spec.hi))


def _blades(rng: np.random.Generator) -> int:
    return int(rng.integers(2, 6))


def _forward_rotor(rng: np.random.Generator) -> ForwardRotor:
    return ForwardRotor(
        tip_radius=_u(rng, "root/forward_prop/tip_radius"),
        hub_radius=_u(rng, "root/forward_prop/hub_radius"),
        number_of_blades=_blades(rng),
        design_tip_mach=_u(rng, "root/forward_prop/design_tip_mach"),
        design_altitude=_u(rng, "root/forward_prop/design_altitude"),
        design_thrust=_u(rng, "root/forward_prop/design_thrust"),
        origin_z_rel=_u(rng, "root/forward_prop/origin_z_rel"),
    )


def _lift_rotor(rng: np.random.Generator) -> LiftRotor:
    return LiftRotor(
        tip_radius=_u(rng, "root/lift_prop/tip_radius"),
        hub_radius=_u(rng, "root/lift_prop/hub_radius"),
        number_of_blades=_blades(rng),
        design_tip_mach=_u(rng, "root/lift_prop/design_tip_mach"),
        design_altitude=_u(rng, "root/lift_prop/design_altitude"),
        design_thrust=_u(rng, "root/lift_prop/design_thrust"),
        origin_z_rel=_u(rng, "root/lift_prop/origin_z_rel"),
    )


def _wing_cs(rng: np.random.Generator, cls, wing: int, section: str, **extra):
    base = f"root/wing/{wing}/{section}"
    return cls(
        twist_deg=_u(rng, f"{base}/twist_deg"),
        root_chord_percent=_u(rng, f"{base}/root_chord_percent"),
        dihedral_outboard_deg=_u(rng, f"{base}/dihedral_outboard_deg"),
        sweep_quarter_chord_deg=_u(rng, f"{base}/sweep_quarter_chord_deg"),
        thickness_to_chord=_u(rng, f"{base}/thickness_to_chord"),
        **extra,
    )


def sample_inner_wing_sections(rng: np.random.Generator) -> list[InnerMainWingCrossSection]:
    n = truncated_poisson(rng, 1.5, 0, _WING_INNER_CAP)
    out = []
    for _ in range(n):
        out.append(
            InnerMainWingCrossSection(
                twist_deg=float(rng.uniform(-5, 5)),
                root_chord_percent=float(rng.uniform(0.1, 1.0)),
                dihedral_outboard_deg=float(rng.uniform(-5, 5)),
                sweep_quarter_chord_deg=float(rng.uniform(-45, 45)),
                thickness_to_chord=float(rng.uniform(0.06, 0.24)),
                percent_span_location=float(rng.uniform(0.01, 0.99)),
            )
        )
    return out


def _lift_arm(rng: np.random.Generator, wing: int, j: int) -> LiftRotorArmSymmetric:
    base = f"root/wing/{wing}/lift_arm/{j}"
    return LiftRotorArmSymmetric(
        origin_x_rel=_u(rng, f"{base}/origin_x_rel"),
        origin_y_rel=_u(rng, f"{base}/origin_y_rel"),
        origin_z_rel=_u(rng, f"{base}/origin_z_rel"),
        length_nose_tail=_u(rng, f"{base}/length_nose_tail"),
        width=_u(rng, f"{base}/width"),
        fineness=_u(rng, f"{base}/fineness"),
        length_main=_u(rng, f"{base}/length_main"),
    )


def _fwd_arm(rng: np.random.Generator, wing: int, j: int) -> ForwardPropArm:
    base = f"root/wing/{wing}/fwd_arm/{j}"
    return ForwardPropArm(
        origin_x_rel=_u(rng, f"{base}/origin_x_rel"),
        origin_y_rel=_u(rng, f"{base}/origin_y_rel"),
        origin_z_rel=_u(rng, f"{base}/origin_z_rel"),
        length_nose_tail=_u(rng, f"{base}/length_nose_tail"),
        width=_u(rng, f"{base}/width"),
        fineness=_u(rng, f"{base}/fineness"),
        length_main=_u(rng, f"{base}/length_main"),
    )


def _main_wing(rng: np.random.Generator, wing: int, lift_arms: int, fwd_arms: int) -> MainWing:
    w = f"root/wing/{wing}"
    built = MainWing(
        origin_x_rel=_u(rng, f"{w}/origin_x_rel"),
        origin_z_rel=_u(rng, f"{w}/origin_z_rel"),
        span_proj=_u(rng, f"{w}/span_proj"),
        chord_root=_u(rng, f"{w}/chord_root"),
        root_cross_section=_wing_cs(rng, RootMainWingCrossSection, wing, "root_cross_section"),
        inner_cross_sections=sample_inner_wing_sections(rng),
        tip_cross_section=_wing_cs(rng, TipMainWingCrossSection, wing, "tip_cross_section"),
    )
    arms: list = [_lift_arm(rng, wing, j) for j in range(1, lift_arms + 1)]
    arms += [_fwd_arm(rng, wing, j) for j in range(1, fwd_arms + 1)]
    built.prop_arms = arms
    return built


def sample_fuselage(rng: np.random.Generator, nose_prop: ForwardRotor | None):
    """Draw a fuselage, including the variant choice and its internal sections."""
    length_cabin = _u(rng, "root/fuselage/length_cabin")
    area_wetted = _u(rng, "root/fuselage/area_wetted")
    nose = NoseFuselageCrossSection(
        percent_x_location=_u(rng, "root/fuselage/nose_cross_section/percent_x_location"),
        percent_z_location=_u(rng, "root/fuselage/nose_cross_section/percent_z_location"),
        height=_u(rng, "root/fuselage/nose_cross_section/height"),
        width=_u(rng, "root/fuselage/nose_cross_section/width"),
    )
    tail = TailFuselageCrossSection(
        percent_x_location=_u(rng, "root/fuselage/tail_cross_section/percent_x_location"),
        percent_z_location=_u(rng, "root/fuselage/tail_cross_section/percent_z_location"),
        height=_u(rng, "root/fuselage/tail_cross_section/height"),
        width=_u(rng, "root/fuselage/tail_cross_section/width"),
    )
    return sample_fuselage_variant(rng, length_cabin, area_wetted, nose, tail, nose_prop)


def sample_fuselage_variant(
    rng: np.random.Generator,
    length_cabin: float,
    area_wetted: float,
    nose: NoseFuselageCrossSection,
    tail: TailFuselageCrossSection,
    nose_prop: ForwardRotor | None,
):
    """Choose the fuselage family and fill its internal sections."""
    if int(rng.integers(0, 2)) == 0:
        n_inner = truncated_poisson(rng, 4.5, 0, _FUSELAGE_INNER_CAP)
        inner = [
            InnerFuselageCrossSection(
                percent_x_location=float(rng.uniform(0, 1)),
                percent_z_location=float(rng.uniform(-0.1, 0.1)),
                height=float(rng.uniform(0.1, 3.0)),
                width=float(rng.uniform(0.1, 3.0)),
            )
            for _ in range(n_inner)
        ]
        return RandomFuselage(
            length_cabin=length_cabin,
            area_wetted=area_wetted,
            nose_cross_section=nose,
            tail_cross_section=tail,
            prop=nose_prop,
            inner_cross_sections=inner,
        )
    n_front = truncated_poisson(rng, 2.5, 0, _POWER_SERIES_CAP)
    n_rear = truncated_poisson(rng, 2.5, 0, _POWER_SERIES_CAP)
    ps_sections = lambda n: [
        InnerFuselagePowerSeriesCrossSection(
            percent_x_location=float(rng.uniform(0, 1)),
            percent_z_location=float(rng.uniform(-0.1, 0.1)),
        )
        for _ in range(n)
    ]
    return PowerSeriesFuselage(
        length_cabin=length_cabin,
        area_wetted=area_wetted,
        nose_cross_section=nose,
        tail_cross_section=tail,
        prop=nose_prop,
        widest_point_x_rel=float(rng.uniform(0.1, 0.9)),
        widest_point_z_rel=float(rng.uniform(-0.1, 0.1)),
        widest_point_height=float(rng.uniform(0.1, 3.0)),
        widest_point_width=float(rng.uniform(0.1, 3.0)),
        power_front_height=float(rng.uniform(0, 1)),
        power_front_width=float(rng.uniform(0, 1)),
        power_rear_height=float(rng.uniform(0, 1)),
        power_rear_width=float(rng.uniform(0, 1)),
        front_cross_sections=ps_sections(n_front),
        rear_cross_sections=ps_sections(n_rear),
    )


def sample_design(rng: np.random.Generator | int) -> Aircraft:
    """Draw one complete design tree from the prior."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)

    n_wings = truncated_poisson(rng, 1.5, 1, 2)
    h_tail = truncated_poisson(rng, 0.5, 0, 1)
    v_tail = truncated_poisson(rng, 0.5, 0, 1)
    nose = int(rng.integers(0, 2))
    lift_arms = truncated_poisson(rng, 1.5, 0, 2)
    fwd_arms = truncated_poisson(rng, 1.5, 0, 2)

    forward_prop = _forward_rotor(rng)
    lift_prop = _lift_rotor(rng)
    battery = Battery(
        voltage=_u(rng, "root/battery/voltage"),
        mass=_u(rng, "root/battery/mass"),
    )
    nose_prop = None
    if nose:
        # the nose propeller is the forward template with its own vertical seat
        nose_prop = ForwardRotor(
            tip_radius=forward_prop.tip_radius,
            hub_radius=forward_prop.hub_radius,
            number_of_blades=forward_prop.number_of_blades,
            design_tip_mach=forward_prop.design_tip_mach,
            design_altitude=forward_prop.design_altitude,
            design_thrust=forward_prop.design_thrust,
            origin_z_rel=_u(rng, "root/fuselage/nose_prop/origin_z_rel"),
        )
    fuselage = sample_fuselage(rng, nose_prop)
    wings = [_main_wing(rng, i, lift_arms, fwd_arms) for i in range(1, n_wings + 1)]
    h_tails = (
        [
            HorizontalTail(
                origin_x_rel=_u(rng, "root/h_tail/origin_x_rel"),
                origin_z_rel=_u(rng, "root/h_tail/origin_z_rel"),
                area_reference=_u(rng, "root/h_tail/area_reference"),
                taper=_u(rng, "root/h_tail/taper"),
                aspect_ratio=_u(rng, "root/h_tail/aspect_ratio"),
                sweep_quarter_chord_deg=_u(rng, "root/h_tail/sweep_quarter_chord_deg"),
                thickness_to_chord=_u(rng, "root/h_tail/thickness_to_chord"),
                dihedral_deg=_u(rng, "root/h_tail/dihedral_deg"),
            )
        ]
        if h_tail
        else []
    )
    v_tails = (
        [
            VerticalTail(
                origin_x_rel=_u(rng, "root/v_tail/origin_x_rel"),
                origin_z_rel=_u(rng, "root/v_tail/origin_z_rel"),
                area_reference=_u(rng, "root/v_tail/area_reference"),
                taper=_u(rng, "root/v_tail/taper"),
                aspect_ratio=_u(rng, "root/v_tail/aspect_ratio"),
                sweep_quarter_chord_deg=_u(rng, "root/v_tail/sweep_quarter_chord_deg"),
                thickness_to_chord=_u(rng, "root/v_tail/thickness_to_chord"),
            )
        ]
        if v_tail
        else []
    )
    return Aircraft(
        main_wings=wings,
        horizontal_tails=h_tails,
        vertical_tails=v_tails,
        fuselage=fuselage,
        battery=battery,
        forward_prop=forward_prop,
        lift_prop=lift_prop,
    )
