"""Conversion between design trees and fixed-width feature vectors.

A flat design is a 126-slot real vector plus a boolean presence mask; the
mask is a pure function of the topology.  Absent slots are NaN.  Fields
that live outside the vector (internal wing and fuselage sections, the
fuselage family choice) are redrawn from the prior when a tree is
rebuilt, seeded so the rebuild is repeatable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import MaskMismatch
from . import features
from .prior import sample_fuselage_variant, sample_inner_wing_sections
from .topology import Topology, mask_for_topology, topology_from_index, topology_of
from .tree import (
    Aircraft,
    Battery,
    ForwardPropArm,
    ForwardRotor,
    HorizontalTail,
    LiftRotor,
    LiftRotorArmSymmetric,
    MainWing,
    NoseFuselageCrossSection,
    RootMainWingCrossSection,
    TailFuselageCrossSection,
    TipMainWingCrossSection,
    VerticalTail,
)

_CS_FIELDS = (
    "twist_deg",
    "root_chord_percent",
    "dihedral_outboard_deg",
    "sweep_quarter_chord_deg",
    "thickness_to_chord",
)
_ARM_FIELDS = (
    "origin_x_rel",
    "origin_y_rel",
    "origin_z_rel",
    "length_nose_tail",
    "width",
    "fineness",
    "length_main",
)
_TEMPLATE_FIELDS = (
    "tip_radius",
    "hub_radius",
    "number_of_blades",
    "design_tip_mach",
    "design_altitude",
    "design_thrust",
)
_FUSELAGE_CS_FIELDS = ("percent_x_location", "percent_z_location", "height", "width")


@dataclass
class FlatDesign:
    theta: np.ndarray
    mask: np.ndarray
    topology_index: int

    @property
    def topology(self) -> Topology:
        return topology_from_index(self.topology_index)


def flatten(aircraft: Aircraft) -> FlatDesign:
    """Project a design tree onto the canonical feature vector."""
    topo = topology_of(aircraft)
    mask = mask_for_topology(topo)
    theta = np.full(features.N_FEATURES, np.nan)

    def put(key: str, value: float) -> None:
        theta[features.slot(key)] = float(value)

    for i, wing in enumerate(aircraft.main_wings, start=1):
        w = f"root/wing/{i}"
        put(f"{w}/origin_x_rel", wing.origin_x_rel)
        put(f"{w}/origin_z_rel", wing.origin_z_rel)
        put(f"{w}/span_proj", wing.span_proj)
        put(f"{w}/chord_root", wing.chord_root)
        for section, cs in (
            ("root_cross_section", wing.root_cross_section),
            ("tip_cross_section", wing.tip_cross_section),
        ):
            if cs is None:
                raise MaskMismatch(f"wing {i} is missing its {section}")
            for name in _CS_FIELDS:
                put(f"{w}/{section}/{name}", getattr(cs, name))
        # arms are stored inboard to outboard so slot j always means the
        # j-th boom out from the fuselage
        for kind, arms in (("lift_arm", wing.lift_arms), ("fwd_arm", wing.fwd_arms)):
            for j, arm in enumerate(sorted(arms, key=lambda a: a.origin_y_rel), start=1):
                for name in _ARM_FIELDS:
                    put(f"{w}/{kind}/{j}/{name}", getattr(arm, name))

    if aircraft.horizontal_tails:
        ht = aircraft.horizontal_tails[0]
        for name in (
            "origin_x_rel",
            "origin_z_rel",
            "area_reference",
            "taper",
            "aspect_ratio",
            "sweep_quarter_chord_deg",
            "thickness_to_chord",
            "dihedral_deg",
        ):
            put(f"root/h_tail/{name}", getattr(ht, name))
    if aircraft.vertical_tails:
        vt = aircraft.vertical_tails[0]
        for name in (
            "origin_x_rel",
            "origin_z_rel",
            "area_reference",
            "taper",
            "aspect_ratio",
            "sweep_quarter_chord_deg",
            "thickness_to_chord",
        ):
            put(f"root/v_tail/{name}", getattr(vt, name))

    fus = aircraft.fuselage
    put("root/fuselage/length_cabin", fus.length_cabin)
    put("root/fuselage/area_wetted", fus.area_wetted)
    for section, cs in (
        ("nose_cross_section", fus.nose_cross_section),
        ("tail_cross_section", fus.tail_cross_section),
    ):
        if cs is None:
            raise MaskMismatch(f"fuselage is missing its {section}")
        for name in _FUSELAGE_CS_FIELDS:
            put(f"root/fuselage/{section}/{name}", getattr(cs, name))
    if topo.nose_prop:
        if fus.prop is None:
            raise MaskMismatch("topology has a nose propeller but the fuselage has none")
        put("root/fuselage/nose_prop/origin_z_rel", fus.prop.origin_z_rel)

    put("root/battery/voltage", aircraft.battery.voltage)
    put("root/battery/mass", aircraft.battery.mass)

    if topo.has_forward_prop:
        if aircraft.forward_prop is None:
            raise MaskMismatch("topology needs a forward rotor template but none is set")
        for name in _TEMPLATE_FIELDS:
            put(f"root/forward_prop/{name}", getattr(aircraft.forward_prop, name))
        put("root/forward_prop/origin_z_rel", aircraft.forward_prop.origin_z_rel)
    if topo.lift_arms > 0:
        if aircraft.lift_prop is None:
            raise MaskMismatch("topology needs a lift rotor template but none is set")
        for name in _TEMPLATE_FIELDS:
            put(f"root/lift_prop/{name}", getattr(aircraft.lift_prop, name))
        put("root/lift_prop/origin_z_rel", aircraft.lift_prop.origin_z_rel)

    if not np.isfinite(theta[mask]).all():
        raise MaskMismatch("tree left a present slot unset")
    return FlatDesign(theta=theta, mask=mask, topology_index=topo.index)


def _round_counts(theta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = theta.copy()
    counts = features.IS_COUNT & mask
    out[counts] = np.clip(
        np.round(out[counts]), features.LOWER[counts], features.UPPER[counts]
    )
    return out


def unflatten(
    theta: np.ndarray,
    mask: np.ndarray | None,
    topology_index: int,
    seed: int | np.random.Generator = 0,
) -> Aircraft:
    """Rebuild a design tree from a flat vector.

    Slots outside the feature vector are redrawn from the prior with
    ``seed``, in a fixed order: wing internal sections for wing 1 then
    wing 2, then the fuselage family and its internals.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (features.N_FEATURES,):
        raise MaskMismatch(f"theta must have shape ({features.N_FEATURES},)")
    topo = topology_from_index(topology_index)
    expected = mask_for_topology(topo)
    if mask is None:
        mask = expected
    else:
        mask = np.asarray(mask, dtype=bool)
        if not np.array_equal(mask, expected):
            raise MaskMismatch(
                f"mask does not match topology {topology_index}; "
                f"{int((mask != expected).sum())} slots disagree"
            )
    if not np.isfinite(theta[mask]).all():
        raise MaskMismatch("present slot holds a non-finite value")
    theta = _round_counts(theta, mask)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def get(key: str) -> float:
        return float(theta[features.slot(key)])

    forward_prop = None
    if topo.has_forward_prop:
        forward_prop = ForwardRotor(
            **{name: get(f"root/forward_prop/{name}") for name in _TEMPLATE_FIELDS},
            origin_z_rel=get("root/forward_prop/origin_z_rel"),
        )
        forward_prop.number_of_blades = int(forward_prop.number_of_blades)
    lift_prop = None
    if topo.lift_arms > 0:
        lift_prop = LiftRotor(
            **{name: get(f"root/lift_prop/{name}") for name in _TEMPLATE_FIELDS},
            origin_z_rel=get("root/lift_prop/origin_z_rel"),
        )
        lift_prop.number_of_blades = int(lift_prop.number_of_blades)

    wings = []
    for i in range(1, topo.n_wings + 1):
        w = f"root/wing/{i}"
        wing = MainWing(
            origin_x_rel=get(f"{w}/origin_x_rel"),
            origin_z_rel=get(f"{w}/origin_z_rel"),
            span_proj=get(f"{w}/span_proj"),
            chord_root=get(f"{w}/chord_root"),
            root_cross_section=RootMainWingCrossSection(
                **{name: get(f"{w}/root_cross_section/{name}") for name in _CS_FIELDS}
            ),
            inner_cross_sections=sample_inner_wing_sections(rng),
            tip_cross_section=TipMainWingCrossSection(
                **{name: get(f"{w}/tip_cross_section/{name}") for name in _CS_FIELDS}
            ),
        )
        arms: list = []
        for j in range(1, topo.lift_arms + 1):
            arms.append(
                LiftRotorArmSymmetric(
                    **{name: get(f"{w}/lift_arm/{j}/{name}") for name in _ARM_FIELDS}
                )
            )
        for j in range(1, topo.fwd_arms + 1):
            arms.append(
                ForwardPropArm(
                    **{name: get(f"{w}/fwd_arm/{j}/{name}") for name in _ARM_FIELDS}
                )
            )
        wing.prop_arms = arms
        wings.append(wing)

    h_tails = []
    if topo.h_tail:
        h_tails.append(
            HorizontalTail(
                origin_x_rel=get("root/h_tail/origin_x_rel"),
                origin_z_rel=get("root/h_tail/origin_z_rel"),
                area_reference=get("root/h_tail/area_reference"),
                taper=get("root/h_tail/taper"),
                aspect_ratio=get("root/h_tail/aspect_ratio"),
                sweep_quarter_chord_deg=get("root/h_tail/sweep_quarter_chord_deg"),
                thickness_to_chord=get("root/h_tail/thickness_to_chord"),
                dihedral_deg=get("root/h_tail/dihedral_deg"),
            )
        )
    v_tails = []
    if topo.v_tail:
        v_tails.append(
            VerticalTail(
                origin_x_rel=get("root/v_tail/origin_x_rel"),
                origin_z_rel=get("root/v_tail/origin_z_rel"),
                area_reference=get("root/v_tail/area_reference"),
                taper=get("root/v_tail/taper"),
                aspect_ratio=get("root/v_tail/aspect_ratio"),
                sweep_quarter_chord_deg=get("root/v_tail/sweep_quarter_chord_deg"),
                thickness_to_chord=get("root/v_tail/thickness_to_chord"),
            )
        )

    nose_prop = None
    if topo.nose_prop:
        nose_prop = ForwardRotor(
            **{name: get(f"root/forward_prop/{name}") for name in _TEMPLATE_FIELDS},
            origin_z_rel=get("root/fuselage/nose_prop/origin_z_rel"),
        )
        nose_prop.number_of_blades = int(nose_prop.number_of_blades)
    nose_cs = NoseFuselageCrossSection(
        **{
            name: get(f"root/fuselage/nose_cross_section/{name}")
            for name in _FUSELAGE_CS_FIELDS
        }
    )
    tail_cs = TailFuselageCrossSection(
        **{
            name: get(f"root/fuselage/tail_cross_section/{name}")
            for name in _FUSELAGE_CS_FIELDS
        }
    )
    fuselage = sample_fuselage_variant(
        rng,
        get("root/fuselage/length_cabin"),
        get("root/fuselage/area_wetted"),
        nose_cs,
        tail_cs,
        nose_prop,
    )
    return Aircraft(
        main_wings=wings,
        horizontal_tails=h_tails,
        vertical_tails=v_tails,
        fuselage=fuselage,
        battery=Battery(voltage=get("root/battery/voltage"), mass=get("root/battery/mass")),
        forward_prop=forward_prop,
        lift_prop=lift_prop,
    )


def unflatten_design(flat: FlatDesign, seed: int | np.random.Generator = 0) -> Aircraft:
    return unflatten(flat.theta, flat.mask, flat.topology_index, seed)
