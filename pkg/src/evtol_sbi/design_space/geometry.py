"""Nominal 3D placement of a design tree.

Relative coordinates in the tree are turned into meters here, with one
convention set used everywhere (feasibility, trim, rendering):

* the fuselage runs from x=0 to ``FUSELAGE_LENGTH_RATIO * length_cabin``
* wing and tail ``origin_x_rel`` scale the fuselage length, their
  ``origin_z_rel`` scales ``WING_Z_SCALE``
* prop arms attach near the local quarter chord; their spanwise station
  runs from just outside the cabin wall (booms cannot pass through the
  hull) to the tip as ``origin_y_rel`` goes 0 to 1
* a lift arm is a mirrored pair of booms, each carrying two rotors fore
  and aft of the attachment; lift rotors ride pylons above the boom so
  the disks clear the wing surface
* a forward arm is a single boom pointing upstream with a tractor prop
  ahead of the leading edge, odd arms to starboard and even arms to port
* the nose propeller sits just ahead of the fuselage at ``NOSE_PROP_X``

Only feature-vector fields enter the layout, so two trees with the same
flat vector always produce the same placement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .tree import Aircraft, HorizontalTail, MainWing, VerticalTail

FUSELAGE_LENGTH_RATIO = 2.5
WING_Z_SCALE = 2.0
ARM_Z_SCALE = 0.5
LIFT_ROTOR_Z_SCALE = 3.0
LIFT_PYLON_HEIGHT = 0.3
FWD_PROP_Z_SCALE = 0.5
NOSE_PROP_X = -0.16
CABIN_HALF_WIDTH = 0.75
CABIN_HALF_HEIGHT = 0.75
ARM_ROOT_CLEARANCE = 0.9
ROTOR_HALF_HEIGHT = 0.15
BATTERY_TRIM_SHIFT = 0.1


@dataclass(frozen=True)
class SurfacePlanform:
    name: str
    x_le: float
    z: float
    span: float
    chord_root: float
    chord_tip: float
    sweep_deg: float
    area: float
    aspect_ratio: float
    x_ac: float
    c_mac: float
    thickness_to_chord: float
    vertical: bool = False


@dataclass(frozen=True)
class RotorPlacement:
    kind: str  # "lift", "forward" or "nose"
    x: float
    y: float
    z: float
    radius: float
    axis: str  # spin axis, "z" for lift rotors, "x" for props
    wing: int = 0


@dataclass(frozen=True)
class BoomPlacement:
    kind: str  # "lift" or "fwd"
    wing: int
    x_center: float
    y: float
    z: float
    length: float
    radius: float


@dataclass(frozen=True)
class Layout:
    fuselage_length: float
    surfaces: tuple[SurfacePlanform, ...]
    rotors: tuple[RotorPlacement, ...]
    booms: tuple[BoomPlacement, ...]
    battery_x: float
    mean_chord: float

    @property
    def main_wings(self) -> tuple[SurfacePlanform, ...]:
        return tuple(s for s in self.surfaces if s.name.startswith("wing/"))


def _mac(chord_root: float, taper: float) -> float:
    return (2.0 / 3.0) * chord_root * (1 + taper + taper**2) / (1 + taper)


def _y_mac(span: float, taper: float) -> float:
    return (span / 6.0) * (1 + 2 * taper) / (1 + taper)


def _wing_planform(wing: MainWing, idx: int, fuselage_length: float) -> SurfacePlanform:
    root = wing.root_cross_section
    tip = wing.tip_cross_section
    c_root = wing.chord_root * root.root_chord_percent
    c_tip = wing.chord_root * tip.root_chord_percent
    taper = c_tip / c_root
    b = wing.span_proj
    area = b * (c_root + c_tip) / 2.0
    sweep = root.sweep_quarter_chord_deg
    x_le = wing.origin_x_rel * fuselage_length
    x_ac = x_le + 0.25 * c_root + math.tan(math.radians(sweep)) * _y_mac(b, taper)
    return SurfacePlanform(
        name=f"wing/{idx}",
        x_le=x_le,
        z=wing.origin_z_rel * WING_Z_SCALE,
        span=b,
        chord_root=c_root,
        chord_tip=c_tip,
        sweep_deg=sweep,
        area=area,
        aspect_ratio=b**2 / area,
        x_ac=x_ac,
        c_mac=_mac(c_root, taper),
        thickness_to_chord=root.thickness_to_chord,
    )


def _tail_planform(
    tail: HorizontalTail | VerticalTail, name: str, fuselage_length: float
) -> SurfacePlanform:
    area = tail.area_reference
    ar = tail.aspect_ratio
    taper = tail.taper
    span = math.sqrt(max(ar * area, 1e-12))
    c_root = 2.0 * area / (span * (1 + taper)) if span > 0 else 0.0
    x_le = tail.origin_x_rel * fuselage_length
    sweep = tail.sweep_quarter_chord_deg
    x_ac = x_le + 0.25 * c_root + math.tan(math.radians(sweep)) * _y_mac(span, taper)
    return SurfacePlanform(
        name=name,
        x_le=x_le,
        z=tail.origin_z_rel * WING_Z_SCALE,
        span=span,
        chord_root=c_root,
        chord_tip=c_root * taper,
        sweep_deg=sweep,
        area=area,
        aspect_ratio=ar,
        x_ac=x_ac,
        c_mac=_mac(c_root, taper),
        thickness_to_chord=tail.thickness_to_chord,
        vertical=name == "v_tail",
    )


def compute_layout(aircraft: Aircraft) -> Layout:
    """Place every surface, boom and rotor of a design tree in meters."""
    fuselage_length = FUSELAGE_LENGTH_RATIO * aircraft.fuselage.length_cabin

    surfaces: list[SurfacePlanform] = []
    rotors: list[RotorPlacement] = []
    booms: list[BoomPlacement] = []

    for idx, wing in enumerate(aircraft.main_wings, start=1):
        plan = _wing_planform(wing, idx, fuselage_length)
        surfaces.append(plan)
        z_wing = plan.z
        for kind, arms in (("lift", wing.lift_arms), ("fwd", wing.fwd_arms)):
            for j, arm in enumerate(sorted(arms, key=lambda a: a.origin_y_rel), start=1):
                y_abs = ARM_ROOT_CLEARANCE + arm.origin_y_rel * max(
                    plan.span / 2.0 - ARM_ROOT_CLEARANCE, 0.0
                )
                x_attach = plan.x_le + (0.25 + arm.origin_x_rel) * plan.chord_root
                z_arm = z_wing + ARM_Z_SCALE * arm.origin_z_rel
                if kind == "lift":
                    tmpl = aircraft.lift_prop
                    z_rot = z_arm + LIFT_PYLON_HEIGHT + LIFT_ROTOR_Z_SCALE * tmpl.origin_z_rel
                    for side in (1.0, -1.0):
                        booms.append(
                            BoomPlacement(
                                kind="lift",
                                wing=idx,
                                x_center=x_attach,
                                y=side * y_abs,
                                z=z_arm,
                                length=arm.length_main,
                                radius=arm.width / 2.0,
                            )
                        )
                        for dx in (-arm.length_main / 2.0, arm.length_main / 2.0):
                            rotors.append(
                                RotorPlacement(
                                    kind="lift",
                                    x=x_attach + dx,
                                    y=side * y_abs,
                                    z=z_rot,
                                    radius=tmpl.tip_radius,
                                    axis="z",
                                    wing=idx,
                                )
                            )
                else:
                    tmpl = aircraft.forward_prop
                    side = 1.0 if j % 2 == 1 else -1.0
                    # tractor disk always ahead of the leading edge
                    x_prop = plan.x_le + ROTOR_HALF_HEIGHT - arm.length_main
                    booms.append(
                        BoomPlacement(
                            kind="fwd",
                            wing=idx,
                            x_center=(x_attach + x_prop) / 2.0,
                            y=side * y_abs,
                            z=z_arm,
                            length=arm.length_main,
                            radius=arm.width / 2.0,
                        )
                    )
                    rotors.append(
                        RotorPlacement(
                            kind="forward",
                            x=x_prop,
                            y=side * y_abs,
                            z=z_arm + FWD_PROP_Z_SCALE * tmpl.origin_z_rel,
                            radius=tmpl.tip_radius,
                            axis="x",
                            wing=idx,
                        )
                    )

    for tail in aircraft.horizontal_tails:
        surfaces.append(_tail_planform(tail, "h_tail", fuselage_length))
    for tail in aircraft.vertical_tails:
        surfaces.append(_tail_planform(tail, "v_tail", fuselage_length))

    if aircraft.fuselage.prop is not None:
        nose = aircraft.fuselage.prop
        rotors.append(
            RotorPlacement(
                kind="nose",
                x=NOSE_PROP_X,
                y=0.0,
                z=WING_Z_SCALE * nose.origin_z_rel,
                radius=nose.tip_radius,
                axis="x",
            )
        )

    mains = [s for s in surfaces if s.name.startswith("wing/")]
    area_total = sum(s.area for s in mains)
    span_total = sum(s.span for s in mains)
    mean_chord = area_total / span_total
    x_ac_wing = sum(s.area * s.x_ac for s in mains) / area_total
    # default battery bay under the lift centroid; the mass model slides
    # it along the cabin to trim the loaded cg
    battery_x = x_ac_wing - BATTERY_TRIM_SHIFT * mean_chord

    return Layout(
        fuselage_length=fuselage_length,
        surfaces=tuple(surfaces),
        rotors=tuple(rotors),
        booms=tuple(booms),
        battery_x=battery_x,
        mean_chord=mean_chord,
    )


def _surface_polygon(s: SurfacePlanform) -> list[list[float]]:
    if s.vertical:
        # side surface seen from above: thin sliver along the root chord
        return [
            [s.x_le, -0.05],
            [s.x_le + s.chord_root, -0.05],
            [s.x_le + s.chord_root, 0.05],
            [s.x_le, 0.05],
        ]
    half = s.span / 2.0
    x_tip_le = (
        s.x_le
        + math.tan(math.radians(s.sweep_deg)) * half
        + 0.25 * (s.chord_root - s.chord_tip)
    )
    return [
        [s.x_le, 0.0],
        [x_tip_le, half],
        [x_tip_le + s.chord_tip, half],
        [s.x_le + s.chord_root, 0.0],
        [x_tip_le + s.chord_tip, -half],
        [x_tip_le, -half],
    ]


def planform_outline(aircraft: Aircraft) -> dict:
    """Top-view outline of a design, ready to serialize for a client."""
    layout = compute_layout(aircraft)
    L = layout.fuselage_length
    w = CABIN_HALF_WIDTH
    polygons = [
        {
            "name": "fuselage",
            "points": [
                [0.0, 0.0],
                [0.12 * L, w],
                [0.75 * L, w],
                [L, 0.0],
                [0.75 * L, -w],
                [0.12 * L, -w],
            ],
        }
    ]
    for s in layout.surfaces:
        polygons.append({"name": s.name, "points": _surface_polygon(s)})
    for b in layout.booms:
        polygons.append(
            {
                "name": f"boom/{b.kind}/wing{b.wing}",
                "points": [
                    [b.x_center - b.length / 2.0, b.y - b.radius],
                    [b.x_center + b.length / 2.0, b.y - b.radius],
                    [b.x_center + b.length / 2.0, b.y + b.radius],
                    [b.x_center - b.length / 2.0, b.y + b.radius],
                ],
            }
        )
    circles = [
        {"name": f"rotor/{r.kind}", "cx": r.x, "cy": r.y, "r": r.radius}
        for r in layout.rotors
    ]
    return {"polygons": polygons, "circles": circles, "fuselage_length": L}
