"""Geometric and structural screening of design trees.

The geometric pass enforces the planform envelope and a bounding-volume
interference check: each rotor disk becomes a cylinder (disk radius,
0.3 m tall) and must stay clear of the wing and fuselage boxes.  The
structural pass checks root bending of wings and lift-rotor booms
against a single allowable.  Reports carry every reason found, tagged
by failure code, plus the stresses that were computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import DegenerateSection
from . import geometry
from .geometry import Layout, RotorPlacement, SurfacePlanform
from .tree import Aircraft

MAX_SPAN = 50.0
MAX_ASPECT_RATIO = 30.0
MIN_CHORD = 0.3
ALLOWABLE_STRESS = 276e6  # 6061-T6 yield, Pa
G = 9.81


@dataclass
class FeasibilityReport:
    passed: bool
    reasons: list[str] = field(default_factory=list)
    stresses: dict[str, float] = field(default_factory=dict)


def _rect_distance(
    p: tuple[float, float], lo: tuple[float, float], hi: tuple[float, float]
) -> float:
    dx = max(lo[0] - p[0], 0.0, p[0] - hi[0])
    dy = max(lo[1] - p[1], 0.0, p[1] - hi[1])
    return math.hypot(dx, dy)


def _cylinder_hits_box(
    r: RotorPlacement,
    lo: tuple[float, float, float],
    hi: tuple[float, float, float],
) -> bool:
    h = geometry.ROTOR_HALF_HEIGHT
    if r.axis == "z":
        if not (lo[2] - h < r.z < hi[2] + h):
            return False
        return _rect_distance((r.x, r.y), (lo[0], lo[1]), (hi[0], hi[1])) < r.radius
    if not (lo[0] - h < r.x < hi[0] + h):
        return False
    return _rect_distance((r.y, r.z), (lo[1], lo[2]), (hi[1], hi[2])) < r.radius


def _wing_box(
    s: SurfacePlanform,
) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    half_thick = max(s.thickness_to_chord * s.chord_root / 2.0, 0.05)
    lo = (s.x_le, -s.span / 2.0, s.z - half_thick)
    hi = (s.x_le + s.chord_root, s.span / 2.0, s.z + half_thick)
    return lo, hi


def geometric_feasibility(
    aircraft: Aircraft, layout: Layout | None = None
) -> FeasibilityReport:
    """Screen a design for planform limits and rotor interference."""
    if layout is None:
        layout = geometry.compute_layout(aircraft)
    reasons: list[str] = []

    for s in layout.main_wings:
        if s.span > MAX_SPAN:
            reasons.append(f"geometry: {s.name} span {s.span:.1f} m exceeds {MAX_SPAN:.0f} m")
        if s.aspect_ratio > MAX_ASPECT_RATIO:
            reasons.append(
                f"geometry: {s.name} aspect ratio {s.aspect_ratio:.1f} exceeds "
                f"{MAX_ASPECT_RATIO:.0f}"
            )
        for station, chord in (("root", s.chord_root), ("tip", s.chord_tip)):
            if chord < MIN_CHORD:
                reasons.append(
                    f"geometry: {s.name} {station} chord {chord:.2f} m is below {MIN_CHORD} m"
                )

    fus_lo = (0.0, -geometry.CABIN_HALF_WIDTH, -geometry.CABIN_HALF_HEIGHT)
    fus_hi = (layout.fuselage_length, geometry.CABIN_HALF_WIDTH, geometry.CABIN_HALF_HEIGHT)
    wing_boxes = [(s.name, *_wing_box(s)) for s in layout.main_wings]
    for r in layout.rotors:
        if _cylinder_hits_box(r, fus_lo, fus_hi):
            reasons.append(
                f"interference: {r.kind} rotor at ({r.x:.1f},{r.y:.1f},{r.z:.1f}) "
                "overlaps the fuselage"
            )
        for name, lo, hi in wing_boxes:
            if _cylinder_hits_box(r, lo, hi):
                reasons.append(
                    f"interference: {r.kind} rotor at ({r.x:.1f},{r.y:.1f},{r.z:.1f}) "
                    f"overlaps {name}"
                )

    return FeasibilityReport(passed=not reasons, reasons=reasons)


def wing_bending_stress(
    weight_n: float, span: float, chord_root: float, thickness_to_chord: float
) -> float:
    """Root bending stress of a wing under the 1g uniform-load model.

    Half span acts as a cantilever with line load W/(4L); the structural
    section is a solid square of side chord times thickness ratio.
    """
    side = chord_root * thickness_to_chord
    if side <= 0:
        raise DegenerateSection(f"wing section side {side} is not positive")
    arm = span / 2.0
    load_per_length = weight_n / (4.0 * arm)
    moment = load_per_length * arm**2 / 2.0
    inertia = side**4 / 12.0
    return moment * (side / 2.0) / inertia


def boom_bending_stress(mass_kg: float, length: float, radius: float, g: float = G) -> float:
    """Root bending stress of a cantilever boom loaded by a tip mass."""
    if radius <= 0:
        raise DegenerateSection(f"boom radius {radius} is not positive")
    inertia = math.pi * radius**4 / 4.0
    return mass_kg * g * length * radius / inertia


def structural_feasibility(
    aircraft: Aircraft,
    total_weight_n: float,
    layout: Layout | None = None,
    allowable: float = ALLOWABLE_STRESS,
    rotor_mass_coeff: float = 5.0,
    g: float = G,
) -> FeasibilityReport:
    """Check wing roots and lift-rotor booms against the allowable stress.

    Each wing sees the full aircraft weight under the uniform-load model.
    Each lift boom carries its two rotors, whose masses use the same fit
    as the mass buildup; the coefficient is an argument so this module
    stays independent of the simulator constants.
    """
    if layout is None:
        layout = geometry.compute_layout(aircraft)
    reasons: list[str] = []
    stresses: dict[str, float] = {}

    for s in layout.main_wings:
        sigma = wing_bending_stress(total_weight_n, s.span, s.chord_root, s.thickness_to_chord)
        stresses[s.name] = sigma
        if sigma > allowable:
            reasons.append(
                f"wing-stress: {s.name} root stress {sigma / 1e6:.1f} MPa exceeds "
                f"{allowable / 1e6:.0f} MPa"
            )

    for idx, wing in enumerate(aircraft.main_wings, start=1):
        for j, arm in enumerate(
            sorted(wing.lift_arms, key=lambda a: a.origin_y_rel), start=1
        ):
            tmpl = aircraft.lift_prop
            tip_mass = 2.0 * rotor_mass_coeff * tmpl.tip_radius**2 * math.sqrt(
                tmpl.number_of_blades
            )
            sigma = boom_bending_stress(tip_mass, arm.length_main / 2.0, arm.width / 2.0, g)
            stresses[f"wing/{idx}/lift_boom/{j}"] = sigma
            if sigma > allowable:
                reasons.append(
                    f"boom-stress: wing/{idx} lift boom {j} stress {sigma / 1e6:.1f} MPa "
                    f"exceeds {allowable / 1e6:.0f} MPa"
                )

    return FeasibilityReport(passed=not reasons, reasons=reasons, stresses=stresses)
