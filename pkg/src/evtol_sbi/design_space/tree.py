"""Design tree component classes and JSON round-tripping.

Class and field names follow the prior's component vocabulary verbatim so
serialized trees stay self-describing.  Every node is a plain dataclass; a
"type" tag keyed to the class name drives decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass


@dataclass
class RotorTemplate:
    tip_radius: float
    hub_radius: float
    number_of_blades: int
    design_tip_mach: float
    design_altitude: float
    design_thrust: float


@dataclass
class ForwardRotor(RotorTemplate):
    origin_z_rel: float = 0.0


@dataclass
class LiftRotor(RotorTemplate):
    origin_z_rel: float = 0.3


@dataclass
class PropArm:
    origin_x_rel: float
    origin_y_rel: float
    origin_z_rel: float
    length_nose_tail: float
    width: float
    fineness: float


@dataclass
class ForwardPropArm(PropArm):
    """Boom carrying a single forward propeller at its nose."""

    length_main: float = 1.0


@dataclass
class LiftRotorArmSymmetric(PropArm):
    """Mirrored boom pair carrying four lift rotors, two per side."""

    length_main: float = 4.0


@dataclass
class WingCrossSection:
    twist_deg: float
    root_chord_percent: float
    dihedral_outboard_deg: float
    sweep_quarter_chord_deg: float
    thickness_to_chord: float


@dataclass
class RootMainWingCrossSection(WingCrossSection):
    pass


@dataclass
class TipMainWingCrossSection(WingCrossSection):
    pass


@dataclass
class InnerMainWingCrossSection(WingCrossSection):
    percent_span_location: float = 0.5


@dataclass
class Wing:
    origin_x_rel: float
    origin_z_rel: float


@dataclass
class MainWing(Wing):
    span_proj: float = 20.0
    chord_root: float = 2.0
    root_cross_section: RootMainWingCrossSection | None = None
    inner_cross_sections: list[InnerMainWingCrossSection] = field(default_factory=list)
    tip_cross_section: TipMainWingCrossSection | None = None
    prop_arms: list[ForwardPropArm | LiftRotorArmSymmetric] = field(default_factory=list)

    @property
    def lift_arms(self) -> list[LiftRotorArmSymmetric]:
        return [a for a in self.prop_arms if isinstance(a, LiftRotorArmSymmetric)]

    @property
    def fwd_arms(self) -> list[ForwardPropArm]:
        return [a for a in self.prop_arms if isinstance(a, ForwardPropArm)]


@dataclass
class HorizontalTail(Wing):
    area_reference: float = 5.0
    taper: float = 0.5
    aspect_ratio: float = 6.0
    sweep_quarter_chord_deg: float = 0.0
    thickness_to_chord: float = 0.12
    dihedral_deg: float = 0.0


@dataclass
class VerticalTail(Wing):
    area_reference: float = 2.0
    taper: float = 0.5
    aspect_ratio: float = 2.0
    sweep_quarter_chord_deg: float = 10.0
    thickness_to_chord: float = 0.12


@dataclass
class FuselageCrossSection:
    percent_x_location: float
    percent_z_location: float


@dataclass
class NoseFuselageCrossSection(FuselageCrossSection):
    height: float = 0.1
    width: float = 0.1


@dataclass
class TailFuselageCrossSection(FuselageCrossSection):
    height: float = 0.1
    width: float = 0.1


@dataclass
class InnerFuselageCrossSection(FuselageCrossSection):
    height: float = 1.0
    width: float = 1.0


@dataclass
class InnerFuselagePowerSeriesCrossSection(FuselageCrossSection):
    pass


@dataclass
class Fuselage:
    length_cabin: float
    area_wetted: float
    nose_cross_section: NoseFuselageCrossSection | None = None
    tail_cross_section: TailFuselageCrossSection | None = None
    prop: ForwardRotor | None = None


@dataclass
class RandomFuselage(Fuselage):
    inner_cross_sections: list[InnerFuselageCrossSection] = field(default_factory=list)


@dataclass
class PowerSeriesFuselage(Fuselage):
    widest_point_x_rel: float = 0.5
    widest_point_z_rel: float = 0.0
    widest_point_height: float = 1.5
    widest_point_width: float = 1.5
    power_front_height: float = 0.5
    power_front_width: float = 0.5
    power_rear_height: float = 0.5
    power_rear_width: float = 0.5
    front_cross_sections: list[InnerFuselagePowerSeriesCrossSection] = field(
        default_factory=list
    )
    rear_cross_sections: list[InnerFuselagePowerSeriesCrossSection] = field(
        default_factory=list
    )


@dataclass
class Battery:
    voltage: float
    mass: float
    battery_type: str = "Li_Ion"


@dataclass
class Aircraft:
    main_wings: list[MainWing]
    horizontal_tails: list[HorizontalTail]
    vertical_tails: list[VerticalTail]
    fuselage: Fuselage
    battery: Battery
    forward_prop: ForwardRotor | None = None
    lift_prop: LiftRotor | None = None


_REGISTRY = {
    cls.__name__: cls
    for cls in (
        RotorTemplate,
        ForwardRotor,
        LiftRotor,
        PropArm,
        ForwardPropArm,
        LiftRotorArmSymmetric,
        WingCrossSection,
        RootMainWingCrossSection,
        TipMainWingCrossSection,
        InnerMainWingCrossSection,
        Wing,
        MainWing,
        HorizontalTail,
        VerticalTail,
        FuselageCrossSection,
        NoseFuselageCrossSection,
        TailFuselageCrossSection,
        InnerFuselageCrossSection,
        InnerFuselagePowerSeriesCrossSection,
        Fuselage,
        RandomFuselage,
        PowerSeriesFuselage,
        Battery,
        Aircraft,
    )
}


def tree_to_dict(node):
    """Recursively encode a design tree into JSON-ready dicts with type tags."""
    if is_dataclass(node):
        out = {"type": type(node).__name__}
        for f in fields(node):
            out[f.name] = tree_to_dict(getattr(node, f.name))
        return out
    if isinstance(node, list):
        return [tree_to_dict(x) for x in node]
    return node


def tree_from_dict(data):
    """Inverse of :func:`tree_to_dict`."""
    if isinstance(data, dict):
        tag = data.get("type")
        if tag is None or tag not in _REGISTRY:
            raise ValueError(f"unknown component type: {tag!r}")
        kwargs = {k: tree_from_dict(v) for k, v in data.items() if k != "type"}
        return _REGISTRY[tag](**kwargs)
    if isinstance(data, list):
        return [tree_from_dict(x) for x in data]
    return data
