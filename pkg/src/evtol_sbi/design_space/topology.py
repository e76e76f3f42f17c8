"""Discrete topology descriptor: the enumerable part of a design.

144 = 2 (wings) x 2 (h-tail) x 2 (v-tail) x 2 (nose prop) x 3 (lift-arm
clusters per wing) x 3 (forward-prop arms per wing), in lexicographic order
with index 0 = (1 wing, no tails, no nose prop, no arms).  Both wings share
the per-wing arm counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from ..errors import TopologyOutOfTemplate
from .tree import Aircraft
from . import features

N_TOPOLOGIES = 144
VOCAB_SIZE = N_TOPOLOGIES + 1  # one extra mask token for the diffusion model
MASK_TOKEN = N_TOPOLOGIES


@dataclass(frozen=True, order=True)
class Topology:
    n_wings: int
    h_tail: int
    v_tail: int
    nose_prop: int
    lift_arms: int
    fwd_arms: int

    def __post_init__(self):
        if not (
            self.n_wings in (1, 2)
            and self.h_tail in (0, 1)
            and self.v_tail in (0, 1)
            and self.nose_prop in (0, 1)
            and self.lift_arms in (0, 1, 2)
            and self.fwd_arms in (0, 1, 2)
        ):
            raise TopologyOutOfTemplate(f"descriptor out of range: {self}")

    @property
    def index(self) -> int:
        idx = self.n_wings - 1
        idx = idx * 2 + self.h_tail
        idx = idx * 2 + self.v_tail
        idx = idx * 2 + self.nose_prop
        idx = idx * 3 + self.lift_arms
        idx = idx * 3 + self.fwd_arms
        return idx

    @property
    def has_forward_prop(self) -> bool:
        return self.fwd_arms > 0 or self.nose_prop == 1

    @property
    def n_lift_rotors(self) -> int:
        return 4 * self.lift_arms * self.n_wings

    @property
    def n_fwd_rotors(self) -> int:
        return self.fwd_arms * self.n_wings + self.nose_prop

    @property
    def n_rotors(self) -> int:
        return self.n_lift_rotors + self.n_fwd_rotors


def enumerate_topologies() -> list[Topology]:
    return [
        Topology(w, h, v, n, la, fa)
        for w, h, v, n, la, fa in product((1, 2), (0, 1), (0, 1), (0, 1), (0, 1, 2), (0, 1, 2))
    ]


_ALL = None


def topology_from_index(index: int) -> Topology:
    global _ALL
    if _ALL is None:
        _ALL = enumerate_topologies()
    if not 0 <= index < N_TOPOLOGIES:
        raise TopologyOutOfTemplate(f"topology index {index} outside [0, {N_TOPOLOGIES})")
    return _ALL[index]


def topology_of(aircraft: Aircraft) -> Topology:
    """Classify a design tree; raises if it falls outside the template."""
    n_wings = len(aircraft.main_wings)
    if n_wings not in (1, 2):
        raise TopologyOutOfTemplate(f"{n_wings} main wings")
    if len(aircraft.horizontal_tails) > 1 or len(aircraft.vertical_tails) > 1:
        raise TopologyOutOfTemplate("more than one tail surface of a kind")
    lift_counts = {len(w.lift_arms) for w in aircraft.main_wings}
    fwd_counts = {len(w.fwd_arms) for w in aircraft.main_wings}
    if len(lift_counts) > 1 or len(fwd_counts) > 1:
        raise TopologyOutOfTemplate("wings disagree on per-wing arm counts")
    lift_arms = lift_counts.pop()
    fwd_arms = fwd_counts.pop()
    if lift_arms > 2 or fwd_arms > 2:
        raise TopologyOutOfTemplate("more than two arms of a kind per wing")
    return Topology(
        n_wings=n_wings,
        h_tail=len(aircraft.horizontal_tails),
        v_tail=len(aircraft.vertical_tails),
        nose_prop=0 if aircraft.fuselage.prop is None else 1,
        lift_arms=lift_arms,
        fwd_arms=fwd_arms,
    )


def mask_for_topology(topo: Topology) -> np.ndarray:
    """Presence mask over the 126 feature slots, a pure function of the topology."""
    mask = np.zeros(features.N_FEATURES, dtype=bool)

    def turn_on(prefix: str) -> None:
        for i in features.slots(prefix):
            mask[i] = True

    for i in range(1, topo.n_wings + 1):
        w = f"root/wing/{i}"
        for name in ("origin_x_rel", "origin_z_rel", "span_proj", "chord_root"):
            mask[features.slot(f"{w}/{name}")] = True
        turn_on(f"{w}/root_cross_section/")
        turn_on(f"{w}/tip_cross_section/")
        for j in range(1, topo.lift_arms + 1):
            turn_on(f"{w}/lift_arm/{j}/")
        for j in range(1, topo.fwd_arms + 1):
            turn_on(f"{w}/fwd_arm/{j}/")
    if topo.h_tail:
        turn_on("root/h_tail/")
    if topo.v_tail:
        turn_on("root/v_tail/")
    turn_on("root/fuselage/length_cabin")
    turn_on("root/fuselage/area_wetted")
    turn_on("root/fuselage/nose_cross_section/")
    turn_on("root/fuselage/tail_cross_section/")
    if topo.nose_prop:
        turn_on("root/fuselage/nose_prop/")
    turn_on("root/battery/")
    if topo.has_forward_prop:
        turn_on("root/forward_prop/")
    if topo.lift_arms > 0:
        turn_on("root/lift_prop/")
    return mask
