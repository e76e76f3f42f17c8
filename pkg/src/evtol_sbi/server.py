"""HTTP service over trained checkpoints for the design explorer.

Model state is loaded once and never mutated, so identical (request,
seed) pairs reproduce identical designs across restarts.  The only
mutable state is the in-memory session history, guarded by one lock.
"""

from __future__ import annotations

import threading
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .design_space import N_TOPOLOGIES, topology_from_index
from .design_space.geometry import planform_outline
from .errors import StatsMismatch
from .evaluation import topology_summary
from .pipeline import SampleRequest, sample_designs
from .surrogate_sim import (
    CHANNELS,
    DEFAULT_CONSTANTS,
    DEFAULT_MISSION,
    FEATURE_TABLE_VERSION,
    resimulate_flat,
)

CHANNEL_UNITS = {
    "total_mass": "kg",
    "wing_mass_total": "kg",
    "C_L": "-",
    "C_D": "-",
    "alpha_cruise": "deg",
    "final_SoC": "fraction",
    "cruise_power": "kW",
    "hover_power": "kW",
    "static_margin": "fraction of mean chord",
    "lift_to_drag": "-",
}


class SampleBody(BaseModel):
    x_target: dict[str, float] | None = None
    topology_index: int | None = None
    theta_pins: dict[str, float] = Field(default_factory=dict)
    n: int = 1
    seed: int = 0


class SimulateBody(BaseModel):
    theta: list[float | None]
    topology_index: int
    seed: int = 0


class HistoryNote(BaseModel):
    kind: str = "note"
    label: str = ""
    payload: dict = Field(default_factory=dict)


def create_app(
    mixedit_ckpt,
    maskedit_ckpt,
    mission=DEFAULT_MISSION,
    constants=DEFAULT_CONSTANTS,
) -> FastAPI:
    if mixedit_ckpt.stats.digest() != maskedit_ckpt.stats.digest():
        raise StatsMismatch("checkpoints disagree on standardization stats")
    hm = mixedit_ckpt.extra.get("config_hash")
    hk = maskedit_ckpt.extra.get("config_hash")
    if hm and hk and hm != hk:
        raise StatsMismatch("checkpoints were trained on different configs")

    app = FastAPI(title="evtol-sbi design service")
    stats = mixedit_ckpt.stats
    history: list[dict] = []
    history_lock = threading.Lock()

    @app.exception_handler(ValueError)
    async def value_error_handler(request: Request, err: ValueError):
        # module errors subclass ValueError; the class name is the code
        return JSONResponse(
            status_code=400,
            content={"error": {"code": type(err).__name__, "message": str(err)}},
        )

    def append_history(entry: dict) -> dict:
        with history_lock:
            entry = {"id": len(history), "time": time.time(), **entry}
            history.append(entry)
            return entry

    @app.get("/topologies")
    def topologies():
        out = []
        for i in range(N_TOPOLOGIES):
            t = topology_from_index(i)
            out.append({"index": i, **vars(t)})
        return {"n": N_TOPOLOGIES, "topologies": out}

    @app.get("/stats")
    def get_stats():
        return {
            "feature_table_version": FEATURE_TABLE_VERSION,
            "config_hash": hm,
            "channels": list(CHANNELS),
            "units": CHANNEL_UNITS,
            "x_mean": stats.x_mean.tolist(),
            "x_std": stats.x_std.tolist(),
            "theta_mean": stats.theta_mean.tolist(),
            "theta_std": stats.theta_std.tolist(),
        }

    @app.post("/sample")
    def sample(body: SampleBody):
        request = SampleRequest(
            x_target=body.x_target,
            topology_index=body.topology_index,
            theta_pins=body.theta_pins,
            n=body.n,
            seed=body.seed,
        )
        designs = sample_designs(
            mixedit_ckpt, maskedit_ckpt, request, mission, constants
        )
        summary = topology_summary([d.topology for d in designs])
        out = []
        for d in designs:
            out.append(
                {
                    "seed": d.seed,
                    "topology_index": d.topology.index,
                    "topology": vars(d.topology),
                    "theta": [None if np.isnan(v) else v for v in d.theta.tolist()],
                    "x_conditioned": (
                        None
                        if d.x_conditioned is None
                        else d.x_conditioned.tolist()
                    ),
                    "planform": planform_outline(d.aircraft),
                }
            )
        entry = append_history(
            {
                "kind": "sample",
                "request": body.model_dump(),
                "summary": summary.to_jsonable(),
                "design_seeds": [d.seed for d in designs],
            }
        )
        return {
            "designs": out,
            "summary": summary.to_jsonable(),
            "history_id": entry["id"],
        }

    @app.post("/simulate")
    def simulate(body: SimulateBody):
        theta = np.array(
            [np.nan if v is None else v for v in body.theta], dtype=float
        )
        obs, failed = resimulate_flat(
            theta, body.topology_index, body.seed, mission, constants
        )
        return {
            "observation": (
                None
                if obs is None
                else dict(zip(CHANNELS, obs.as_vector().tolist()))
            ),
            "failed": failed,
        }

    @app.get("/history")
    def get_history():
        with history_lock:
            return {"entries": list(history)}

    @app.post("/history")
    def post_history(note: HistoryNote):
        entry = append_history(
            {"kind": note.kind, "label": note.label, "payload": note.payload}
        )
        return entry

    return app
