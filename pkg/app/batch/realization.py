"""
One foliage realization end to end: envelope -> soup -> placed scene -> MPCs.

Also hosts the single-run writers behind the ``generate`` and ``trace``
subcommands.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from app.core.rng import derive_seed, spawn_streams
from app.schemas.channel import MultipathComponent
from app.schemas.foliage_schema import FoliageParams, SweepConfig
from app.schemas.geometry import ScattererSoup, TriMesh
from app.services import channel_stats
from app.services.envelope_gen import envelope_diagnostics, generate_envelope, volume_centroid
from app.services.mesh_io import export_mesh, export_scene_obj
from app.services.ray_engine import Scene, mpcs_to_frame, trace
from app.services.scatter_fill import fill

logger = logging.getLogger(__name__)

__all__ = ["Realization", "build_crown", "realize", "single_run_params", "write_generate", "write_trace"]

FLOAT_FORMAT = "%.9g"


@dataclass(frozen=True)
class Realization:
    params: FoliageParams
    envelope: TriMesh
    soup: ScattererSoup
    scene: Scene
    mpcs: Optional[list[MultipathComponent]] = None


def build_crown(config: SweepConfig, params: FoliageParams) -> Realization:
    """Envelope and soup for ``params.seed``, moved so the crown centroid sits at ``crown_center``."""
    streams = spawn_streams(params.seed, config.tracer.seed)
    envelope = generate_envelope(params, streams.envelope)
    soup = fill(envelope, params, streams.fill)
    offset = np.asarray(config.geometry.crown_center, dtype=np.float64) - volume_centroid(envelope)
    envelope = envelope.translated(offset)
    soup = soup.translated(offset)
    scene = Scene.from_geometry(soup, config.geometry, config.material)
    return Realization(params=params, envelope=envelope, soup=soup, scene=scene)


def realize(config: SweepConfig, params: FoliageParams, *, threads: int = 1, chunk: int = 8192) -> Realization:
    crown = build_crown(config, params)
    # The ray stream is independent of the geometry streams, so it is re-spawned here.
    ray_rng = spawn_streams(params.seed, config.tracer.seed).ray
    mpcs = trace(crown.scene, config.tracer, ray_rng, threads=threads, chunk=chunk)
    return Realization(params=params, envelope=crown.envelope, soup=crown.soup, scene=crown.scene, mpcs=mpcs)


def single_run_params(config: SweepConfig, seed: Optional[int] = None) -> FoliageParams:
    """Parameters of the first sweep point; the seed defaults to realization 0 of that point."""
    value = config.sweep_values[0]
    if seed is None:
        seed = derive_seed(config.global_seed, value, 0)
    return config.params_at(value, seed=seed)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_generate(config: SweepConfig, params: FoliageParams, out_dir: Path) -> dict:
    """Export envelope and soup meshes (OBJ and PLY) plus the merged scene OBJ."""
    start_ts = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    crown = build_crown(config, params)
    for suffix in (".obj", ".ply"):
        export_mesh(crown.envelope, out_dir / f"envelope{suffix}")
        if crown.soup.count:
            export_mesh(crown.soup.mesh, out_dir / f"foliage{suffix}")
    export_scene_obj(crown.envelope, crown.soup, out_dir / "scene.obj")

    summary = {
        "seed": params.seed,
        "params": params.model_dump(mode="json"),
        "triangles": crown.soup.count,
        "envelope": envelope_diagnostics(crown.envelope),
    }
    _write_json(out_dir / "generate.json", summary)
    logger.info(
        "generate written",
        extra={"out": str(out_dir), "triangles": crown.soup.count, "elapsed_ms": int((time.perf_counter() - start_ts) * 1000)},
    )
    return summary


def write_trace(config: SweepConfig, params: FoliageParams, out_dir: Path, *, threads: int = 1, chunk: int = 8192) -> dict:
    """Trace one realization and dump MPCs, CIR, PDP, CDF and a JSON summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    run = realize(config, params, threads=threads, chunk=chunk)
    mpcs = run.mpcs or []
    mpcs_to_frame(mpcs).to_csv(out_dir / "mpcs.csv", index=False, float_format=FLOAT_FORMAT)

    channel = config.channel
    summary = channel_stats.summarize(mpcs, channel)
    cir = channel_stats.shape_cir(mpcs, channel.bandwidth_hz, channel.oversample)
    pdp = channel_stats.average_pdp([cir])
    channel_stats.cir_to_frame(cir).to_csv(out_dir / "cir.csv", index=False, float_format=FLOAT_FORMAT)
    channel_stats.pdp_to_frame(pdp).to_csv(out_dir / "pdp.csv", index=False, float_format=FLOAT_FORMAT)
    cdf = channel_stats.empirical_cdf(channel_stats.gated_power_dbm(pdp.power, channel.threshold_db))
    channel_stats.cdf_to_frame(cdf).to_csv(out_dir / "cdf.csv", index=False, float_format=FLOAT_FORMAT)

    payload = {"seed": params.seed, "params": params.model_dump(mode="json"), **summary}
    _write_json(out_dir / "summary.json", payload)
    return payload
