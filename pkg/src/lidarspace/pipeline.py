"""Frame-by-frame driver: mesh, LoS field, dynamic labels, fusion, TSDF.

Phases run in a fixed order per frame so the map a frame is tested
against never contains that frame.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .frame_mesh import FrameMesh, build_frame_mesh
from .los_field import DynamicMask, FrameField, Label, LoSField, detect_dynamic, frame_los_field
from .scan_model import ScanFrame
from .static_recon import TriangleMesh, TsdfGrid, extract_mesh, integrate

log = logging.getLogger(__name__)


@dataclass
class FrameResult:
    frame_id: int
    n_points: int
    mask: DynamicMask
    mesh: FrameMesh | None = None
    d_t: FrameField | None = None
    mesh_ms: float = 0.0
    field_ms: float = 0.0
    recon_ms: float = 0.0
    total_ms: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def timing_row(self) -> dict:
        c = self.mask.counts()
        return {"frame": self.frame_id, "points": self.n_points, "mesh_ms": round(self.mesh_ms, 3),
                "field_ms": round(self.field_ms, 3), "recon_ms": round(self.recon_ms, 3),
                "total_ms": round(self.total_ms, 3), "dynamic": c["dynamic"], "static": c["static"],
                "unobserved": c["unobserved"], "status": "ok" if self.ok else "failed"}


@dataclass
class Pipeline:
    """Stateful map builder; feed frames in time order with :meth:`process`.

    ``workers`` bounds the sector-meshing threads; ``caster`` selects the
    ray index used for the LoS field.
    """

    config: PipelineConfig = field(default_factory=PipelineConfig)
    workers: int | None = None
    caster: str = "angular"
    keep_frame_data: bool = False

    def __post_init__(self):
        l = self.config.los.l_vox
        self.field = LoSField(l)
        self.tsdf = TsdfGrid(l, self.config.trunc)
        self.frames_done = 0

    def process(self, frame: ScanFrame) -> FrameResult:
        """Run one frame through every phase.

        A failure is logged and reported in the result, and the mask marks
        every point unobserved. Meshing, ``d^t`` and detection do not touch
        the map, so a failure there leaves it exactly as before the frame.
        """
        cfg = self.config
        t0 = time.perf_counter()
        res = FrameResult(frame.frame_id, len(frame),
                          DynamicMask(frame.frame_id, np.full(len(frame), Label.UNOBSERVED, dtype=np.uint8)))
        try:
            mesh = build_frame_mesh(frame, cfg.ghpr, workers=self.workers)
            t1 = time.perf_counter()
            d_t = frame_los_field(frame, mesh, cfg.los, self.caster)
            mask = detect_dynamic(self.field, frame, d_t, cfg.los)
            self.field.fuse(d_t, cfg.los)
            t2 = time.perf_counter()
            integrate(self.tsdf, frame, mesh, mask, radius=cfg.los.update_radius)
            t3 = time.perf_counter()
        except Exception as exc:  # noqa: BLE001 - one bad frame must not end the run
            log.error("frame %d failed: %s: %s", frame.frame_id, type(exc).__name__, exc)
            res.error = f"{type(exc).__name__}: {exc}"
            res.total_ms = 1e3 * (time.perf_counter() - t0)
            return res
        res.mask = mask
        res.mesh_ms, res.field_ms, res.recon_ms = 1e3 * (t1 - t0), 1e3 * (t2 - t1), 1e3 * (t3 - t2)
        res.total_ms = 1e3 * (t3 - t0)
        if self.keep_frame_data:
            res.mesh, res.d_t = mesh, d_t
        self.frames_done += 1
        return res

    def static_mesh(self) -> TriangleMesh:
        return extract_mesh(self.tsdf)


def run_frames(frames, config: PipelineConfig = PipelineConfig(), **kw) -> tuple[Pipeline, list[FrameResult]]:
    """Process ``frames`` in order and return the pipeline and per-frame results."""
    p = Pipeline(config, **kw)
    return p, [p.process(f) for f in frames]
