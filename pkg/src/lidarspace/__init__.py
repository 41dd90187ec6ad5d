"""Per-frame LiDAR meshing, line-of-sight free-space fields and static mapping."""

import numba as _numba

# prefer OpenMP; probing an outdated TBB only produces a warning
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .bvh import AngularIndex, BvhIndex, brute_force_intersect  # noqa: E402
from .frame_mesh import FrameMesh, GhprParams, build_frame_mesh, estimate_normals, ghpr_invert  # noqa: E402
from .hull import HullDegeneracyError, HullMesh, brute_force_hull, quickhull  # noqa: E402
from .los_field import (DynamicMask, FieldParams, FrameField, Label, LoSField, Occupancy,  # noqa: E402
                        detect_dynamic, frame_los_field, is_free)
from .scan_model import Pose, ScanFrame, Trajectory, load_frames  # noqa: E402
from .static_recon import TriangleMesh, TsdfGrid, extract_mesh, integrate  # noqa: E402

__all__ = [
    "AngularIndex", "BvhIndex", "brute_force_intersect",
    "FrameMesh", "GhprParams", "build_frame_mesh", "estimate_normals", "ghpr_invert",
    "HullDegeneracyError", "HullMesh", "brute_force_hull", "quickhull",
    "DynamicMask", "FieldParams", "FrameField", "Label", "LoSField", "Occupancy",
    "detect_dynamic", "frame_los_field", "is_free",
    "Pose", "ScanFrame", "Trajectory", "load_frames",
    "TriangleMesh", "TsdfGrid", "extract_mesh", "integrate",
]
