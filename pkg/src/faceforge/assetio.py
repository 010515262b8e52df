"""Model-asset binary format.

Little-endian; magic "MFA1"; header of eight u32 (N, F, S, Ex, J, P,
uv_count, flags); then fixed-order sections: template f32 N*3, faces u32 F*3,
shape basis f32 S*N*3, expression basis f32 Ex*N*3, pose-corrective basis
f32 P*N*3, joint regressor f32 J*N, skinning f32 N*J, parents i32 J,
UVs f32 uv_count*2. A `.mfa.json` sidecar mirrors the header.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .morphable import AssetError, MorphableModel

MAGIC = b"MFA1"
_HEADER = struct.Struct("<8I")


def _take(buf: bytes, offset: int, count: int, dtype, section: str):
    nbytes = count * np.dtype(dtype).itemsize
    if offset + nbytes > len(buf):
        raise AssetError(f"unexpected end of asset in section {section}")
    arr = np.frombuffer(buf, dtype=np.dtype(dtype).newbyteorder("<"),
                        count=count, offset=offset)
    return arr, offset + nbytes


def load_model_asset(path: str | Path) -> MorphableModel:
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 4 + _HEADER.size:
        raise AssetError("unexpected end of asset in header")
    if buf[:4] != MAGIC:
        raise AssetError(f"malformed header: bad magic {buf[:4]!r}")
    n, f, s, ex, j, p, uv_count, flags = _HEADER.unpack_from(buf, 4)
    if j < 1:
        raise AssetError("malformed header: J must be >= 1")
    off = 4 + _HEADER.size
    template, off = _take(buf, off, n * 3, np.float32, "template")
    faces, off = _take(buf, off, f * 3, np.uint32, "faces")
    shape, off = _take(buf, off, s * n * 3, np.float32, "shape_basis")
    expr, off = _take(buf, off, ex * n * 3, np.float32, "expression_basis")
    pose, off = _take(buf, off, p * n * 3, np.float32, "pose_corrective_basis")
    regressor, off = _take(buf, off, j * n, np.float32, "joint_regressor")
    skinning, off = _take(buf, off, n * j, np.float32, "skinning_weights")
    parents, off = _take(buf, off, j, np.int32, "kinematic_parents")
    uvs, off = _take(buf, off, uv_count * 2, np.float32, "uv_coords")
    if off != len(buf):
        raise AssetError(f"asset has {len(buf) - off} trailing bytes")
    model = MorphableModel(
        template_vertices=template.astype(np.float64).reshape(n, 3),
        faces=faces.astype(np.int64).reshape(f, 3),
        shape_basis=shape.astype(np.float64).reshape(s, n, 3),
        expression_basis=expr.astype(np.float64).reshape(ex, n, 3),
        pose_corrective_basis=pose.astype(np.float64).reshape(p, n, 3),
        joint_regressor=regressor.astype(np.float64).reshape(j, n),
        skinning_weights=skinning.astype(np.float64).reshape(n, j),
        kinematic_parents=parents.astype(np.int64),
        uv_coords=None if uv_count == 0 else uvs.astype(np.float64).reshape(uv_count, 2),
    )
    model.validate()
    return model


def save_model_asset(model: MorphableModel, path: str | Path) -> None:
    """Writes the binary asset plus the `.mfa.json` header sidecar."""
    model.validate()
    path = Path(path)
    uv_count = 0 if model.uv_coords is None else model.uv_coords.shape[0]
    header = _HEADER.pack(model.n_vertices, model.n_faces, model.n_shape,
                          model.n_expression, model.n_joints,
                          model.n_pose_correctives, uv_count, 0)
    parts = [MAGIC, header,
             model.template_vertices.astype("<f4").tobytes(),
             model.faces.astype("<u4").tobytes(),
             model.shape_basis.astype("<f4").tobytes(),
             model.expression_basis.astype("<f4").tobytes(),
             model.pose_corrective_basis.astype("<f4").tobytes(),
             model.joint_regressor.astype("<f4").tobytes(),
             model.skinning_weights.astype("<f4").tobytes(),
             model.kinematic_parents.astype("<i4").tobytes()]
    if model.uv_coords is not None:
        parts.append(model.uv_coords.astype("<f4").tobytes())
    path.write_bytes(b"".join(parts))
    sidecar = {
        "magic": "MFA1",
        "n_vertices": model.n_vertices,
        "n_faces": model.n_faces,
        "n_shape": model.n_shape,
        "n_expression": model.n_expression,
        "n_joints": model.n_joints,
        "n_pose_correctives": model.n_pose_correctives,
        "uv_count": uv_count,
        "flags": 0,
    }
    Path(str(path) + ".json" if path.suffix != ".mfa" else str(path.with_suffix(".mfa.json"))).write_text(
        json.dumps(sidecar, indent=2) + "\n")


def make_toy_model(with_uvs: bool = True) -> MorphableModel:
    """Hand-authored 12-vertex model: 2 shape components, 1 expression
    component, 2 joints (root at origin region, second joint forward),
    no pose correctives. Small enough to check against hand computations."""
    template = np.array([
        [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0],
        [0.5, 0.5, 2.0], [0.5, -0.5, 1.0], [-0.5, 0.5, 1.0], [1.5, 0.5, 1.0],
    ])
    faces = np.array([
        [0, 1, 2], [0, 2, 3], [4, 6, 5], [4, 7, 6],
        [0, 4, 5], [0, 5, 1], [3, 2, 6], [3, 6, 7],
        [8, 9, 10], [8, 10, 11], [9, 11, 10], [1, 5, 11],
    ], dtype=np.int64)
    rng = np.random.default_rng(7)
    shape_basis = rng.normal(0.0, 0.05, size=(2, 12, 3))
    expression_basis = rng.normal(0.0, 0.05, size=(1, 12, 3))
    pose_corrective_basis = np.zeros((0, 12, 3))
    # root joint from the lower cube, second joint from the top pyramid
    joint_regressor = np.zeros((2, 12))
    joint_regressor[0, :8] = 1.0 / 8.0
    joint_regressor[1, 8:] = 1.0 / 4.0
    skinning = np.zeros((12, 2))
    skinning[:8, 0] = 1.0
    skinning[8:, 1] = 1.0
    skinning[5] = (0.5, 0.5)
    skinning[6] = (0.5, 0.5)
    parents = np.array([-1, 0], dtype=np.int64)
    uvs = None
    if with_uvs:
        uv_rng = np.random.default_rng(11)
        uvs = uv_rng.uniform(0.0, 1.0, size=(faces.shape[0] * 3, 2))
    return MorphableModel(
        template_vertices=template,
        faces=faces,
        shape_basis=shape_basis,
        expression_basis=expression_basis,
        pose_corrective_basis=pose_corrective_basis,
        joint_regressor=joint_regressor,
        skinning_weights=skinning,
        kinematic_parents=parents,
        uv_coords=uvs,
    )
