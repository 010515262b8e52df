"""Parametric head decoder: identity/expression blendshapes, joint regression,
pose-corrective blendshapes, and linear blend skinning over a small skeleton.

All decoder math runs in float64; asset storage is float32 (see `assetio`).
The model object is immutable after load and every operation here is a pure
function, so concurrent readers need no locking.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class AssetError(ValueError):
    """Raised when a model asset fails to load or validate."""


class DecodeError(ValueError):
    """Raised when decode inputs do not match the model dimensions."""


@dataclass(frozen=True)
class MorphableModel:
    """Statistical head model constants.

    Shapes: template (N,3), faces (F,3) int, shape_basis (S,N,3),
    expression_basis (Ex,N,3), pose_corrective_basis (P,N,3) with
    P == 9*(J-1) or P == 0, joint_regressor (J,N), skinning_weights (N,J),
    kinematic_parents (J,) with parents[0] == -1 and parents[j] < j,
    uv_coords optional (F*3, 2) per face-corner.
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_basis: np.ndarray
    expression_basis: np.ndarray
    pose_corrective_basis: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    kinematic_parents: np.ndarray
    uv_coords: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def n_expression(self) -> int:
        return self.expression_basis.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def n_pose_correctives(self) -> int:
        return self.pose_corrective_basis.shape[0]

    def validate(self) -> None:
        n = self.n_vertices
        j = self.n_joints
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise AssetError("faces reference out-of-range vertex indices")
        for name, basis in (("shape_basis", self.shape_basis),
                            ("expression_basis", self.expression_basis),
                            ("pose_corrective_basis", self.pose_corrective_basis)):
            if basis.size and basis.shape[1] != n:
                raise AssetError(f"{name} vertex count {basis.shape[1]} != {n}")
        p = self.n_pose_correctives
        if p not in (0, 9 * (j - 1)):
            raise AssetError(f"pose_corrective_basis count {p} != 9*(J-1)")
        reg_sums = self.joint_regressor.sum(axis=1)
        if np.abs(reg_sums - 1.0).max() > 1e-4:
            raise AssetError("joint_regressor row not normalized")
        skin_sums = self.skinning_weights.sum(axis=1)
        if np.abs(skin_sums - 1.0).max() > 1e-4:
            raise AssetError("skinning_weights row not normalized")
        if self.skinning_weights.min() < -1e-8:
            raise AssetError("skinning_weights contains negative entries")
        parents = self.kinematic_parents
        if parents[0] != -1:
            raise AssetError("kinematic_parents[0] must be -1 (root)")
        for jj in range(1, j):
            if not 0 <= parents[jj] < jj:
                raise AssetError("kinematic_parents must satisfy parents[j] < j")


@dataclass(frozen=True)
class ParamVector:
    """One face: identity beta, expression psi, pose theta (axis-angle per
    joint, radians, joint 0 = global rotation), detail code delta."""

    beta: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    delta: np.ndarray

    @staticmethod
    def zeros(n_shape: int, n_expression: int, n_joints: int, n_detail: int) -> "ParamVector":
        return ParamVector(
            beta=np.zeros(n_shape),
            psi=np.zeros(n_expression),
            theta=np.zeros(3 * n_joints),
            delta=np.zeros(n_detail),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.beta, self.psi, self.theta, self.delta])

    def validate_finite(self) -> None:
        for name in ("beta", "psi", "theta", "delta"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DecodeError(f"non-finite values in {name}")


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: np.ndarray
    uv_coords: np.ndarray | None = None
    texture_ref: str | None = None

    def with_texture(self, texture_ref: str) -> "Mesh":
        return replace(self, texture_ref=texture_ref)


@dataclass(frozen=True)
class DetailMap:
    """Scalar displacement image: samples[row][col] in length-units per texel."""

    samples: np.ndarray  # (H, W) float
    scale: float = 1.0

    def __post_init__(self):
        if self.samples.ndim != 2 or min(self.samples.shape) < 1:
            raise ValueError("detail map must be a 2-D image with width,height >= 1")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("detail map samples must be finite")


def rotation_from_axis_angle(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues' formula. Returns identity for |axis_angle| < 1e-8 so the
    zero-rotation singularity never divides by zero."""
    aa = np.asarray(axis_angle, dtype=np.float64)
    angle = float(np.linalg.norm(aa))
    if angle < 1e-8:
        return np.eye(3)
    k = aa / angle
    kx = np.array([[0.0, -k[2], k[1]],
                   [k[2], 0.0, -k[0]],
                   [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def blend_shapes(model: MorphableModel, beta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    beta = np.asarray(beta, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if beta.shape != (model.n_shape,):
        raise DecodeError(f"beta length {beta.shape} != ({model.n_shape},)")
    if psi.shape != (model.n_expression,):
        raise DecodeError(f"psi length {psi.shape} != ({model.n_expression},)")
    out = model.template_vertices.astype(np.float64).copy()
    if model.n_shape:
        out += np.tensordot(beta, model.shape_basis, axes=1)
    if model.n_expression:
        out += np.tensordot(psi, model.expression_basis, axes=1)
    return out


def regress_joints(model: MorphableModel, shaped_vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(shaped_vertices, dtype=np.float64)
    if v.shape != (model.n_vertices, 3):
        raise DecodeError(f"vertex array shape {v.shape} != ({model.n_vertices}, 3)")
    return model.joint_regressor @ v


def pose_feature(theta: np.ndarray, n_joints: int) -> np.ndarray:
    """Concatenation over joints 1..J-1 of (R(theta_j) - I) flattened row-major."""
    theta = np.asarray(theta, dtype=np.float64).reshape(n_joints, 3)
    feats = []
    for j in range(1, n_joints):
        feats.append((rotation_from_axis_angle(theta[j]) - np.eye(3)).reshape(9))
    return np.concatenate(feats) if feats else np.zeros(0)


def pose_correctives(model: MorphableModel, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (3 * model.n_joints,):
        raise DecodeError(f"theta length {theta.shape} != ({3 * model.n_joints},)")
    if model.n_pose_correctives == 0:
        return np.zeros((model.n_vertices, 3))
    feature = pose_feature(theta, model.n_joints)
    return np.tensordot(feature, model.pose_corrective_basis, axes=1)


def joint_world_transforms(model: MorphableModel, joints: np.ndarray,
                           theta: np.ndarray) -> np.ndarray:
    """Per-joint 4x4 skinning transforms: world transform of the posed chain
    composed with the inverse rest transform."""
    j = model.n_joints
    theta = np.asarray(theta, dtype=np.float64).reshape(j, 3)
    world = np.zeros((j, 4, 4))
    for jj in range(j):
        rot = rotation_from_axis_angle(theta[jj])
        parent = int(model.kinematic_parents[jj])
        local = np.eye(4)
        local[:3, :3] = rot
        if parent < 0:
            local[:3, 3] = joints[jj]
            world[jj] = local
        else:
            local[:3, 3] = joints[jj] - joints[parent]
            world[jj] = world[parent] @ local
    rel = np.zeros_like(world)
    for jj in range(j):
        inv_rest = np.eye(4)
        inv_rest[:3, 3] = -joints[jj]
        rel[jj] = world[jj] @ inv_rest
    return rel


def linear_blend_skin(model: MorphableModel, shaped_vertices: np.ndarray,
                      joints: np.ndarray, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise DecodeError("non-finite values in theta")
    transforms = joint_world_transforms(model, joints, theta)
    v = np.asarray(shaped_vertices, dtype=np.float64)
    homo = np.concatenate([v, np.ones((v.shape[0], 1))], axis=1)
    # (J,N,4): each joint's transform applied to every vertex
    per_joint = np.einsum("jab,nb->jna", transforms, homo)[:, :, :3]
    return np.einsum("nj,jnc->nc", model.skinning_weights, per_joint)


def compute_vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals (raw cross products carry
    the area weighting). Vertices with zero accumulated normal get +z."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    normals = np.zeros_like(v)
    if f.size:
        e1 = v[f[:, 1]] - v[f[:, 0]]
        e2 = v[f[:, 2]] - v[f[:, 0]]
        face_n = np.cross(e1, e2)
        for corner in range(3):
            np.add.at(normals, f[:, corner], face_n)
    lengths = np.linalg.norm(normals, axis=1)
    degenerate = lengths < 1e-12
    normals[degenerate] = (0.0, 0.0, 1.0)
    lengths[degenerate] = 1.0
    return normals / lengths[:, None]


def _vertex_uvs(model_faces: np.ndarray, uv_coords: np.ndarray,
                n_vertices: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex UV from the first face-corner encountered in face order.
    Returns (uvs (N,2), assigned mask (N,))."""
    uvs = np.zeros((n_vertices, 2))
    assigned = np.zeros(n_vertices, dtype=bool)
    for fi in range(model_faces.shape[0]):
        for ci in range(3):
            vi = int(model_faces[fi, ci])
            if not assigned[vi]:
                uvs[vi] = uv_coords[fi * 3 + ci]
                assigned[vi] = True
    return uvs, assigned


def sample_bilinear(detail: DetailMap, u: float, v: float) -> float:
    """Bilinear sample with u,v in [0,1] mapped edge-to-edge across texels;
    u -> column, v -> row 0 at v=0."""
    h, w = detail.samples.shape
    x = np.clip(u, 0.0, 1.0) * (w - 1)
    y = np.clip(v, 0.0, 1.0) * (h - 1)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    s = detail.samples
    top = s[y0, x0] * (1 - fx) + s[y0, x1] * fx
    bot = s[y1, x0] * (1 - fx) + s[y1, x1] * fx
    return float(top * (1 - fy) + bot * fy)


def apply_displacement(mesh: Mesh, detail: DetailMap) -> Mesh:
    if mesh.uv_coords is None:
        raise DecodeError("displacement requires UV coordinates")
    n = mesh.vertices.shape[0]
    uvs, assigned = _vertex_uvs(mesh.faces, mesh.uv_coords, n)
    moved = mesh.vertices.astype(np.float64).copy()
    for vi in range(n):
        if assigned[vi]:
            d = detail.scale * sample_bilinear(detail, uvs[vi, 0], uvs[vi, 1])
            moved[vi] += d * mesh.vertex_normals[vi]
    return Mesh(
        vertices=moved,
        faces=mesh.faces,
        vertex_normals=compute_vertex_normals(moved, mesh.faces),
        uv_coords=mesh.uv_coords,
        texture_ref=mesh.texture_ref,
    )


def decode(model: MorphableModel, params: ParamVector,
           detail: DetailMap | None = None) -> Mesh:
    """Full decode: blendshapes -> pose correctives -> joint regression ->
    linear blend skinning -> optional displacement -> normals. Deterministic."""
    params.validate_finite()
    if params.theta.shape != (3 * model.n_joints,):
        raise DecodeError(
            f"theta length {params.theta.shape[0]} != {3 * model.n_joints}")
    shaped = blend_shapes(model, params.beta, params.psi)
    shaped = shaped + pose_correctives(model, params.theta)
    joints = regress_joints(model, shaped)
    skinned = linear_blend_skin(model, shaped, joints, params.theta)
    mesh = Mesh(
        vertices=skinned,
        faces=model.faces.copy(),
        vertex_normals=compute_vertex_normals(skinned, model.faces),
        uv_coords=None if model.uv_coords is None else model.uv_coords.copy(),
    )
    if detail is not None:
        mesh = apply_displacement(mesh, detail)
    return mesh
