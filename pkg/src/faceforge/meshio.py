"""Mesh serialization: Wavefront OBJ/MTL export with texture binding, an OBJ
parser for round-trip checks, and the parameter-vector JSON interchange form.

OBJ output uses fixed 6-decimal formatting so the bytes are stable across
runs and platforms and golden-file tests are possible.
"""
from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np

from .morphable import Mesh, ParamVector, compute_vertex_normals


class MeshIOError(ValueError):
    """Malformed OBJ or params file."""


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def mesh_to_obj(mesh: Mesh, mtl_name: str | None = None,
                material: str = "face") -> str:
    """OBJ text: v/vt/vn lines, 1-based indices, faces as v/vt/vn triples
    when UVs exist, v//vn otherwise."""
    lines = []
    if mtl_name:
        lines.append(f"mtllib {mtl_name}")
        lines.append(f"usemtl {material}")
    for v in mesh.vertices:
        lines.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
    has_uv = mesh.uv_coords is not None
    if has_uv:
        for uv in mesh.uv_coords:
            lines.append(f"vt {_fmt(uv[0])} {_fmt(uv[1])}")
    for n in mesh.vertex_normals:
        lines.append(f"vn {_fmt(n[0])} {_fmt(n[1])} {_fmt(n[2])}")
    for fi, face in enumerate(mesh.faces):
        if has_uv:
            corners = " ".join(
                f"{face[c] + 1}/{fi * 3 + c + 1}/{face[c] + 1}" for c in range(3))
        else:
            corners = " ".join(f"{face[c] + 1}//{face[c] + 1}" for c in range(3))
        lines.append(f"f {corners}")
    return "\n".join(lines) + "\n"


def export_obj(mesh: Mesh, path: str | Path,
               texture: str | Path | None = None) -> list[Path]:
    """Writes the OBJ and, when a texture image is given, a sibling MTL
    referencing it via map_Kd (the image is copied next to the OBJ, never
    transcoded). Returns the written paths."""
    path = Path(path)
    written = []
    mtl_name = None
    if texture is not None:
        texture = Path(texture)
        mtl_name = path.with_suffix(".mtl").name
        tex_dest = path.parent / texture.name
        if texture.resolve() != tex_dest.resolve():
            shutil.copyfile(texture, tex_dest)
        mtl_text = (f"newmtl face\nKa 1.000000 1.000000 1.000000\n"
                    f"Kd 1.000000 1.000000 1.000000\nmap_Kd {texture.name}\n")
        mtl_path = path.with_suffix(".mtl")
        mtl_path.write_text(mtl_text)
        written.append(mtl_path)
        written.append(tex_dest)
    path.write_text(mesh_to_obj(mesh, mtl_name))
    written.insert(0, path)
    return written


def parse_obj(path: str | Path) -> Mesh:
    """Inverse of export for files this module wrote; tolerant of comments,
    blank lines, and mixed v//vn faces."""
    vertices: list[list[float]] = []
    uvs: list[list[float]] = []
    normals: list[list[float]] = []
    faces: list[list[int]] = []
    face_uvs: list[list[int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            try:
                if tok[0] == "v":
                    vertices.append([float(t) for t in tok[1:4]])
                elif tok[0] == "vt":
                    uvs.append([float(t) for t in tok[1:3]])
                elif tok[0] == "vn":
                    normals.append([float(t) for t in tok[1:4]])
                elif tok[0] == "f":
                    if len(tok) != 4:
                        raise MeshIOError("only triangle faces supported")
                    corner_v, corner_vt = [], []
                    for corner in tok[1:]:
                        fields = corner.split("/")
                        vi = int(fields[0])
                        if vi == 0:
                            raise MeshIOError("OBJ indices are 1-based")
                        corner_v.append(vi - 1 if vi > 0 else len(vertices) + vi)
                        if len(fields) > 1 and fields[1]:
                            corner_vt.append(int(fields[1]) - 1)
                    faces.append(corner_v)
                    face_uvs.append(corner_vt)
            except (ValueError, IndexError, MeshIOError) as exc:
                raise MeshIOError(f"{path}:{lineno}: malformed line: {exc}") from exc
    v = np.asarray(vertices, dtype=np.float64).reshape(len(vertices), 3)
    f = np.asarray(faces, dtype=np.int64).reshape(len(faces), 3)
    if f.size and (f.min() < 0 or f.max() >= len(vertices)):
        raise MeshIOError("face references out-of-range vertex")
    uv_coords = None
    if uvs and all(len(c) == 3 for c in face_uvs):
        uv_arr = np.asarray(uvs, dtype=np.float64)
        uv_coords = np.zeros((len(faces) * 3, 2))
        for fi, corners in enumerate(face_uvs):
            for ci, uvi in enumerate(corners):
                uv_coords[fi * 3 + ci] = uv_arr[uvi]
    if normals and len(normals) == len(vertices):
        vn = np.asarray(normals, dtype=np.float64)
    else:
        vn = compute_vertex_normals(v, f)
    return Mesh(vertices=v, faces=f, vertex_normals=vn, uv_coords=uv_coords)


def params_to_json(params: ParamVector) -> str:
    """Canonical JSON form; float repr round-trips every value exactly."""
    obj = {
        "beta": [float(x) for x in params.beta],
        "psi": [float(x) for x in params.psi],
        "theta": [float(x) for x in params.theta],
        "delta": [float(x) for x in params.delta],
    }
    return json.dumps(obj) + "\n"


def write_params_json(params: ParamVector, path: str | Path) -> None:
    Path(path).write_text(params_to_json(params))


def read_params_json(path: str | Path,
                     expected_lengths: tuple[int, int, int, int] | None = None
                     ) -> ParamVector:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MeshIOError(f"bad params JSON: {exc}") from exc
    try:
        params = ParamVector(
            beta=np.asarray(obj["beta"], dtype=np.float64),
            psi=np.asarray(obj["psi"], dtype=np.float64),
            theta=np.asarray(obj["theta"], dtype=np.float64),
            delta=np.asarray(obj["delta"], dtype=np.float64),
        )
    except KeyError as exc:
        raise MeshIOError(f"params JSON missing field {exc}") from exc
    if expected_lengths is not None:
        actual = (len(params.beta), len(params.psi), len(params.theta), len(params.delta))
        if actual != expected_lengths:
            raise MeshIOError(
                f"params lengths {actual} != expected {expected_lengths}")
    return params
