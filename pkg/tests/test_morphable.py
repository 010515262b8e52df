import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceforge import assetio
from faceforge.morphable import (AssetError, DecodeError, DetailMap, Mesh,
                                 MorphableModel, ParamVector,
                                 apply_displacement, blend_shapes,
                                 compute_vertex_normals, decode,
                                 linear_blend_skin, pose_correctives,
                                 pose_feature, regress_joints,
                                 rotation_from_axis_angle)
from conftest import make_single_joint_model


# --- asset loading ---------------------------------------------------------

def test_toy_asset_roundtrip_dims(toy_asset_path):
    model = assetio.load_model_asset(toy_asset_path)
    assert model.n_vertices == 12
    assert model.n_shape == 2
    assert model.n_expression == 1
    assert model.n_joints == 2
    assert model.n_faces == 12
    assert model.n_pose_correctives == 0


def test_toy_asset_bytes_match_independent_reader(toy_asset_path):
    # re-read the raw bytes without the loader and compare the template section
    import struct
    buf = toy_asset_path.read_bytes()
    assert buf[:4] == b"MFA1"
    n, f, s, ex, j, p, uv, flags = struct.unpack_from("<8I", buf, 4)
    assert (n, f, s, ex, j, p) == (12, 12, 2, 1, 2, 0)
    template = np.frombuffer(buf, dtype="<f4", count=n * 3, offset=36).reshape(n, 3)
    model = assetio.load_model_asset(toy_asset_path)
    assert np.array_equal(model.template_vertices, template.astype(np.float64))


def test_unnormalized_skinning_row_rejected(toy_model, tmp_path):
    bad = MorphableModel(
        **{**toy_model.__dict__,
           "skinning_weights": toy_model.skinning_weights * 0.5})
    with pytest.raises(AssetError, match="skinning_weights row not normalized"):
        assetio.save_model_asset(bad, tmp_path / "bad.mfa")


def test_truncated_asset_rejected(toy_asset_path, tmp_path):
    buf = toy_asset_path.read_bytes()
    short = tmp_path / "short.mfa"
    short.write_bytes(buf[: len(buf) // 2])
    with pytest.raises(AssetError, match="unexpected end of asset"):
        assetio.load_model_asset(short)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.mfa"
    path.write_bytes(b"XXXX" + b"\0" * 64)
    with pytest.raises(AssetError, match="bad magic"):
        assetio.load_model_asset(path)


# --- blendshapes -----------------------------------------------------------

def test_blend_shapes_zero_is_template(toy_model):
    out = blend_shapes(toy_model, np.zeros(2), np.zeros(1))
    assert np.array_equal(out, toy_model.template_vertices)


def test_blend_shapes_one_hot(toy_model):
    out = blend_shapes(toy_model, np.array([0.0, 2.5]), np.zeros(1))
    expect = toy_model.template_vertices + 2.5 * toy_model.shape_basis[1]
    assert np.allclose(out, expect, atol=1e-12)


def test_blend_shapes_superposition(toy_model):
    rng = np.random.default_rng(5)
    for _ in range(20):
        b1, b2 = rng.normal(size=(2, 2))
        p1, p2 = rng.normal(size=(2, 1))
        base = toy_model.template_vertices
        combined = blend_shapes(toy_model, b1 + b2, p1 + p2) - base
        separate = ((blend_shapes(toy_model, b1, p1) - base)
                    + (blend_shapes(toy_model, b2, p2) - base))
        assert np.allclose(combined, separate, atol=1e-6)


def test_blend_shapes_length_mismatch(toy_model):
    with pytest.raises(DecodeError):
        blend_shapes(toy_model, np.zeros(3), np.zeros(1))


# --- joint regression ------------------------------------------------------

def test_regress_joints_one_hot():
    model = make_single_joint_model(5)
    reg = np.zeros((1, 5))
    reg[0, 3] = 1.0
    model = MorphableModel(**{**model.__dict__, "joint_regressor": reg})
    joints = regress_joints(model, model.template_vertices)
    assert np.array_equal(joints[0], model.template_vertices[3])


def test_regress_joints_uniform_is_centroid():
    model = make_single_joint_model(5)
    joints = regress_joints(model, model.template_vertices)
    assert np.allclose(joints[0], model.template_vertices.mean(axis=0), atol=1e-12)


def test_regress_joints_matches_bruteforce():
    rng = np.random.default_rng(9)
    verts = rng.normal(size=(5, 3))
    weights = rng.uniform(0.1, 1.0, size=(2, 5))
    weights /= weights.sum(axis=1, keepdims=True)
    model = make_single_joint_model(5)
    model = MorphableModel(**{**model.__dict__, "joint_regressor": weights,
                              "skinning_weights": np.ones((5, 2)) * 0.5,
                              "kinematic_parents": np.array([-1, 0])})
    joints = regress_joints(model, verts)
    # independent loop oracle
    expect = np.zeros((2, 3))
    for j in range(2):
        for v in range(5):
            expect[j] += weights[j, v] * verts[v]
    assert np.allclose(joints, expect, atol=1e-12)


# --- pose correctives ------------------------------------------------------

def _model_with_correctives(seed=13):
    rng = np.random.default_rng(seed)
    n = 6
    return MorphableModel(
        template_vertices=rng.normal(size=(n, 3)),
        faces=np.array([[0, 1, 2]], dtype=np.int64),
        shape_basis=np.zeros((0, n, 3)),
        expression_basis=np.zeros((0, n, 3)),
        pose_corrective_basis=rng.normal(size=(9, n, 3)),
        joint_regressor=np.full((2, n), 1.0 / n),
        skinning_weights=np.column_stack([np.ones(n), np.zeros(n)]),
        kinematic_parents=np.array([-1, 0], dtype=np.int64),
    )


def test_pose_correctives_zero_theta(toy_model):
    model = _model_with_correctives()
    assert np.array_equal(pose_correctives(model, np.zeros(6)), np.zeros((6, 3)))


def test_pose_correctives_empty_basis(toy_model):
    theta = np.random.default_rng(0).normal(size=6)
    assert np.array_equal(pose_correctives(toy_model, theta), np.zeros((12, 3)))


def test_pose_correctives_90deg_z():
    # R(90 deg about z) - I = [[-1,-1,0],[1,-1,0],[0,0,0]] row-major
    model = _model_with_correctives()
    theta = np.array([0, 0, 0, 0, 0, np.pi / 2])
    feature = pose_feature(theta, 2)
    assert np.allclose(feature, [-1, -1, 0, 1, -1, 0, 0, 0, 0], atol=1e-12)
    out = pose_correctives(model, theta)
    expect = np.tensordot(feature, model.pose_corrective_basis, axes=1)
    assert np.allclose(out, expect, atol=1e-12)


# --- linear blend skinning -------------------------------------------------

def test_lbs_identity(toy_model):
    verts = toy_model.template_vertices
    joints = regress_joints(toy_model, verts)
    out = linear_blend_skin(toy_model, verts, joints, np.zeros(6))
    assert np.allclose(out, verts, atol=1e-12)


def test_lbs_single_joint_global_rotation():
    model = make_single_joint_model(5)
    verts = model.template_vertices
    aa = np.array([0.3, -0.2, 0.9])
    rot = rotation_from_axis_angle(aa)
    out = linear_blend_skin(model, verts, np.zeros((1, 3)), aa)
    assert np.allclose(out, verts @ rot.T, atol=1e-12)


def test_lbs_two_joint_blend_hand_computed():
    # root identity, child rotated about its own position: half-weighted
    # vertices blend the identity map with the child rotation
    n = 4
    rng = np.random.default_rng(21)
    verts = rng.normal(size=(n, 3))
    model = MorphableModel(
        template_vertices=verts,
        faces=np.array([[0, 1, 2]], dtype=np.int64),
        shape_basis=np.zeros((0, n, 3)),
        expression_basis=np.zeros((0, n, 3)),
        pose_corrective_basis=np.zeros((0, n, 3)),
        joint_regressor=np.full((2, n), 1.0 / n),
        skinning_weights=np.full((n, 2), 0.5),
        kinematic_parents=np.array([-1, 0], dtype=np.int64),
    )
    joints = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    aa = np.array([0.0, 0.0, 0.0, 0.4, 0.1, -0.3])
    rot = rotation_from_axis_angle(aa[3:])
    out = linear_blend_skin(model, verts, joints, aa)
    expect = 0.5 * verts + 0.5 * ((verts - joints[1]) @ rot.T + joints[1])
    assert np.allclose(out, expect, atol=1e-12)


# --- normals ---------------------------------------------------------------

def test_normals_single_ccw_triangle():
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]])
    n = compute_vertex_normals(v, np.array([[0, 1, 2]]))
    assert np.allclose(n, [[0, 0, 1]] * 3, atol=1e-12)


def test_normals_isolated_vertex_fallback():
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [5.0, 5, 5]])
    n = compute_vertex_normals(v, np.array([[0, 1, 2]]))
    assert np.array_equal(n[3], [0, 0, 1])


# faces triangulated along even-parity diagonals, so the area-weighted
# average at every corner is exactly axis-diagonal (checked by loop oracle)
CUBE_FACES = np.array([
    [0, 2, 6], [0, 6, 4], [5, 7, 3], [5, 3, 1], [0, 4, 5], [0, 5, 1],
    [3, 7, 6], [3, 6, 2], [0, 1, 3], [0, 3, 2], [6, 7, 5], [6, 5, 4]])


def test_normals_unit_cube_diagonal():
    verts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                     dtype=np.float64)
    # independent loop oracle: accumulate area-weighted face normals per vertex
    acc = np.zeros((8, 3))
    for f in CUBE_FACES:
        fn = np.cross(verts[f[1]] - verts[f[0]], verts[f[2]] - verts[f[0]])
        for vi in f:
            acc[vi] += fn
    oracle = acc / np.linalg.norm(acc, axis=1, keepdims=True)
    got = compute_vertex_normals(verts, CUBE_FACES)
    assert np.allclose(got, oracle, atol=1e-12)
    expect = verts - 0.5
    expect /= np.linalg.norm(expect, axis=1, keepdims=True)
    assert np.allclose(got, expect, atol=1e-12)


# --- displacement ----------------------------------------------------------

def _flat_uv_mesh():
    # 2x2 grid of vertices in the z=0 plane, normals +z, UVs at the corners
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [1.0, 1, 0],
                      [0.5, 0.5, 0]])
    faces = np.array([[0, 1, 4], [1, 3, 4], [3, 2, 4], [2, 0, 4]])
    uv = np.zeros((faces.shape[0] * 3, 2))
    vert_uv = {0: (0, 0), 1: (1, 0), 2: (0, 1), 3: (1, 1), 4: (0.5, 0.5)}
    for fi, f in enumerate(faces):
        for ci, vi in enumerate(f):
            uv[fi * 3 + ci] = vert_uv[vi]
    return Mesh(vertices=verts, faces=faces,
                vertex_normals=compute_vertex_normals(verts, faces),
                uv_coords=uv)


def test_displacement_zero_map_is_noop():
    mesh = _flat_uv_mesh()
    out = apply_displacement(mesh, DetailMap(np.zeros((4, 4))))
    assert np.allclose(out.vertices, mesh.vertices, atol=1e-12)


def test_displacement_constant_map_moves_by_c():
    mesh = _flat_uv_mesh()
    out = apply_displacement(mesh, DetailMap(np.full((4, 4), 0.25), scale=1.0))
    moved = np.linalg.norm(out.vertices - mesh.vertices, axis=1)
    assert np.allclose(moved, 0.25, atol=1e-12)


def test_displacement_bilinear_center_average():
    mesh = _flat_uv_mesh()
    samples = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = apply_displacement(mesh, DetailMap(samples))
    # vertex 4 sits at uv (0.5, 0.5): hand bilinear = mean of the 4 texels
    d = out.vertices[4] - mesh.vertices[4]
    assert np.allclose(np.linalg.norm(d), np.mean(samples), atol=1e-12)


def test_displacement_requires_uvs():
    mesh = _flat_uv_mesh()
    bare = Mesh(vertices=mesh.vertices, faces=mesh.faces,
                vertex_normals=mesh.vertex_normals)
    with pytest.raises(DecodeError, match="displacement requires UV coordinates"):
        apply_displacement(bare, DetailMap(np.zeros((2, 2))))


# --- decode ----------------------------------------------------------------

def zero_params(model, n_detail=4):
    return ParamVector.zeros(model.n_shape, model.n_expression,
                             model.n_joints, n_detail)


def test_decode_zero_is_template(toy_model):
    mesh = decode(toy_model, zero_params(toy_model))
    assert np.abs(mesh.vertices - toy_model.template_vertices).max() < 1e-9


def test_decode_global_rotation_is_rigid(toy_model):
    rng = np.random.default_rng(17)
    neutral = decode(toy_model, zero_params(toy_model)).vertices
    root = regress_joints(toy_model, blend_shapes(
        toy_model, np.zeros(2), np.zeros(1)))[0]
    for _ in range(5):
        aa = rng.normal(size=3)
        rot = rotation_from_axis_angle(aa)
        params = ParamVector(beta=np.zeros(2), psi=np.zeros(1),
                             theta=np.concatenate([aa, np.zeros(3)]),
                             delta=np.zeros(4))
        mesh = decode(toy_model, params)
        expect = (neutral - root) @ rot.T + root
        assert np.abs(mesh.vertices - expect).max() < 1e-6


def test_decode_matches_manual_stage_chain(toy_model):
    rng = np.random.default_rng(23)
    params = ParamVector(beta=rng.normal(size=2), psi=rng.normal(size=1),
                         theta=rng.normal(size=6) * 0.3, delta=rng.normal(size=4))
    mesh = decode(toy_model, params)
    shaped = blend_shapes(toy_model, params.beta, params.psi)
    shaped = shaped + pose_correctives(toy_model, params.theta)
    joints = regress_joints(toy_model, shaped)
    skinned = linear_blend_skin(toy_model, shaped, joints, params.theta)
    assert np.array_equal(mesh.vertices, skinned)


def test_decode_theta_inverse_returns_neutral(toy_model):
    aa = np.array([0.2, 0.7, -0.4])
    neutral = decode(toy_model, zero_params(toy_model)).vertices
    root = regress_joints(toy_model, blend_shapes(
        toy_model, np.zeros(2), np.zeros(1)))[0]
    fwd = decode(toy_model, ParamVector(np.zeros(2), np.zeros(1),
                                        np.concatenate([aa, np.zeros(3)]),
                                        np.zeros(4))).vertices
    rot_back = rotation_from_axis_angle(-aa)
    assert np.abs((fwd - root) @ rot_back.T + root - neutral).max() < 1e-6


def test_decode_finite_for_random_params(toy_model):
    rng = np.random.default_rng(31)
    for _ in range(20):
        params = ParamVector(beta=rng.normal(size=2) * 3,
                             psi=rng.normal(size=1) * 3,
                             theta=rng.normal(size=6) * np.pi,
                             delta=rng.normal(size=4))
        mesh = decode(toy_model, params)
        assert np.all(np.isfinite(mesh.vertices))
        assert np.all(np.isfinite(mesh.vertex_normals))


def test_decode_rejects_nonfinite(toy_model):
    params = ParamVector(np.array([np.nan, 0.0]), np.zeros(1),
                         np.zeros(6), np.zeros(4))
    with pytest.raises(DecodeError, match="non-finite"):
        decode(toy_model, params)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_global_rotation_preserves_pairwise_distances(aa):
    model = assetio.make_toy_model()
    aa = np.asarray(aa)
    params = ParamVector(np.zeros(2), np.zeros(1),
                         np.concatenate([aa, np.zeros(3)]), np.zeros(4))
    neutral = decode(model, ParamVector.zeros(2, 1, 2, 4)).vertices
    rotated = decode(model, params).vertices

    def pdist(v):
        diff = v[:, None, :] - v[None, :, :]
        return np.sqrt((diff ** 2).sum(-1))

    assert np.abs(pdist(neutral) - pdist(rotated)).max() < 1e-6


def test_rodrigues_small_angle_is_identity():
    assert np.array_equal(rotation_from_axis_angle(np.array([1e-9, 0, 0])),
                          np.eye(3))


def test_rodrigues_is_rotation_matrix():
    rng = np.random.default_rng(3)
    for _ in range(10):
        rot = rotation_from_axis_angle(rng.normal(size=3))
        assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(rot), 1.0, atol=1e-12)
