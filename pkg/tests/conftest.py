import numpy as np
import pytest

from faceforge import assetio
from faceforge.morphable import MorphableModel
from faceforge.regressor import DimsProfile


@pytest.fixture
def toy_model() -> MorphableModel:
    return assetio.make_toy_model()


@pytest.fixture
def toy_asset_path(tmp_path, toy_model):
    path = tmp_path / "toy.mfa"
    assetio.save_model_asset(toy_model, path)
    return path


@pytest.fixture
def toy_profile() -> DimsProfile:
    # matches the bundled toy asset: S=2, Ex=1, J=2, plus a 4-dim detail code
    return DimsProfile(n_shape=2, n_expression=1, pose_joints=2, n_detail=4)


def make_single_joint_model(n_vertices: int = 5, seed: int = 0) -> MorphableModel:
    rng = np.random.default_rng(seed)
    return MorphableModel(
        template_vertices=rng.normal(size=(n_vertices, 3)),
        faces=np.array([[0, 1, 2]], dtype=np.int64),
        shape_basis=np.zeros((0, n_vertices, 3)),
        expression_basis=np.zeros((0, n_vertices, 3)),
        pose_corrective_basis=np.zeros((0, n_vertices, 3)),
        joint_regressor=np.full((1, n_vertices), 1.0 / n_vertices),
        skinning_weights=np.ones((n_vertices, 1)),
        kinematic_parents=np.array([-1], dtype=np.int64),
    )
