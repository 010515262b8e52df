"""faceforge: embedding-to-3D-face engine.

A deep MLP maps a joint image-text embedding to the parameter vector of a
FLAME-style morphable head model; a native decoder turns those parameters
into a posed, optionally displaced, textured mesh.
"""

from .morphable import (DetailMap, Mesh, MorphableModel, ParamVector,
                        apply_displacement, blend_shapes,
                        compute_vertex_normals, decode, linear_blend_skin,
                        pose_correctives, regress_joints)
from .assetio import load_model_asset, make_toy_model, save_model_asset
from .regressor import (DimsProfile, MlpWeights, NormStats, TrainConfig,
                        TrainReport, adam_step, backward, forward,
                        init_weights, load_weights, regress_params,
                        save_weights, train)
from .dataset import Dataset, Record, compute_stats, ingest, read_dataset, split, write_dataset
from .meshio import export_obj, parse_obj, read_params_json, write_params_json

__version__ = "0.1.0"
