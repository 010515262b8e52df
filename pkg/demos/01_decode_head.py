"""Decode a parametric head to an OBJ you can open in any mesh viewer.

Walks the decoder stage by stage: blendshapes, joint regression, skinning,
and normals, then exports the result.
"""
import numpy as np

from faceforge import (ParamVector, blend_shapes, decode, export_obj,
                       make_toy_model, regress_joints)

model = make_toy_model()
print(f"model: {model.n_vertices} vertices, {model.n_shape} identity "
      f"components, {model.n_expression} expression components, "
      f"{model.n_joints} joints")

# neutral face: all parameters zero reproduces the template exactly
neutral = decode(model, ParamVector.zeros(2, 1, 2, 4))
print("neutral max deviation from template:",
      np.abs(neutral.vertices - model.template_vertices).max())

# exaggerate the first identity component and open the jaw joint a little
params = ParamVector(
    beta=np.array([2.0, -1.0]),
    psi=np.array([0.8]),
    theta=np.array([0.0, 0.0, 0.3, 0.2, 0.0, 0.0]),
    delta=np.zeros(4),
)
shaped = blend_shapes(model, params.beta, params.psi)
joints = regress_joints(model, shaped)
print("regressed joints:\n", joints)

mesh = decode(model, params)
export_obj(mesh, "demo_head.obj")
print("wrote demo_head.obj")
