"""The full text-to-mesh path against an in-process service: embed a prompt
(using a stand-in encoder), regress parameters, decode a mesh.

In production the encoder behind /v1/embed-text is an external joint
image-text model reachable via EMBED_SERVICE_URL; here a deterministic stub
plays that role so the demo runs offline.
"""
import json
import tempfile
from pathlib import Path

import httpx
import numpy as np
from fastapi.testclient import TestClient

from faceforge import init_weights, make_toy_model, save_model_asset, save_weights
from faceforge.regressor import DimsProfile, NormStats
from faceforge.service import EmbedClient, EmbedClientConfig, create_app

E = 16
profile = DimsProfile(n_shape=2, n_expression=1, pose_joints=2, n_detail=4)

workdir = Path(tempfile.mkdtemp())
save_model_asset(make_toy_model(), workdir / "toy.mfa")
weights = init_weights(f"{E}-32-{profile.total}", seed=3)
stats = NormStats(mean=np.zeros(profile.total), std=np.ones(profile.total))
save_weights(weights, workdir / "w.t2fw", stats)


def stub_encoder(request):
    text = json.loads(request.content)["text"]
    seed = abs(hash(text)) % (2 ** 31)
    vec = np.random.default_rng(seed).normal(size=E)
    return httpx.Response(200, json={"embedding": list(vec)})


embed = EmbedClient(
    EmbedClientConfig(base_url="http://encoder", expected_dim=E),
    http=httpx.Client(transport=httpx.MockTransport(stub_encoder)))

app = create_app(model_path=str(workdir / "toy.mfa"),
                 weights_path=str(workdir / "w.t2fw"),
                 profile=profile, embed_client=embed)
client = TestClient(app)

prompt = "a weathered fisherman squinting into the wind"
embedding = client.post("/v1/embed-text", json={"text": prompt}).json()["embedding"]
params = client.post("/v1/regress", json={"embedding": embedding}).json()
print("regressed identity coefficients:", params["beta"])

obj_bytes = client.post("/v1/decode", json={"params": params, "want": "obj"}).content
out = workdir / "prompt_face.obj"
out.write_bytes(obj_bytes)
print(f"wrote {out} ({len(obj_bytes)} bytes)")
print(client.get("/v1/info").json())
