"""HTTP API over the pipeline: text -> embedding (proxied to an external
encoder service) -> parameters -> mesh. Responses are pure functions of the
loaded asset snapshot and the request body; the snapshot is swapped
atomically so concurrent requests never see a half-loaded state.
"""
from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import assetio, meshio
from .morphable import DecodeError, MorphableModel, ParamVector, decode
from .regressor import (DimsProfile, MlpWeights, NormStats, RegressorError,
                        load_weights, regress_params)


@dataclass
class EmbedClientConfig:
    base_url: str
    timeout_s: float = 10.0
    retries: int = 2
    backoff_base_s: float = 0.25
    expected_dim: int = 768


class EmbedError(RuntimeError):
    def __init__(self, detail: str, attempts: int = 0, dim_mismatch: bool = False):
        super().__init__(detail)
        self.attempts = attempts
        self.dim_mismatch = dim_mismatch


class EmbedClient:
    """Client for the external text/image encoder. POSTs {"text": ...} to
    <base_url>/embed and expects {"embedding": [...]}. A custom httpx client
    can be injected for tests."""

    def __init__(self, config: EmbedClientConfig, http: httpx.Client | None = None):
        self.config = config
        self._http = http or httpx.Client(timeout=config.timeout_s)

    def embed_text(self, text: str) -> np.ndarray:
        last_error = None
        attempts = 0
        for attempt in range(self.config.retries + 1):
            attempts = attempt + 1
            try:
                resp = self._http.post(
                    self.config.base_url.rstrip("/") + "/embed",
                    json={"text": text})
                resp.raise_for_status()
                values = np.asarray(resp.json()["embedding"], dtype=np.float64)
                if values.shape != (self.config.expected_dim,):
                    raise EmbedError(
                        f"embedding dim {values.shape[0]} != expected "
                        f"{self.config.expected_dim}",
                        attempts=attempts, dim_mismatch=True)
                return values
            except EmbedError:
                raise
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.config.retries:
                    time.sleep(self.config.backoff_base_s * (2 ** attempt))
        raise EmbedError(f"embedder unreachable: {last_error}", attempts=attempts)


@dataclass
class Snapshot:
    """Immutable view of the loaded assets; replaced wholesale on reload."""

    model: MorphableModel | None = None
    weights: MlpWeights | None = None
    stats: NormStats | None = None
    profile: DimsProfile = field(default_factory=DimsProfile)
    weights_signature: str | None = None
    model_path: str | None = None
    weights_path: str | None = None


def weights_signature(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
    return digest


def _error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


def load_snapshot(model_path: str | None, weights_path: str | None,
                  profile: DimsProfile | None = None) -> Snapshot:
    snap = Snapshot()
    if profile is not None:
        snap.profile = profile
    if model_path:
        snap.model = assetio.load_model_asset(model_path)
        snap.model_path = model_path
        snap.profile = DimsProfile(
            n_shape=snap.model.n_shape,
            n_expression=snap.model.n_expression,
            pose_joints=snap.model.n_joints,
            n_detail=snap.profile.n_detail,
        )
    if weights_path:
        snap.weights, snap.stats = load_weights(weights_path)
        snap.weights_path = weights_path
        snap.weights_signature = weights_signature(weights_path)
    return snap


def create_app(model_path: str | None = None, weights_path: str | None = None,
               embed_config: EmbedClientConfig | None = None,
               embed_client: EmbedClient | None = None,
               normalize_embeddings: bool | None = None,
               profile: DimsProfile | None = None) -> FastAPI:
    app = FastAPI(title="faceforge")
    app.state.snapshot = load_snapshot(model_path, weights_path, profile)
    if embed_client is None and embed_config is not None:
        embed_client = EmbedClient(embed_config)
    app.state.embed_client = embed_client
    app.state.normalize_embeddings = normalize_embeddings

    def snap() -> Snapshot:
        return app.state.snapshot

    @app.post("/v1/reload")
    async def reload(body: dict):
        """Atomic hot reload: builds the new snapshot fully, then swaps."""
        try:
            new = load_snapshot(body.get("model", snap().model_path),
                                body.get("weights", snap().weights_path),
                                snap().profile)
        except (OSError, ValueError) as exc:
            return _error(400, "reload_failed", str(exc))
        app.state.snapshot = new
        return {"weights_signature": new.weights_signature}

    @app.get("/v1/info")
    async def info():
        s = snap()
        model_info = None
        if s.model is not None:
            model_info = {
                "n_vertices": s.model.n_vertices,
                "n_faces": s.model.n_faces,
                "n_shape": s.model.n_shape,
                "n_expression": s.model.n_expression,
                "n_joints": s.model.n_joints,
                "n_pose_correctives": s.model.n_pose_correctives,
            }
        return {
            "model": model_info,
            "weights_signature": s.weights_signature,
            "architecture": None if s.weights is None else s.weights.architecture,
            "embedder": "configured" if app.state.embed_client else None,
        }

    @app.post("/v1/embed-text")
    async def embed_text(body: dict):
        client: EmbedClient | None = app.state.embed_client
        if client is None:
            return _error(503, "embedder_unconfigured",
                          "no embedding service configured (EMBED_SERVICE_URL)")
        text = body.get("text")
        if not isinstance(text, str) or not text:
            return _error(400, "bad_request", "body must contain non-empty 'text'")
        try:
            values = client.embed_text(text)
        except EmbedError as exc:
            if exc.dim_mismatch:
                return _error(502, "bad_embedding", str(exc))
            return _error(503, "embedder_unreachable",
                          f"{exc} after {exc.attempts} attempts")
        if app.state.normalize_embeddings:
            norm = float(np.linalg.norm(values))
            if norm > 0:
                values = values / norm
        return {"embedding": [float(v) for v in values], "dim": len(values)}

    @app.post("/v1/regress")
    async def regress(body: dict):
        s = snap()
        if s.weights is None:
            return _error(409, "no_weights", "no regressor weights loaded")
        emb = body.get("embedding")
        if not isinstance(emb, list):
            return _error(400, "bad_request", "body must contain 'embedding' array")
        values = np.asarray(emb, dtype=np.float64)
        if values.shape != (s.weights.input_dim,):
            return _error(400, "bad_request",
                          f"embedding length {values.shape[0]} != {s.weights.input_dim}")
        if not np.all(np.isfinite(values)):
            return _error(400, "bad_request", "embedding contains non-finite values")
        try:
            params = regress_params(s.weights, values, s.profile, s.stats)
        except RegressorError as exc:
            return _error(400, "bad_request", str(exc))
        return Response(content=meshio.params_to_json(params),
                        media_type="application/json",
                        headers={"X-Weights-Signature": s.weights_signature or ""})

    @app.post("/v1/decode")
    async def decode_endpoint(body: dict):
        s = snap()
        if s.model is None:
            return _error(409, "no_model", "no model asset loaded")
        want = body.get("want", "obj")
        if want not in ("obj", "json"):
            return _error(400, "bad_request", f"unknown output form {want!r}")
        raw = body.get("params")
        if not isinstance(raw, dict):
            return _error(400, "bad_request", "body must contain 'params' object")
        try:
            params = ParamVector(
                beta=np.asarray(raw.get("beta", []), dtype=np.float64),
                psi=np.asarray(raw.get("psi", []), dtype=np.float64),
                theta=np.asarray(raw.get("theta", []), dtype=np.float64),
                delta=np.asarray(raw.get("delta", []), dtype=np.float64),
            )
            mesh = decode(s.model, params)
        except (DecodeError, ValueError) as exc:
            return _error(400, "bad_params", str(exc))
        if want == "json":
            return {
                "vertices": mesh.vertices.tolist(),
                "faces": mesh.faces.tolist(),
                "normals": mesh.vertex_normals.tolist(),
                "uvs": None if mesh.uv_coords is None else mesh.uv_coords.tolist(),
            }
        return Response(content=meshio.mesh_to_obj(mesh), media_type="model/obj")

    return app


def app_from_env() -> FastAPI:
    """Entry point for `uvicorn faceforge.service:app_from_env --factory`."""
    embed_url = os.environ.get("EMBED_SERVICE_URL")
    cfg = EmbedClientConfig(base_url=embed_url) if embed_url else None
    normalize = os.environ.get("NORMALIZE_EMBEDDINGS", "1") not in ("0", "false")
    return create_app(
        model_path=os.environ.get("MODEL_ASSET"),
        weights_path=os.environ.get("WEIGHTS"),
        embed_config=cfg,
        normalize_embeddings=normalize,
    )
