"""Command-line front end: thin deterministic wrappers over the library.

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand takes
--json for machine-readable output and --config for a key=value defaults
file (flags override the file).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import assetio, dataset as ds, meshio, regressor as rg
from .morphable import AssetError, DecodeError, DetailMap, decode
from .regressor import DimsProfile, TrainConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(args, payload: dict, text: str | None = None):
    if args.json:
        print(json.dumps(payload))
    elif text is not None:
        print(text)


def _profile_from_args(args) -> DimsProfile:
    return DimsProfile(n_shape=args.shape, n_expression=args.expression,
                       pose_joints=args.pose_joints, n_detail=args.detail)


def _add_profile_flags(p):
    p.add_argument("--shape", type=int, default=100)
    p.add_argument("--expression", type=int, default=50)
    p.add_argument("--pose-joints", type=int, default=2)
    p.add_argument("--detail", type=int, default=128)


def _load_embedding(path: str) -> np.ndarray:
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict):
        obj = obj["embedding"]
    return np.asarray(obj, dtype=np.float64)


def _splits(data: ds.Dataset, args) -> tuple[list[str], list[str]]:
    if getattr(args, "splits", None):
        obj = json.loads(Path(args.splits).read_text())
        return obj["train"], obj["val"]
    return ds.split(data, args.fraction, args.seed)


def cmd_ingest(args) -> int:
    records = list(ds.read_jsonl(args.input))
    embed_dim = args.embed_dim or (len(records[0].embedding) if records else 768)
    data, diagnostics = ds.ingest(records, embed_dim, _profile_from_args(args),
                                  min_age=args.min_age)
    ds.write_dataset(data, args.out)
    _emit(args, {"kept": len(data), "rejected": len(diagnostics),
                 "diagnostics": diagnostics, "out": args.out},
          f"kept {len(data)} records ({len(diagnostics)} rejected) -> {args.out}")
    return 0


def cmd_split(args) -> int:
    data = ds.read_dataset(args.data)
    train_ids, val_ids = ds.split(data, args.fraction, args.seed)
    Path(args.out).write_text(json.dumps({"train": train_ids, "val": val_ids}) + "\n")
    _emit(args, {"train": len(train_ids), "val": len(val_ids), "out": args.out},
          f"split {len(train_ids)}/{len(val_ids)} -> {args.out}")
    return 0


def cmd_summarize(args) -> int:
    data = ds.read_dataset(args.data)
    report = ds.summarize(data)
    print(json.dumps(report, indent=None if args.json else 2))
    return 0


def cmd_train(args) -> int:
    data = ds.read_dataset(args.data)
    train_ids, val_ids = _splits(data, args)
    stats = ds.compute_stats(data, train_ids,
                             normalize_embeddings=not args.no_normalize)
    tx, ty = data.arrays(train_ids)
    vx, vy = data.arrays(val_ids)
    if not args.no_normalize:
        tx = rg.normalize_embedding(tx)
        vx = rg.normalize_embedding(vx)
    ty = (ty - stats.mean) / stats.std
    vy = (vy - stats.mean) / stats.std
    arch = args.arch or f"{data.embed_dim}-1024-1024-512-{data.profile.total}"
    weights = rg.init_weights(arch, seed=args.seed)
    config = TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                         max_epochs=args.epochs, patience=args.patience,
                         seed=args.seed, validation_fraction=args.fraction)
    weights, report = rg.train(weights, tx, ty, vx, vy, config,
                               group_sizes=data.profile.group_sizes())
    rg.save_weights(weights, args.out, stats)
    payload = {
        "out": args.out, "architecture": arch,
        "best_epoch": report.best_epoch, "stopped_epoch": report.stopped_epoch,
        "best_val_loss": report.val_losses[report.best_epoch - 1],
        "group_val_losses": report.final_group_val_losses,
        "wall_time_s": report.wall_time_s,
    }
    _emit(args, payload,
          f"trained {arch}: best epoch {report.best_epoch}, "
          f"val loss {report.val_losses[report.best_epoch - 1]:.6g} -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    weights, stats = rg.load_weights(args.weights)
    profile = _profile_from_args(args)
    if weights.output_dim != profile.total:
        raise rg.RegressorError(
            f"weights output dim {weights.output_dim} != profile total "
            f"{profile.total}; adjust --shape/--expression/--pose-joints/--detail")
    embedding = _load_embedding(args.embedding)
    params = rg.regress_params(weights, embedding, profile, stats)
    meshio.write_params_json(params, args.out)
    _emit(args, {"out": args.out}, f"params -> {args.out}")
    return 0


def _decode_mesh(args):
    model = assetio.load_model_asset(args.model)
    params = meshio.read_params_json(args.params)
    detail = None
    if getattr(args, "detail_map", None):
        samples = np.load(args.detail_map)
        detail = DetailMap(samples=np.asarray(samples, dtype=np.float64),
                           scale=args.detail_scale)
    return decode(model, params, detail)


def cmd_decode(args) -> int:
    mesh = _decode_mesh(args)
    Path(args.out).write_text(meshio.mesh_to_obj(mesh))
    _emit(args, {"out": args.out, "vertices": int(mesh.vertices.shape[0])},
          f"mesh ({mesh.vertices.shape[0]} vertices) -> {args.out}")
    return 0


def cmd_export_obj(args) -> int:
    mesh = _decode_mesh(args)
    written = meshio.export_obj(mesh, args.out, texture=args.texture)
    _emit(args, {"written": [str(p) for p in written]},
          "wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_eval(args) -> int:
    data = ds.read_dataset(args.data)
    weights, stats = rg.load_weights(args.weights)
    _, val_ids = _splits(data, args)
    vx, vy = data.arrays(val_ids)
    if stats is not None:
        if stats.normalize_embeddings:
            vx = rg.normalize_embedding(vx)
        vy = (vy - stats.mean) / stats.std
    losses = rg.group_losses(weights, vx, vy, data.profile.group_sizes())
    total = rg.evaluate(weights, vx, vy, data.profile.group_sizes())
    payload = {"val_mse": total, "group_val_mse": losses, "val_count": len(val_ids)}
    _emit(args, payload,
          "val MSE {:.6g} ({})".format(
              total, ", ".join(f"{k}={v:.6g}" for k, v in losses.items())))
    if not args.json:
        pass
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import EmbedClientConfig, create_app

    cfg = EmbedClientConfig(base_url=args.embed_url) if args.embed_url else None
    app = create_app(model_path=args.model, weights_path=args.weights,
                     embed_config=cfg,
                     normalize_embeddings=not args.no_normalize)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_make_toy_asset(args) -> int:
    assetio.save_model_asset(assetio.make_toy_model(), args.out)
    _emit(args, {"out": args.out}, f"toy asset -> {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="faceforge", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true")
        p.add_argument("--config")
        p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("ingest", allow_abbrev=False)
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-age", type=float, default=18.0)
    p.add_argument("--embed-dim", type=int, default=0)
    _add_profile_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", allow_abbrev=False)
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("summarize", allow_abbrev=False)
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("train", allow_abbrev=False)
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--arch")
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", allow_abbrev=False)
    common(p)
    p.add_argument("--embedding", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    _add_profile_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("decode", allow_abbrev=False)
    common(p)
    p.add_argument("--params", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--detail-map", help="npy file of scalar displacement samples")
    p.add_argument("--detail-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("export-obj", allow_abbrev=False)
    common(p)
    p.add_argument("--params", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--texture")
    p.add_argument("--detail-map")
    p.add_argument("--detail-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_export_obj)

    p = sub.add_parser("eval", allow_abbrev=False)
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--splits")
    p.add_argument("--fraction", type=float, default=0.1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", allow_abbrev=False)
    common(p)
    p.add_argument("--model")
    p.add_argument("--weights")
    p.add_argument("--embed-url")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-toy-asset", allow_abbrev=False)
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_toy_asset)

    return parser


def _apply_config(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config:
        overrides = {}
        for lineno, raw in enumerate(Path(args.config).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{args.config}:{lineno}: expected key=value")
            key, value = (tok.strip() for tok in line.split("=", 1))
            overrides[key.replace("-", "_")] = value
        # flags explicitly present on the command line win over the file
        explicit = {tok.lstrip("-").replace("-", "_").split("=", 1)[0]
                    for tok in argv if tok.startswith("--")}
        for key, value in overrides.items():
            if key in explicit or not hasattr(args, key):
                continue
            current = getattr(args, key)
            if isinstance(current, bool):
                value = value.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            setattr(args, key, value)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ds.DatasetError, AssetError, DecodeError, meshio.MeshIOError,
            rg.RegressorError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
