"""Pipeline CLI: explicit stages over config files.

Stages are separate subcommands rather than one monolithic run because
the expensive fits (PCA, GMMs) are reused across selection fractions.
Every stage resolves its configuration (defaults < config file < flags),
writes artifacts atomically, and drops a resolved-config snapshot next to
its outputs so any run can be reproduced. Exit codes: 0 success, 2 usage
error, 3 missing upstream artifact, 4 data/format error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import classify, featio, geometry, keypart, modelio
from .codebook import GmmModel, ScaleGrouping, default_grouping, gmm_fit
from .encoder import FvLayout, encode_image
from .mmp import multi_max_pool, pool_record
from .reduce import PcaModel, pca_apply, pca_fit
from .select import (
    SelectionMask,
    cluster_importance,
    mi_per_dimension,
    select_clusters,
)

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_DATA = 4

DEFAULTS = {
    "features": None,
    "model_dir": "models",
    "encoded_dir": "encoded",
    "output_dir": ".",
    "classes": None,
    "pca_dims": 128,
    "components": 128,
    "grid": None,
    "stack": "vgg-m",
    "fraction": 0.25,
    "c_reg": 1.0,
    "seed": 0,
    "pca_sample": 1_000_000,
    "gmm_sample": 500_000,
    "mi_bins": 8,
    "mi_smoothing": 0.1,
    "svm_tol": 1e-3,
    "top_k": 20,
}


class MissingArtifactError(Exception):
    def __init__(self, path, run_first):
        super().__init__(f"missing artifact {path}; run `scpm {run_first}` first")


class DataError(Exception):
    pass


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise MissingArtifactError(config_path, "with a valid --config path") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config {config_path}: {exc}") from None
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise DataError(f"config {config_path}: unknown keys {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            cfg[key] = value
    return cfg


def _snapshot(cfg: dict, stage: str, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    snap = dict(cfg)
    snap["stage"] = stage
    modelio.write_json_atomic(os.path.join(out_dir, f"{stage}.config.json"), snap)


def _require(path, run_first):
    if path is None or not os.path.exists(path):
        raise MissingArtifactError(path, run_first)
    return path


def _load_stack(cfg) -> geometry.LayerStack:
    name = cfg["stack"]
    if name in geometry.PRESETS:
        return geometry.PRESETS[name]
    _require(name, "with --stack set to a preset name or stack file")
    return geometry.load_stack(name)


def _iter_features(cfg, split=None):
    path = _require(cfg["features"], "with --features pointing at a PFV1 file")
    for rec in featio.read_features(path):
        if split is None or rec.split == split:
            yield rec


def _class_names(cfg):
    if cfg["classes"]:
        with open(cfg["classes"], "r", encoding="utf-8") as fh:
            return json.load(fh)
    return None


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_pca_fit(cfg) -> str:
    stack = _load_stack(cfg)
    chunks = []
    for rec in _iter_features(cfg, split="train"):
        for prop in rec.proposals:
            chunks.append(pool_record(prop, stack).descriptors)
    if not chunks:
        raise DataError("no training proposals in features file")
    sample = np.concatenate(chunks, axis=0)
    model = pca_fit(sample, p=cfg["pca_dims"], seed=cfg["seed"], max_sample=cfg["pca_sample"])
    os.makedirs(cfg["model_dir"], exist_ok=True)
    out = os.path.join(cfg["model_dir"], "pca.smf")
    model.save(out)
    _snapshot(cfg, "pca-fit", cfg["model_dir"])
    return out


def _detect_grid(cfg) -> int:
    if cfg["grid"]:
        return int(cfg["grid"])
    for rec in _iter_features(cfg):
        return rec.proposals[0].grid
    raise DataError("empty features file")


def stage_gmm_fit(cfg) -> list:
    stack = _load_stack(cfg)
    pca_path = _require(os.path.join(cfg["model_dir"], "pca.smf"), "pca-fit")
    pca = PcaModel.load(pca_path)
    grid = _detect_grid(cfg)
    grouping = default_grouping(grid)
    buckets = [[] for _ in range(grouping.m)]
    for rec in _iter_features(cfg, split="train"):
        for prop in rec.proposals:
            pooled = pool_record(prop, stack)
            reduced = pca_apply(pca, pooled.descriptors)
            group_ids = grouping.group_of_scales(pooled.scales)
            for j in range(grouping.m):
                rows = reduced[group_ids == j]
                if rows.size:
                    buckets[j].append(rows)
    os.makedirs(cfg["model_dir"], exist_ok=True)
    modelio.write_json_atomic(
        os.path.join(cfg["model_dir"], "grouping.json"), grouping.to_jsonable()
    )
    paths = []
    for j in range(grouping.m):
        if not buckets[j]:
            raise DataError(f"no training parts fell in scale group {j}")
        sample = np.concatenate(buckets[j], axis=0)
        model = gmm_fit(
            sample,
            k=cfg["components"],
            seed=cfg["seed"] + j,
            group=j,
            max_sample=cfg["gmm_sample"],
        )
        path = os.path.join(cfg["model_dir"], f"gmm_g{j}.smf")
        model.save(path)
        paths.append(path)
    _snapshot(cfg, "gmm-fit", cfg["model_dir"])
    return paths


def _load_models(cfg):
    pca = PcaModel.load(_require(os.path.join(cfg["model_dir"], "pca.smf"), "pca-fit"))
    grouping_path = _require(os.path.join(cfg["model_dir"], "grouping.json"), "gmm-fit")
    with open(grouping_path, "r", encoding="utf-8") as fh:
        grouping = ScaleGrouping.from_jsonable(json.load(fh))
    gmms = [
        GmmModel.load(_require(os.path.join(cfg["model_dir"], f"gmm_g{j}.smf"), "gmm-fit"))
        for j in range(grouping.m)
    ]
    return pca, grouping, gmms


def stage_encode(cfg, mask_path=None) -> str:
    stack = _load_stack(cfg)
    pca, grouping, gmms = _load_models(cfg)
    mask = None
    if mask_path:
        with open(_require(mask_path, "select"), "r", encoding="utf-8") as fh:
            mask = SelectionMask.from_jsonable(json.load(fh))
    rows = []
    images = []
    layout = None
    for rec in _iter_features(cfg):
        fv = encode_image(rec, grouping, pca, gmms, mask=mask, stack=stack)
        layout = fv.layout
        rows.append(fv.values.astype(np.float32))
        images.append({"id": rec.image_id, "label": rec.label, "split": rec.split})
    if not rows:
        raise DataError("no images to encode")
    matrix = np.vstack(rows)
    os.makedirs(cfg["encoded_dir"], exist_ok=True)
    out = os.path.join(cfg["encoded_dir"], "fv.smf")
    modelio.save_model(out, "fv_matrix", {"n": matrix.shape[0], "width": matrix.shape[1]}, {"matrix": matrix})
    modelio.write_json_atomic(
        os.path.join(cfg["encoded_dir"], "fv.json"),
        {
            "layout": layout.to_jsonable(),
            "kept": [list(k) for k in mask.kept] if mask else None,
            "groups": grouping.to_jsonable(),
            "images": images,
        },
    )
    _snapshot(cfg, "encode", cfg["encoded_dir"])
    return out


def load_encoded(encoded_dir):
    matrix_path = _require(os.path.join(encoded_dir, "fv.smf"), "encode")
    meta_path = _require(os.path.join(encoded_dir, "fv.json"), "encode")
    _, _, arrays = modelio.load_model(matrix_path, expect_kind="fv_matrix")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return arrays["matrix"], meta


def stage_select(cfg) -> str:
    matrix, meta = load_encoded(cfg["encoded_dir"])
    if meta["kept"] is not None:
        raise DataError("select needs an unmasked encoding; rerun encode without --mask")
    layout = FvLayout.from_jsonable(meta["layout"])
    train_rows = [i for i, im in enumerate(meta["images"]) if im["split"] == "train"]
    if not train_rows:
        raise DataError("no training rows in encoding")
    labels = np.array([meta["images"][i]["label"] for i in train_rows])
    mi = mi_per_dimension(
        matrix[train_rows], labels, bins=cfg["mi_bins"], smoothing=cfg["mi_smoothing"]
    )
    importance = cluster_importance(mi, layout)
    mask = select_clusters(importance, cfg["fraction"])
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    kept_set = set(mask.kept)
    modelio.write_json_atomic(
        os.path.join(out_dir, "importance.json"),
        {
            "layout": layout.to_jsonable(),
            "clusters": [
                {"group": g, "component": c, "importance": v, "kept": (g, c) in kept_set}
                for (g, c), v in importance.items()
            ],
        },
    )
    out = os.path.join(out_dir, "mask.json")
    modelio.write_json_atomic(out, mask.to_jsonable())
    _snapshot(cfg, "select", out_dir)
    return out


def stage_train(cfg) -> str:
    matrix, meta = load_encoded(cfg["encoded_dir"])
    train_rows = [i for i, im in enumerate(meta["images"]) if im["split"] == "train"]
    if not train_rows:
        raise DataError("no training rows in encoding")
    labels = np.array([meta["images"][i]["label"] for i in train_rows])
    names = _class_names(cfg)
    model = classify.svm_train(
        matrix[train_rows],
        labels,
        c_reg=cfg["c_reg"],
        seed=cfg["seed"],
        tol=cfg["svm_tol"],
        class_names=names,
    )
    os.makedirs(cfg["model_dir"], exist_ok=True)
    out = os.path.join(cfg["model_dir"], "linear.smf")
    model.save(out)
    _snapshot(cfg, "train", cfg["model_dir"])
    return out


def stage_eval(cfg) -> str:
    matrix, meta = load_encoded(cfg["encoded_dir"])
    model = classify.LinearModel.load(
        _require(os.path.join(cfg["model_dir"], "linear.smf"), "train")
    )
    test_rows = [i for i, im in enumerate(meta["images"]) if im["split"] == "test"]
    if not test_rows:
        raise DataError("no test rows in encoding")
    labels = np.array([meta["images"][i]["label"] for i in test_rows])
    if matrix.shape[1] != model.n_dims:
        raise DataError(
            f"encoding width {matrix.shape[1]} does not match model width {model.n_dims}"
        )
    report = classify.evaluate(model, matrix[test_rows], labels)
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "report.json")
    modelio.write_json_atomic(out, report)
    _snapshot(cfg, "eval", out_dir)
    return out


def stage_keyparts(cfg, class_a: int, class_b: int, mask_path: str, render_dir=None, manifest=None) -> str:
    stack = _load_stack(cfg)
    pca, grouping, gmms = _load_models(cfg)
    with open(_require(mask_path, "select"), "r", encoding="utf-8") as fh:
        mask = SelectionMask.from_jsonable(json.load(fh))
    names = _class_names(cfg)
    name_map = {i: n for i, n in enumerate(names)} if names else {}
    records = list(_iter_features(cfg))
    scorers = keypart.train_pair_scorers(
        records,
        class_a,
        class_b,
        mask.kept,
        grouping,
        pca,
        gmms,
        stack=stack,
        c_reg=cfg["c_reg"],
        seed=cfg["seed"],
        class_names=name_map,
    )
    scored = []
    for rec in records:
        if rec.split == "test" and rec.label in (class_a, class_b):
            scored.extend(keypart.score_parts(rec, scorers, grouping, pca, gmms, stack=stack))
    report = keypart.top_parts_report(scored, k=cfg["top_k"])
    report["positive"] = scorers.positive
    report["negative"] = scorers.negative
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    out = os.path.join(out_dir, "keyparts.json")
    modelio.write_json_atomic(out, report)
    if render_dir and manifest:
        _render_overlays(report, manifest, render_dir)
    _snapshot(cfg, "keyparts", out_dir)
    return out


def _render_overlays(report, manifest_path, render_dir):
    """Best-effort box overlays onto the source images named in the manifest."""
    try:
        from PIL import Image, ImageDraw
    except ImportError:
        print("overlay rendering skipped: Pillow not installed", file=sys.stderr)
        return
    paths = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                paths[os.path.splitext(os.path.basename(obj["path"]))[0]] = obj["path"]
    os.makedirs(render_dir, exist_ok=True)
    for side, color in (("top", (255, 40, 40)), ("bottom", (40, 90, 255))):
        by_image = {}
        for part in report[side]:
            by_image.setdefault(part["image_id"], []).append(part["box"])
        for image_id, boxes in by_image.items():
            path = paths.get(image_id)
            if not path or not os.path.exists(path):
                print(f"overlay skipped for {image_id}: image not found", file=sys.stderr)
                continue
            img = Image.open(path).convert("RGB")
            draw = ImageDraw.Draw(img)
            for box in boxes:
                draw.rectangle([box[0], box[1], box[2] - 1, box[3] - 1], outline=color, width=2)
            img.save(os.path.join(render_dir, f"{side}_{image_id}.png"))


def cmd_rf_calc(args) -> int:
    if args.stack_file:
        stack = geometry.load_stack(args.stack_file)
    else:
        stack = geometry.PRESETS[args.preset]
    print(geometry.receptive_extent(stack, args.cells))
    return 0


def cmd_mmp_dump(args, cfg) -> int:
    stack = _load_stack(cfg)
    for rec in _iter_features(cfg):
        if args.image_id and rec.image_id != args.image_id:
            continue
        parts = []
        for prop in rec.proposals:
            for part in multi_max_pool(prop, stack):
                entry = {
                    "scale": part.scale,
                    "origin": list(part.origin),
                    "box": list(part.box),
                }
                if args.descriptors:
                    entry["descriptor"] = [float(v) for v in part.descriptor]
                parts.append(entry)
                if args.max_parts and len(parts) >= args.max_parts:
                    break
            if args.max_parts and len(parts) >= args.max_parts:
                break
        json.dump({"image_id": rec.image_id, "parts": parts}, sys.stdout, sort_keys=True)
        print()
        return 0
    raise DataError(f"image {args.image_id!r} not found in features file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scpm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--features", help="PFV1 feature container")
        sp.add_argument("--model-dir", dest="model_dir")
        sp.add_argument("--encoded-dir", dest="encoded_dir")
        sp.add_argument("--out", dest="output_dir")
        sp.add_argument("--classes", help="JSON class-name table")
        sp.add_argument("--stack", help="layer-stack preset name or config file")
        sp.add_argument("--seed", type=int)
        return sp

    sp = add_common(sub.add_parser("pca-fit", help="fit the shared PCA model"))
    sp.add_argument("--p", dest="pca_dims", type=int)

    sp = add_common(sub.add_parser("gmm-fit", help="fit one GMM per scale group"))
    sp.add_argument("--k", dest="components", type=int)
    sp.add_argument("--grid", type=int)

    sp = add_common(sub.add_parser("encode", help="encode images to Fisher vectors"))
    sp.add_argument("--mask", help="selection mask from `select`")

    sp = add_common(sub.add_parser("select", help="rank clusters by MI and build a mask"))
    sp.add_argument(
        "--fraction", type=float,
        help="cluster fraction to keep (reference rows: 1, 0.75, 0.5, 0.25, 0.125)",
    )

    sp = add_common(sub.add_parser("train", help="train the linear classifier"))
    sp.add_argument("--c", dest="c_reg", type=float)

    add_common(sub.add_parser("eval", help="evaluate on the test split"))

    sp = add_common(sub.add_parser("keyparts", help="detect key parts for a class pair"))
    sp.add_argument("--class-a", type=int, required=True)
    sp.add_argument("--class-b", type=int, required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--top", dest="top_k", type=int)
    sp.add_argument("--render-dir")
    sp.add_argument("--manifest")

    sp = sub.add_parser("rf-calc", help="receptive-field extent of a cell block")
    sp.add_argument("--preset", default="vgg-m", choices=sorted(geometry.PRESETS))
    sp.add_argument("--stack", dest="stack_file")
    sp.add_argument("--cells", type=int, default=1)

    sp = add_common(sub.add_parser("mmp-dump", help="dump part proposals as JSON"))
    sp.add_argument("--image-id")
    sp.add_argument("--max-parts", type=int)
    sp.add_argument("--descriptors", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rf-calc":
            return cmd_rf_calc(args)
        cfg = resolve_config(args)
        if args.command == "pca-fit":
            print(stage_pca_fit(cfg))
        elif args.command == "gmm-fit":
            for path in stage_gmm_fit(cfg):
                print(path)
        elif args.command == "encode":
            print(stage_encode(cfg, mask_path=args.mask))
        elif args.command == "select":
            print(stage_select(cfg))
        elif args.command == "train":
            print(stage_train(cfg))
        elif args.command == "eval":
            print(stage_eval(cfg))
        elif args.command == "keyparts":
            print(
                stage_keyparts(
                    cfg,
                    args.class_a,
                    args.class_b,
                    args.mask,
                    render_dir=args.render_dir,
                    manifest=args.manifest,
                )
            )
        elif args.command == "mmp-dump":
            return cmd_mmp_dump(args, cfg)
        return 0
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (
        DataError,
        featio.ContainerError,
        featio.RecordInvariantError,
        featio.ManifestError,
        modelio.ModelFormatError,
        geometry.GeometryError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
