import json
import os
import subprocess
import sys

import pytest

from scpm import cli
from scpm.featio import write_features
from synthgen import make_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small PFV1 file plus stage directories, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    ds = make_dataset("pair", n_train=10, n_test=6, seed=0, n_background=0)
    features = root / "features.pfv"
    write_features(ds.records, features, comment="synthetic")
    classes = root / "classes.json"
    classes.write_text(json.dumps(ds.class_names))
    return {"root": root, "features": str(features), "classes": str(classes), "dataset": ds}


def run_stages(ws, tag, fraction=0.5):
    root = ws["root"] / tag
    model_dir = str(root / "models")
    encoded_dir = str(root / "encoded")
    out_dir = str(root / "out")
    base = [
        "--features", ws["features"],
        "--model-dir", model_dir,
        "--encoded-dir", encoded_dir,
        "--out", out_dir,
        "--seed", "0",
    ]
    assert cli.main(["pca-fit", *base, "--p", "8"]) == 0
    assert cli.main(["gmm-fit", *base, "--k", "4"]) == 0
    assert cli.main(["encode", *base]) == 0
    assert cli.main(["select", *base, "--fraction", str(fraction)]) == 0
    assert cli.main(["train", *base, "--classes", ws["classes"]]) == 0
    assert cli.main(["eval", *base]) == 0
    return root


class TestPipelineStages:
    def test_full_pipeline_artifacts(self, workspace):
        root = run_stages(workspace, "full")
        for rel in (
            "models/pca.smf",
            "models/grouping.json",
            "models/gmm_g0.smf",
            "models/gmm_g7.smf",
            "models/linear.smf",
            "models/pca-fit.config.json",
            "encoded/fv.smf",
            "encoded/fv.json",
            "out/importance.json",
            "out/mask.json",
            "out/report.json",
        ):
            assert (root / rel).exists(), rel

    def test_eval_report_schema(self, workspace):
        root = workspace["root"] / "full"
        report = json.loads((root / "out" / "report.json").read_text())
        assert "accuracy" in report and 0.0 <= report["accuracy"] <= 1.0
        assert set(report["per_class"]) == {"species_a", "species_b"}
        assert len(report["confusion"]) == 2

    def test_masked_encode_width(self, workspace):
        root = workspace["root"] / "full"
        base = [
            "--features", workspace["features"],
            "--model-dir", str(root / "models"),
            "--encoded-dir", str(root / "masked"),
            "--seed", "0",
        ]
        assert cli.main(["encode", *base, "--mask", str(root / "out" / "mask.json")]) == 0
        matrix, meta = cli.load_encoded(str(root / "masked"))
        mask = json.loads((root / "out" / "mask.json").read_text())
        layout = meta["layout"]
        assert matrix.shape[1] == len(mask["kept"]) * 2 * layout["p"]
        full, _ = cli.load_encoded(str(root / "encoded"))
        assert matrix.shape[1] < full.shape[1]

    def test_keyparts_stage(self, workspace):
        root = workspace["root"] / "full"
        out = workspace["root"] / "kp"
        # overlays need the source images named in a manifest
        from PIL import Image
        img_dir = workspace["root"] / "imgs"
        img_dir.mkdir(exist_ok=True)
        manifest = workspace["root"] / "manifest.jsonl"
        with open(manifest, "w") as fh:
            for rec in workspace["dataset"].records:
                if rec.split == "test":
                    path = img_dir / f"{rec.image_id}.png"
                    Image.new("RGB", (224, 224), (90, 120, 90)).save(path)
                    fh.write(json.dumps({"path": str(path), "label": rec.label, "split": rec.split}) + "\n")
        render_dir = workspace["root"] / "overlays"
        rc = cli.main([
            "keyparts",
            "--features", workspace["features"],
            "--model-dir", str(root / "models"),
            "--out", str(out),
            "--mask", str(root / "out" / "mask.json"),
            "--class-a", "0",
            "--class-b", "1",
            "--classes", workspace["classes"],
            "--seed", "0",
            "--render-dir", str(render_dir),
            "--manifest", str(manifest),
        ])
        assert rc == 0
        report = json.loads((out / "keyparts.json").read_text())
        assert report["positive"] == "species_a"
        assert report["negative"] == "species_b"
        assert 1 <= len(report["top"]) <= 20
        for part in report["top"]:
            x0, y0, x1, y1 = part["box"]
            assert 0 <= x0 < x1 <= 224 and 0 <= y0 < y1 <= 224
        rendered = list(render_dir.glob("*.png"))
        assert rendered, "no overlay images written"


class TestDeterminism:
    def test_reruns_are_byte_identical(self, workspace):
        root = run_stages(workspace, "det")
        first = {}
        for dirpath, _, files in os.walk(root):
            for name in files:
                path = os.path.join(dirpath, name)
                with open(path, "rb") as fh:
                    first[path] = fh.read()
        run_stages(workspace, "det")  # same directories, same seeds
        assert len(first) >= 10
        for path, blob in first.items():
            with open(path, "rb") as fh:
                assert fh.read() == blob, path


class TestCliSurface:
    def test_rf_calc_prints_139(self):
        out = subprocess.run(
            [sys.executable, "-m", "scpm.cli", "rf-calc", "--preset", "vgg-m", "--cells", "1"],
            capture_output=True, text=True,
        )
        assert out.returncode == 0
        assert out.stdout.strip() == "139"

    def test_rf_calc_custom_stack(self, tmp_path):
        stack = tmp_path / "stack.txt"
        stack.write_text("input 64\nconv 3 1\n")
        out = subprocess.run(
            [sys.executable, "-m", "scpm.cli", "rf-calc", "--stack", str(stack), "--cells", "2"],
            capture_output=True, text=True,
        )
        assert out.stdout.strip() == "4"

    def test_usage_error_exits_2(self):
        out = subprocess.run(
            [sys.executable, "-m", "scpm.cli", "no-such-stage"],
            capture_output=True, text=True,
        )
        assert out.returncode == 2

    def test_missing_artifact_exits_3(self, workspace, tmp_path):
        rc = cli.main([
            "eval",
            "--features", workspace["features"],
            "--model-dir", str(tmp_path / "nothing"),
            "--encoded-dir", str(tmp_path / "nowhere"),
            "--out", str(tmp_path),
        ])
        assert rc == 3

    def test_data_error_exits_4(self, tmp_path):
        bad = tmp_path / "bad.pfv"
        bad.write_bytes(b"JUNKJUNKJUNK")
        rc = cli.main(["pca-fit", "--features", str(bad), "--model-dir", str(tmp_path / "m")])
        assert rc == 4

    def test_mmp_dump_emits_json(self, workspace, capsys):
        rc = cli.main([
            "mmp-dump",
            "--features", workspace["features"],
            "--max-parts", "5",
        ])
        assert rc == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["image_id"].startswith("pair-")
        assert len(payload["parts"]) == 5
        assert {"scale", "origin", "box"} <= set(payload["parts"][0])

    def test_config_file_with_flag_override(self, workspace, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "features": workspace["features"],
            "model_dir": str(tmp_path / "models"),
            "pca_dims": 8,
            "components": 4,
        }))
        assert cli.main(["pca-fit", "--config", str(cfg), "--p", "6"]) == 0
        snap = json.loads((tmp_path / "models" / "pca-fit.config.json").read_text())
        assert snap["pca_dims"] == 6  # flag wins over config file
        assert snap["components"] == 4

    def test_unknown_config_key_rejected(self, workspace, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"featuers": "typo"}))
        assert cli.main(["pca-fit", "--config", str(cfg)]) == 4
