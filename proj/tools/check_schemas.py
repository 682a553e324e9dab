#!/usr/bin/env python3
"""Validates configs and CLI outputs against the JSON schemas in schemas/.

Usage: check_schemas.py SOURCE_DIR [--cli PATH_TO_KRONFISHER]

Without --cli only the schemas and configs/*.json are checked. With --cli the
script also runs short trainings and validates the snapshot and landscape
files they write, and checks that configs rejected by the schema are rejected
by the CLI too (exit code 2).
"""
import argparse
import copy
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from jsonschema import Draft202012Validator


def load(path):
    with open(path) as f:
        return json.load(f)


def validator(schemas, name):
    schema = load(schemas / f"{name}.schema.json")
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


def errors_of(v, doc):
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in v.iter_errors(doc)]


def absolutize(cfg, base):
    ds = cfg["dataset"]
    for key in ("train_images", "train_labels", "test_images", "test_labels", "path"):
        if key in ds:
            ds[key] = str((base / ds[key]).resolve())
    return cfg


def invalid_variants(cfg):
    """Configs that both the schema and the CLI must reject."""
    out = []
    c = copy.deepcopy(cfg)
    c["epoch"] = 3
    out.append(("unknown top-level key", c))
    c = copy.deepcopy(cfg)
    c["optimizer"] = {"name": "adafisher", "lr": -1}
    out.append(("negative learning rate", c))
    c = copy.deepcopy(cfg)
    c["model"]["layers"][0]["type"] = "dense3d"
    out.append(("unknown layer type", c))
    c = copy.deepcopy(cfg)
    c["batch_size"] = 0
    out.append(("zero batch size", c))
    c = copy.deepcopy(cfg)
    c["logging"] = {"histogram_bins": 1}
    out.append(("single histogram bin", c))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("source_dir", type=Path)
    ap.add_argument("--cli", type=Path)
    args = ap.parse_args()

    schemas = args.source_dir / "schemas"
    run_v = validator(schemas, "run_config")
    snap_v = validator(schemas, "snapshot")
    land_v = validator(schemas, "landscape")
    failures = []

    configs = sorted((args.source_dir / "configs").glob("*.json"))
    if not configs:
        failures.append("no configs found")
    for path in configs:
        for err in errors_of(run_v, load(path)):
            failures.append(f"{path.name}: {err}")
    print(f"checked {len(configs)} configs")

    if args.cli:
        base = args.source_dir / "configs"
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)

            cfg = absolutize(load(base / "mnist_mlp.json"), base)
            for label, bad in invalid_variants(cfg):
                if not errors_of(run_v, bad):
                    failures.append(f"schema accepts {label}")
                p = tmp / "bad.json"
                p.write_text(json.dumps(bad))
                code = subprocess.run([args.cli, "train", "--config", p, "--out", tmp / "bad"],
                                      capture_output=True).returncode
                if code != 2:
                    failures.append(f"CLI exit {code} (expected 2) for {label}")

            cfg["epochs"] = 1
            cfg["logging"] = {"snapshot_every": 1}
            p = tmp / "snap.json"
            p.write_text(json.dumps(cfg))
            subprocess.run([args.cli, "train", "--config", p, "--out", tmp / "snap"], check=True,
                           capture_output=True)
            snaps = sorted((tmp / "snap").glob("kf_snapshot_epoch*.json"))
            if not snaps:
                failures.append("train wrote no snapshot")
            for s in snaps:
                failures += [f"{s.name}: {e}" for e in errors_of(snap_v, load(s))]

            subprocess.run([args.cli, "landscape", "--config", base / "iris_landscape.json",
                            "--epochs", "3", "--out", tmp / "land"], check=True, capture_output=True)
            lands = sorted((tmp / "land").glob("landscape*.json"))
            if len(lands) < 2:
                failures.append("landscape wrote too few files")
            for s in lands:
                failures += [f"{s.name}: {e}" for e in errors_of(land_v, load(s))]
            print(f"checked {len(snaps)} snapshots, {len(lands)} landscape files")

    for f in failures:
        print("FAIL", f)
    print("schema check", "failed" if failures else "passed")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
