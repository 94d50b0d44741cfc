#!/usr/bin/env python3
"""Validate files written by the CLI against docs/schemas."""
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema


def load(path):
    return json.loads(pathlib.Path(path).read_text())


def main():
    cli, schema_dir = sys.argv[1], pathlib.Path(sys.argv[2])
    schemas = {p.name.removesuffix(".schema.json"): load(p) for p in schema_dir.glob("*.schema.json")}

    def check(name, doc):
        jsonschema.validate(doc, schemas[name], cls=jsonschema.Draft202012Validator)

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        run = lambda *args, **kw: subprocess.run([cli, *map(str, args)], check=True, **kw)
        run("synth", "--classes", "3", "--per-class", "4", "--out", tmp / "data", stdout=subprocess.DEVNULL)
        manifest = load(tmp / "data" / "manifest.json")
        check("manifest", manifest)
        first = tmp / "data" / manifest["entries"][0]["path"]
        for line in first.read_text().splitlines():
            check("landmark-frame", json.loads(line))

        small = ["--dense", "8", "--filters", "2", "--epochs", "2"]
        run("crossval", "--manifest", tmp / "data" / "manifest.json", "--k", "2", "--out", tmp / "cv", *small,
            stdout=subprocess.DEVNULL)
        check("crossval-report", load(tmp / "cv" / "report.json"))

        run("train", "--manifest", tmp / "data" / "manifest.json", "--model", tmp / "m.bin", *small,
            stdout=subprocess.DEVNULL)
        check("scaler", load(tmp / "m.scaler.json"))
        out = run("predict-stream", "--model", tmp / "m.bin", "--rate", "max", first, stdout=subprocess.PIPE, text=True)
        lines = out.stdout.splitlines()
        assert lines, "predict-stream produced no predictions"
        for line in lines:
            check("stream-prediction", json.loads(line))
    print("all documents match their schemas")


if __name__ == "__main__":
    main()
