"""The golden CLI pipeline: synth -> pair -> triangulate -> confidence -> clean -> metrics."""

from __future__ import annotations

import contextlib
import io
import json
import os
from pathlib import Path

from parallaxdepth.cli import main

GOLDEN = Path(__file__).parent / "data" / "golden_pipeline.json"


def _call(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    if code != 0:
        raise RuntimeError(f"{argv[2] if len(argv) > 2 else argv}: exit {code}: {err.getvalue().strip()}")
    return out.getvalue()


def run_pipeline(workdir, threads: int = 1):
    """Run every stage inside ``workdir`` with relative paths.

    Returns ``(transcript, files)``: the stdout of each stage in order and
    the bytes of every file written, keyed by relative path.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    prev = Path.cwd()
    os.chdir(workdir)
    try:
        t = ["--threads", str(threads)]
        transcript = []

        def step(*argv):
            text = _call(t + list(argv))
            transcript.append((argv[0], text))
            return json.loads(text)

        step("synth", "--seed", "3", "--width", "48", "--height", "40", "--frames", "4",
             "--motion", "diagonal", "--baseline", "0.15", "--flow-interval", "3", "--out", "scene")
        pairs = step("pair", "--poses", "scene/poses.json")
        src = pairs[0]["source"]
        poses = ["--poses", "scene/poses.json", "--ref", "0", "--src", str(src)]
        step("triangulate", "--flow", f"scene/flow_0000_{src:04d}.pfm", *poses,
             "--mask", "scene/mask_0000.pgm", "--exclude-epipole", "--out", "pp.pfm")
        step("confidence", "--flow", f"scene/flow_0000_{src:04d}.pfm", "--backward", f"scene/flow_{src:04d}_0000.pfm",
             *poses, "--mask", "scene/mask_0000.pgm", "--depth", "pp.pfm", "--depth-out", "pp_conf.pfm",
             "--out", "conf.pfm")
        step("clean", "--mvs", "scene/depth_0000.pfm", "--pp", "pp_conf.pfm", "--out", "clean.pfm")
        step("metrics", "--pred", "pp_conf.pfm", "--gt", "clean.pfm", "--mask", "scene/mask_0000.pgm")
        files = {str(p.relative_to(".")): p.read_bytes() for p in sorted(Path(".").rglob("*")) if p.is_file()}
    finally:
        os.chdir(prev)
    return transcript, files


def close(a, b, tol=1e-6) -> bool:
    """Structural comparison; numbers within ``tol`` absolute or relative."""
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(close(a[k], b[k], tol) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(close(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, bool) or isinstance(b, bool) or a is None or b is None or isinstance(a, str):
        return a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return abs(a - b) <= tol * max(1.0, abs(a), abs(b))
    return a == b


def write_golden(workdir) -> None:
    transcript, _ = run_pipeline(workdir)
    GOLDEN.parent.mkdir(exist_ok=True)
    GOLDEN.write_text(json.dumps([[name, json.loads(text)] for name, text in transcript]) + "\n")


if __name__ == "__main__":
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        write_golden(tmp)
    print(f"wrote {GOLDEN}")
