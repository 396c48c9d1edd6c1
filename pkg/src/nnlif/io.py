"""Plain-text artifact writers: CSV, ASCII PGM and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path


def fmt(x) -> str:
    """17 significant digits for floats, ``str`` otherwise."""
    if isinstance(x, float):
        return format(x, ".17g")
    if hasattr(x, "dtype") and x.dtype.kind == "f":
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_pgm(path, pixels, maxval: int = 255) -> Path:
    """ASCII (P2) greymap; ``pixels`` is a list of rows."""
    path = Path(path)
    h = len(pixels)
    w = len(pixels[0]) if h else 0
    lines = ["P2", f"{w} {h}", str(maxval)]
    lines += [" ".join(str(int(p)) for p in row) for row in pixels]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_pgm(path):
    tok = Path(path).read_text().split()
    if tok[0] != "P2":
        raise ValueError("not an ASCII PGM file")
    w, h, _ = int(tok[1]), int(tok[2]), int(tok[3])
    vals = [int(t) for t in tok[4:]]
    return [vals[i * w:(i + 1) * w] for i in range(h)]


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, files, wall_time: float,
                   version: str, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    man = {
        "command": command,
        "config": config,
        "version": version,
        "wall_time_s": wall_time,
        "outputs": {Path(f).name: sha256(f) for f in files},
    }
    if extra:
        man.update(extra)
    path = out_dir / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(man, indent=2, sort_keys=True, default=str) + "\n")
    os.replace(tmp, path)
    return path


def verify_manifest(out_dir) -> list[str]:
    """Names of files whose current hash differs from the manifest (empty when all match)."""
    out_dir = Path(out_dir)
    man = json.loads((out_dir / "manifest.json").read_text())
    bad = []
    for name, digest in man["outputs"].items():
        p = out_dir / name
        if not p.exists() or sha256(p) != digest:
            bad.append(name)
    return bad
