"""PNG image IO and the JSONL synthesis manifest."""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
from PIL import Image

from .degrade import DegradationRecord, from_uint8, to_uint8

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def read_image(path: str) -> np.ndarray:
    """Load an 8-bit image as H x W x 3 float64 in [0, 1]."""
    with Image.open(path) as img:
        return from_uint8(np.asarray(img.convert("RGB")))


def write_image(path: str, image: np.ndarray) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def list_images(root: str) -> list:
    """(id, path) pairs under root; id is the relative path sans extension."""
    if not os.path.isdir(root):
        raise FileNotFoundError(f"input directory {root!r} does not exist")
    out = []
    for dirpath, _, names in os.walk(root):
        for name in sorted(names):
            stem, ext = os.path.splitext(name)
            if ext.lower() in IMAGE_EXTENSIONS:
                full = os.path.join(dirpath, name)
                rel = os.path.relpath(os.path.join(dirpath, stem), root)
                out.append((rel.replace(os.sep, "/"), full))
    return sorted(out)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(path: str, header: dict, entries: list) -> None:
    """Write the manifest: one header line, then one JSON object per LR.

    Entries are (record, lr_path, replica) triples; lines are emitted in
    canonical (source_id, replica) order so parallel synthesis runs produce
    byte-identical files.
    """
    ordered = sorted(entries, key=lambda e: (e[0].source_id, e[2]))
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "header", **header}, sort_keys=True) + "\n")
        for record, lr_path, replica in ordered:
            line = record.to_dict()
            line["lr_path"] = lr_path
            line["replica"] = replica
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def read_manifest(path: str):
    """Returns (header dict, list of (record, lr_path, replica))."""
    header = None
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            obj = json.loads(raw)
            if obj.get("type") == "header":
                header = obj
                continue
            try:
                record = DegradationRecord.from_dict(obj)
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
            entries.append((record, obj.get("lr_path", ""), int(obj.get("replica", 0))))
    return header, entries
