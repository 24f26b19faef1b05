"""Array snapshots: text manifest + little-endian float32 payload.

Layout on disk for a prefix ``p``:
  p.manifest  header line then one ``name<TAB>shape<TAB>offset`` line per block,
              offset in bytes from the start of p.bin
  p.bin       concatenated float32 blocks in manifest order
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping

import numpy as np

from src.errors import ManifestError, MissingFileError

LOG = logging.getLogger("semsplat.snapshots")

MAGIC = "semsplat-snapshot v1"
ITEMSIZE = np.dtype("<f4").itemsize


def _paths(prefix: str | Path) -> tuple[Path, Path]:
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".manifest"), prefix.with_name(prefix.name + ".bin")


def write_snapshot(prefix: str | Path, blocks: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> None:
    manifest_path, bin_path = _paths(prefix)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    header = [MAGIC] + [f"{k}={v}" for k, v in (meta or {}).items()]
    lines = ["# " + " ".join(header)]
    offset = 0
    with bin_path.open("wb") as fh:
        for name, arr in blocks.items():
            if "\t" in name or "\n" in name:
                raise ManifestError(f"Block name {name!r} contains whitespace separators")
            data = np.ascontiguousarray(arr, dtype="<f4")
            shape = ",".join(str(s) for s in data.shape)
            lines.append(f"{name}\t{shape}\t{offset}")
            fh.write(data.tobytes())
            offset += data.nbytes
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    LOG.debug("snapshot %s: %d blocks, %d bytes", prefix, len(blocks), offset)


def read_snapshot(prefix: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    manifest_path, bin_path = _paths(prefix)
    for p in (manifest_path, bin_path):
        if not p.exists():
            raise MissingFileError(f"Snapshot file not found: {p}")
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# " + MAGIC):
        raise ManifestError(f"{manifest_path} is not a semsplat snapshot manifest")
    meta = {}
    for item in lines[0][2 + len(MAGIC):].split():
        key, _, value = item.partition("=")
        meta[key] = value
    payload = np.fromfile(bin_path, dtype="<f4")
    blocks: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        try:
            name, shape_txt, offset_txt = line.split("\t")
            shape = tuple(int(s) for s in shape_txt.split(",")) if shape_txt else ()
            offset = int(offset_txt)
        except ValueError as exc:
            raise ManifestError(f"Malformed manifest line: {line!r}") from exc
        if offset % ITEMSIZE:
            raise ManifestError(f"Block {name} offset {offset} is not aligned to float32")
        offset //= ITEMSIZE
        size = int(np.prod(shape)) if shape else 1
        if offset + size > payload.size:
            raise ManifestError(f"Block {name} overruns payload ({offset + size} > {payload.size})")
        blocks[name] = payload[offset : offset + size].reshape(shape).astype(np.float64)
    return blocks, meta
