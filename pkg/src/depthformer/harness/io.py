"""Depth rasters, scene archives, reports and point clouds on disk.

Depth rasters are 16-bit binary PGM (``P5``, maxval 65535, big-endian samples)
with the metres-per-unit scale declared in a ``# scale <value>`` header
comment; 0 means invalid.  Without a declared scale the KITTI convention of
1/256 m per unit applies.  Tiny fixtures may instead use plain text: a
``H W`` header line followed by row-major values.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..depthmap import DepthMap
from ..metrics import METRIC_NAMES, MetricReport

KITTI_SCALE = 1.0 / 256.0


def _pgm_tokens(blob: bytes):
    """Yield (token, end offset) from a PGM header, collecting ``#`` comments."""
    pos, comments, tokens = 0, [], []
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(blob):
            raise ValueError("malformed PGM header: file ends inside header")
        if blob[pos : pos + 1] == b"#":
            end = blob.find(b"\n", pos)
            end = len(blob) if end < 0 else end
            comments.append(blob[pos + 1 : end].decode(errors="replace").strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos].decode(errors="replace"))
    return tokens, comments, pos + 1


def read_pgm16(path) -> tuple[np.ndarray, float]:
    blob = Path(path).read_bytes()
    tokens, comments, offset = _pgm_tokens(blob)
    magic, w, h, maxval = tokens
    if magic != "P5":
        raise ValueError(f"{path}: malformed header, expected P5 PGM, got {magic!r}")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as err:
        raise ValueError(f"{path}: malformed header dimensions") from err
    if maxval != 65535:
        raise ValueError(f"{path}: malformed header, expected 16-bit maxval 65535, got {maxval}")
    scale = KITTI_SCALE
    for c in comments:
        parts = c.split()
        if len(parts) == 2 and parts[0] == "scale":
            scale = float(parts[1])
    data = blob[offset:]
    if len(data) != 2 * w * h:
        raise ValueError(f"{path}: malformed raster, expected {2 * w * h} data bytes, got {len(data)}")
    return np.frombuffer(data, dtype=">u2").reshape(h, w).astype(np.int64), scale


def write_pgm16(path, units: np.ndarray, scale: float) -> None:
    units = np.asarray(units)
    h, w = units.shape
    header = f"P5\n# scale {scale!r}\n{w} {h}\n65535\n".encode()
    Path(path).write_bytes(header + units.astype(">u2").tobytes())


def read_text_depth(path) -> np.ndarray:
    lines = Path(path).read_text().split("\n", 1)
    try:
        h, w = (int(x) for x in lines[0].split())
    except ValueError as err:
        raise ValueError(f"{path}: malformed header, expected 'H W'") from err
    values = np.array(lines[1].split() if len(lines) > 1 else [], dtype=np.float64)
    if values.size != h * w:
        raise ValueError(f"{path}: header says {h}x{w} but {values.size} values follow")
    return values.reshape(h, w)


def write_text_depth(path, depth: np.ndarray) -> None:
    h, w = depth.shape
    rows = [" ".join(repr(float(v)) for v in row) for row in depth]
    Path(path).write_text(f"{h} {w}\n" + "\n".join(rows) + "\n")


def read_depth(path) -> DepthMap:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(2)
    if magic == b"P5":
        units, scale = read_pgm16(path)
        return DepthMap(units * scale, units > 0)
    return DepthMap.sparse(read_text_depth(path))


def write_depth(path, depth: DepthMap, scale: float = KITTI_SCALE) -> None:
    """PGM when the suffix is ``.pgm``, plain text otherwise; invalid pixels become 0."""
    values = np.where(depth.valid, depth.array(), 0.0)
    if Path(path).suffix == ".pgm":
        write_pgm16(path, np.clip(np.rint(values / scale), 0, 65535), scale)
    else:
        write_text_depth(path, values)


def ingest_depth_pair(pred_path, gt_path) -> tuple[DepthMap, DepthMap]:
    pred, gt = read_depth(pred_path), read_depth(gt_path)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    return pred, gt


def save_scene(path, image: np.ndarray, depth: DepthMap) -> None:
    np.savez(path, image=image, depth=depth.array(), valid=depth.valid)


def load_scene(path) -> tuple[np.ndarray, DepthMap]:
    with np.load(path) as z:
        return z["image"], DepthMap(z["depth"], z["valid"])


def load_scene_dir(directory) -> list[tuple[np.ndarray, DepthMap]]:
    files = sorted(Path(directory).glob("*.npz"))
    if not files:
        raise FileNotFoundError(f"no .npz scenes in {directory}")
    return [load_scene(f) for f in files]


def format_report(rows: list[tuple[str, MetricReport]]) -> str:
    """Machine-readable ``bin metric value`` lines."""
    out = []
    for label, rep in rows:
        for name, value in rep.values().items():
            out.append(f"{label} {name} {value!r}")
        out.append(f"{label} n_pixels {rep.n_pixels}")
    return "\n".join(out) + "\n"


def parse_report(text: str) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for line in text.splitlines():
        if line.strip():
            label, name, value = line.split()
            out.setdefault(label, {})[name] = float(value)
    return out


def format_table(rows: list[tuple[str, MetricReport]]) -> str:
    cols = list(METRIC_NAMES)
    width = max([len("bin")] + [len(label) for label, _ in rows])
    head = f"{'bin':<{width}}  " + "  ".join(f"{c:>13}" for c in cols) + f"  {'n_pixels':>9}"
    lines = [head, "-" * len(head)]
    for label, rep in rows:
        vals = rep.values()
        lines.append(f"{label:<{width}}  " + "  ".join(f"{vals[c]:>13.6f}" for c in cols) + f"  {rep.n_pixels:>9d}")
    return "\n".join(lines) + "\n"


def write_report(stem, rows: list[tuple[str, MetricReport]]) -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (key/value) and ``<stem>.table.txt`` (aligned)."""
    stem = Path(stem)
    kv, table = stem.with_suffix(".txt"), stem.with_suffix(".table.txt")
    kv.write_text(format_report(rows))
    table.write_text(format_table(rows))
    return kv, table


def write_points(path, points: np.ndarray) -> None:
    Path(path).write_text("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in points.tolist()))


def read_points(path) -> np.ndarray:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)
