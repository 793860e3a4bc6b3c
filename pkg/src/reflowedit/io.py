"""Plain-text formats: attention-map CSVs, stack manifests, and run configs."""

from __future__ import annotations

import configparser
import json
import re
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError


def fmt(x: float) -> str:
    """17 significant digits: round-trips every float64 exactly."""
    return f"{float(x):.17g}"


def fmt_short(x: float) -> str:
    return f"{float(x):.6g}"


def write_map_csv(path, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"map must be 2-D, got shape {values.shape}")
    lines = [",".join(fmt(v) for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii", newline="\n")


def read_map_csv(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read an ``H x W`` map; malformed rows raise :class:`ShapeError` naming file and line."""
    path = Path(path)
    rows = []
    width = None if shape is None else shape[1]
    with path.open(encoding="ascii", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            if len(cells) != width:
                raise ShapeError(f"{path}:{lineno}: expected {width} values, found {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise ShapeError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ShapeError(f"{path}: empty map")
    if shape is not None and len(rows) != shape[0]:
        raise ShapeError(f"{path}:{len(rows)}: expected {shape[0]} rows, found {len(rows)}")
    return np.array(rows)


def read_stack(manifest_path) -> np.ndarray:
    """Load a ``(K, H, W)`` stack from a JSON manifest ``{height, width, count, files}``."""
    manifest_path = Path(manifest_path)
    try:
        meta = json.loads(manifest_path.read_text())
        h, w, count, files = int(meta["height"]), int(meta["width"]), int(meta["count"]), list(meta["files"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeError(f"{manifest_path}: malformed manifest ({exc})") from None
    if len(files) != count:
        raise ShapeError(f"{manifest_path}: count={count} but {len(files)} files listed")
    base = manifest_path.parent
    return np.stack([read_map_csv(base / f, (h, w)) for f in files])


def write_stack(directory, stack, prefix: str = "map") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stack = np.asarray(stack, dtype=np.float64)
    files = []
    for idx, m in enumerate(stack):
        name = f"{prefix}_{idx:02d}.csv"
        write_map_csv(directory / name, m)
        files.append(name)
    manifest = {"height": stack.shape[1], "width": stack.shape[2], "count": stack.shape[0], "files": files}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", newline="\n")
    return path


# --- config ----------------------------------------------------------------


def parse_floats(text: str, key: str = "value") -> list[float]:
    try:
        return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {text!r}") from None


def parse_ints(text: str, key: str = "value") -> list[int]:
    """Comma-separated integers; ``a-b`` expands to an inclusive range."""
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        span = re.fullmatch(r"(\d+)\s*-\s*(\d+)", tok)
        try:
            out.extend(range(int(span[1]), int(span[2]) + 1) if span else [int(tok)])
        except ValueError:
            raise ConfigError(f"{key}: bad integer list {text!r}") from None
    return out


def read_config(path) -> configparser.ConfigParser:
    """Flat ``key = value`` file with ``[section]`` headers."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
    return parser
