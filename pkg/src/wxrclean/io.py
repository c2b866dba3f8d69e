"""
Readers and writers for the on-disk formats.

``.wxr``  ``WXR1 <width> <height> <timestamp>\\n`` + width*height bytes,
          0-13 = label, 255 = invalid pixel.
``.msk``  ``MSK1 <width> <height> <role>\\n`` + width*height bytes of 0/1.
``.msg``  ``MSG1 <width> <height> <timestamp> 12\\n`` + 12 planes of
          little-endian float32, row-major.
``.sum``  ``SUM1 <width> <height> <frame_count>\\n`` + little-endian int64
          accumulator in hundredths of dBZ.
``.ssv``  one shadow sector per line:
          ``station theta_start theta_end r_start r_end``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .grid import N_LABELS, GridSpec, MaskRole, PixelMask, RadarFrame, RadarStationConfig

__all__ = [
    "FormatError",
    "MalformedHeaderError",
    "LabelRangeError",
    "TruncatedPayloadError",
    "read_frame",
    "write_frame",
    "encode_frame",
    "decode_frame",
    "read_mask",
    "write_mask",
    "read_msg",
    "write_msg",
    "read_stations",
    "write_stations",
    "read_sum",
    "write_sum",
    "read_sectors",
    "write_sectors",
    "read_patch_dir",
    "list_frames",
]

INVALID_BYTE = 255
MSG_CHANNELS = 12


class FormatError(ValueError):
    """Base class for file parse errors."""


class MalformedHeaderError(FormatError):
    pass


class LabelRangeError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


def _split_header(data: bytes, magic: str, nfields: int) -> tuple[list[str], bytes]:
    nl = data.find(b"\n")
    if nl < 0:
        raise MalformedHeaderError("missing header line")
    try:
        fields = data[:nl].decode("ascii").split(" ")
    except UnicodeDecodeError as exc:
        raise MalformedHeaderError("header is not ASCII") from exc
    if len(fields) != nfields + 1 or fields[0] != magic:
        raise MalformedHeaderError(f"expected '{magic}' header with {nfields} fields, got {fields!r}")
    return fields[1:], data[nl + 1 :]


def _int_field(text: str, name: str, minimum: int | None = None) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise MalformedHeaderError(f"{name} is not an integer: {text!r}") from exc
    if str(value) != text:
        raise MalformedHeaderError(f"{name} is not canonical: {text!r}")
    if minimum is not None and value < minimum:
        raise MalformedHeaderError(f"{name} must be >= {minimum}, got {value}")
    return value


def _check_length(payload: bytes, expected: int):
    if len(payload) < expected:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes after payload")


def encode_frame(frame: RadarFrame) -> bytes:
    body = np.where(frame.valid, frame.labels, INVALID_BYTE).astype(np.uint8)
    header = f"WXR1 {frame.spec.width} {frame.spec.height} {frame.timestamp}\n"
    return header.encode("ascii") + body.tobytes()


def decode_frame(data: bytes, cell_size: float = 1.0) -> RadarFrame:
    (w, h, ts), payload = _split_header(data, "WXR1", 3)
    width = _int_field(w, "width", 1)
    height = _int_field(h, "height", 1)
    timestamp = _int_field(ts, "timestamp")
    _check_length(payload, width * height)
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    bad = (raw >= N_LABELS) & (raw != INVALID_BYTE)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise LabelRangeError(f"byte value {raw[y, x]} at ({x}, {y}) is not a label")
    valid = raw != INVALID_BYTE
    labels = np.where(valid, raw, 0)
    return RadarFrame(GridSpec(width, height, cell_size), labels, valid, timestamp)


def read_frame(path, cell_size: float = 1.0) -> RadarFrame:
    return decode_frame(Path(path).read_bytes(), cell_size)


def write_frame(frame: RadarFrame, path) -> None:
    Path(path).write_bytes(encode_frame(frame))


def write_mask(mask: PixelMask, path) -> None:
    header = f"MSK1 {mask.spec.width} {mask.spec.height} {mask.role.value}\n"
    Path(path).write_bytes(header.encode("ascii") + mask.bits.astype(np.uint8).tobytes())


def read_mask(path, cell_size: float = 1.0) -> PixelMask:
    (w, h, role), payload = _split_header(Path(path).read_bytes(), "MSK1", 3)
    width = _int_field(w, "width", 1)
    height = _int_field(h, "height", 1)
    try:
        role = MaskRole(role)
    except ValueError as exc:
        raise MalformedHeaderError(f"unknown mask role {role!r}") from exc
    _check_length(payload, width * height)
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    if np.any(raw > 1):
        raise FormatError("mask payload must contain only 0/1 bytes")
    return PixelMask(GridSpec(width, height, cell_size), raw.astype(bool), role)


def write_msg(msg, path) -> None:
    spec = msg.spec
    header = f"MSG1 {spec.width} {spec.height} {msg.timestamp} {MSG_CHANNELS}\n"
    body = np.ascontiguousarray(msg.channels, dtype="<f4").tobytes()
    Path(path).write_bytes(header.encode("ascii") + body)


def read_msg(path, cell_size: float = 1.0):
    from .correction import MsgFrame

    (w, h, ts, nch), payload = _split_header(Path(path).read_bytes(), "MSG1", 4)
    width = _int_field(w, "width", 1)
    height = _int_field(h, "height", 1)
    timestamp = _int_field(ts, "timestamp")
    if _int_field(nch, "channels") != MSG_CHANNELS:
        raise MalformedHeaderError(f"expected {MSG_CHANNELS} channels, got {nch}")
    _check_length(payload, MSG_CHANNELS * width * height * 4)
    channels = np.frombuffer(payload, dtype="<f4").reshape(MSG_CHANNELS, height, width)
    return MsgFrame(GridSpec(width, height, cell_size), channels.astype(np.float32), timestamp)


def write_sum(sum_image, path) -> None:
    spec = sum_image.spec
    header = f"SUM1 {spec.width} {spec.height} {sum_image.frame_count}\n"
    body = np.ascontiguousarray(sum_image.centi_dbz, dtype="<i8").tobytes()
    Path(path).write_bytes(header.encode("ascii") + body)


def read_sum(path, cell_size: float = 1.0):
    from .geometry import SumImage

    (w, h, n), payload = _split_header(Path(path).read_bytes(), "SUM1", 3)
    width = _int_field(w, "width", 1)
    height = _int_field(h, "height", 1)
    count = _int_field(n, "frame_count", 1)
    _check_length(payload, width * height * 8)
    centi = np.frombuffer(payload, dtype="<i8").reshape(height, width).astype(np.int64)
    return SumImage(GridSpec(width, height, cell_size), centi, count)


def write_sectors(sectors, path) -> None:
    lines = [
        f"{s.station} {s.theta_start:.6g} {s.theta_end:.6g} {s.r_start:.6g} {s.r_end:.6g}"
        for s in sectors
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="ascii")


def read_sectors(path):
    from .geometry import ShadowSector, ShadowSectorSet

    sectors = []
    for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            sectors.append(ShadowSector(int(parts[0]), *map(float, parts[1:])))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from exc
    return ShadowSectorSet(tuple(sectors))


def read_stations(path) -> RadarStationConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return RadarStationConfig.from_dict(data)


def write_stations(stations: RadarStationConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stations.to_dict(), fh, indent=2)
        fh.write("\n")


def list_frames(directory) -> list[Path]:
    """``.wxr`` files in a directory, sorted by name."""
    return sorted(p for p in Path(directory).iterdir() if p.suffix == ".wxr" and p.is_file())


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path


def read_patch_dir(directory, cell_size: float = 1.0) -> list[tuple[RadarFrame, str]]:
    """Patches listed in ``index.txt`` as ``<filename> <artifact|precipitation>``."""
    directory = Path(directory)
    index = directory / "index.txt"
    if not index.is_file():
        raise FormatError(f"no index.txt in {directory}")
    patches = []
    for lineno, line in enumerate(index.read_text(encoding="ascii").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("artifact", "precipitation"):
            raise FormatError(f"index.txt line {lineno}: expected '<filename> <artifact|precipitation>'")
        patches.append((read_frame(directory / parts[0], cell_size), parts[1]))
    return patches
