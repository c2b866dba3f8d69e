"""Artifact detection and gap filling for quantized weather-radar composites."""

from .grid import (
    DEFAULT_STATIONS,
    N_LABELS,
    REFLECTIVITY_DBZ,
    GridSpec,
    MaskRole,
    PixelMask,
    RadarFrame,
    RadarStation,
    RadarStationConfig,
    dbz_to_label,
    label_to_dbz,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_STATIONS",
    "N_LABELS",
    "REFLECTIVITY_DBZ",
    "GridSpec",
    "MaskRole",
    "PixelMask",
    "RadarFrame",
    "RadarStation",
    "RadarStationConfig",
    "dbz_to_label",
    "label_to_dbz",
]
