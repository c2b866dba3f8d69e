"""
Texture-based artifact candidates.

Frames are mapped to dBZ, filtered with a bank of real Gabor kernels, and
rectified. The local texture at a pixel is summarised by the covariance of
the per-pixel feature vectors over a square window around it; descriptors
are compared with the Foerstner metric

    d(A, B) = sqrt(sum_i ln(lambda_i)^2),

with ``lambda_i`` the generalized eigenvalues of the pencil ``(A, B)``, and
classified against a labelled library by nearest neighbour.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.linalg
from scipy import ndimage

from .grid import GridSpec, MaskRole, PixelMask, RadarFrame

logger = logging.getLogger(__name__)

__all__ = [
    "GaborBankConfig",
    "TextureClass",
    "FeatureStack",
    "CovarianceDescriptor",
    "LibraryEntry",
    "TextureLibrary",
    "NumericError",
    "build_gabor_bank",
    "compute_feature_stack",
    "region_covariance",
    "covariance_at_sites",
    "covariance_distance",
    "nn_classify",
    "classify_descriptors",
    "nearest_entries",
    "anchor_lower_bounds",
    "loocv",
    "segment_texture",
]

DEFAULT_WINDOW = 39
DEFAULT_EPS = 1e-6


class NumericError(ArithmeticError):
    """Raised when a covariance pencil is not positive definite."""


@dataclass(frozen=True)
class GaborBankConfig:
    orientations: int = 6
    frequencies: tuple[float, ...] = (0.10, 0.20, 0.35)
    kernel_size: int = 21
    sigma: float | None = None  # None: 0.56 / frequency per kernel

    def __post_init__(self):
        object.__setattr__(self, "frequencies", tuple(float(f) for f in self.frequencies))
        if self.orientations < 1:
            raise ValueError("need at least one orientation")
        if not self.frequencies:
            raise ValueError("need at least one frequency")
        if any(not 0 < f <= 0.5 for f in self.frequencies):
            raise ValueError(f"frequencies must lie in (0, 0.5], got {self.frequencies}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def n_kernels(self) -> int:
        return self.orientations * len(self.frequencies)

    def sigma_for(self, frequency: float) -> float:
        return self.sigma if self.sigma is not None else 0.56 / frequency

    def to_dict(self) -> dict:
        return {
            "orientations": self.orientations,
            "frequencies": list(self.frequencies),
            "kernel_size": self.kernel_size,
            "sigma": self.sigma,
        }


def gabor_kernel(frequency: float, theta: float, sigma: float, size: int) -> np.ndarray:
    """Even (cosine-phase) Gabor kernel with its mean removed."""
    half = size // 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    xr = xx * np.cos(theta) + yy * np.sin(theta)
    g = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2)) * np.cos(2.0 * np.pi * frequency * xr)
    return g - g.mean()


@lru_cache(maxsize=8)
def _bank(config: GaborBankConfig) -> tuple[np.ndarray, ...]:
    kernels = []
    for f in config.frequencies:
        for k in range(config.orientations):
            theta = k * np.pi / config.orientations
            kern = gabor_kernel(f, theta, config.sigma_for(f), config.kernel_size)
            kern.setflags(write=False)
            kernels.append(kern)
    return tuple(kernels)


def build_gabor_bank(config: GaborBankConfig = GaborBankConfig()) -> list[np.ndarray]:
    """One zero-mean kernel per (frequency, orientation), frequency-major.

    Orientations are ``k * pi / orientations`` for ``k = 0 .. orientations-1``.
    """
    return list(_bank(config))


@dataclass(frozen=True, eq=False)
class FeatureStack:
    spec: GridSpec
    planes: np.ndarray  # (n_features, height, width), float64

    def __post_init__(self):
        if self.planes.ndim != 3 or self.planes.shape[1:] != self.spec.shape:
            raise ValueError(f"planes must be (n, {self.spec.height}, {self.spec.width})")

    @property
    def n_features(self) -> int:
        return self.planes.shape[0]


def _convolve_stack(image: np.ndarray, kernels: Sequence[np.ndarray]) -> np.ndarray:
    h, w = image.shape
    kh, kw = kernels[0].shape
    fh = scipy.fft.next_fast_len(h + kh - 1, real=True)
    fw = scipy.fft.next_fast_len(w + kw - 1, real=True)
    spectrum = scipy.fft.rfft2(image, s=(fh, fw))
    kspec = scipy.fft.rfft2(np.stack(kernels), s=(fh, fw), axes=(-2, -1))
    full = scipy.fft.irfft2(kspec * spectrum, s=(fh, fw), axes=(-2, -1))
    oy, ox = kh // 2, kw // 2
    return full[:, oy : oy + h, ox : ox + w]


def compute_feature_stack(frame: RadarFrame, bank: Sequence[np.ndarray] | None = None) -> FeatureStack:
    """Rectified Gabor responses of the frame's dBZ image (zero padded)."""
    if bank is None:
        bank = build_gabor_bank()
    image = np.where(frame.valid, frame.dbz(), 0.0)
    if not image.any():
        planes = np.zeros((len(bank),) + frame.spec.shape)
    else:
        planes = np.abs(_convolve_stack(image, bank))
    return FeatureStack(frame.spec, planes)


@dataclass(frozen=True, eq=False)
class CovarianceDescriptor:
    matrix: np.ndarray
    window: int = DEFAULT_WINDOW
    center: tuple[int, int] = (0, 0)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _window_bounds(center, window, spec: GridSpec):
    x, y = int(center[0]), int(center[1])
    half = window // 2
    return max(0, y - half), min(spec.height, y + half + 1), max(0, x - half), min(spec.width, x + half + 1)


def _check_window(window: int, spec: GridSpec):
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    if window > min(spec.width, spec.height):
        raise ValueError(f"window {window} larger than grid {spec.width}x{spec.height}")


def region_covariance(stack: FeatureStack, center, window: int = DEFAULT_WINDOW,
                      eps: float = DEFAULT_EPS) -> CovarianceDescriptor:
    """Sample covariance (divisor N-1) over a border-clipped window, plus eps*I."""
    _check_window(window, stack.spec)
    y0, y1, x0, x1 = _window_bounds(center, window, stack.spec)
    feats = stack.planes[:, y0:y1, x0:x1].reshape(stack.n_features, -1)
    n = feats.shape[1]
    dim = stack.n_features
    if n < 2:
        cov = np.zeros((dim, dim))
    else:
        # shifted-data formula: exact zeros for constant windows
        d = feats - feats[:, :1]
        s = d.sum(axis=1)
        cov = (d @ d.T - np.outer(s, s) / n) / (n - 1)
        cov = 0.5 * (cov + cov.T)
    return CovarianceDescriptor(cov + eps * np.eye(dim), window, (int(center[0]), int(center[1])))


def covariance_at_sites(stack: FeatureStack, ys: np.ndarray, xs: np.ndarray,
                        window: int = DEFAULT_WINDOW, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Descriptors at many sites at once via box-filtered moment images.

    Returns an ``(n_sites, n_features, n_features)`` array equal (to rounding)
    to calling :func:`region_covariance` at each site.
    """
    _check_window(window, stack.spec)
    ys = np.asarray(ys, dtype=np.intp)
    xs = np.asarray(xs, dtype=np.intp)
    nf = stack.n_features
    out = np.empty((ys.size, nf, nf))
    if ys.size == 0:
        return out
    half = window // 2
    # crop to the sites' footprint to keep the box filters small
    r0 = max(0, ys.min() - half)
    r1 = min(stack.spec.height, ys.max() + half + 1)
    c0 = max(0, xs.min() - half)
    c1 = min(stack.spec.width, xs.max() + half + 1)
    planes = stack.planes[:, r0:r1, c0:c1]
    # global centering keeps the moment sums well conditioned
    centred = planes - planes.reshape(nf, -1).mean(axis=1)[:, None, None]
    sy, sx = ys - r0, xs - c0
    area = float(window * window)

    def box(img):
        return ndimage.uniform_filter(img, size=window, mode="constant", cval=0.0)[sy, sx] * area

    ny = np.minimum(ys + half + 1, stack.spec.height) - np.maximum(ys - half, 0)
    nx = np.minimum(xs + half + 1, stack.spec.width) - np.maximum(xs - half, 0)
    n = (ny * nx).astype(np.float64)
    first = np.stack([box(centred[i]) for i in range(nf)], axis=1)
    for i in range(nf):
        for j in range(i, nf):
            s = box(centred[i] * centred[j])
            c = (s - first[:, i] * first[:, j] / n) / np.maximum(n - 1, 1)
            out[:, i, j] = c
            out[:, j, i] = c
    out[n < 2] = 0.0
    out += eps * np.eye(nf)
    return out


def covariance_distance(a, b) -> float:
    """Foerstner distance between two SPD matrices (or descriptors)."""
    a = a.matrix if isinstance(a, CovarianceDescriptor) else np.asarray(a, dtype=np.float64)
    b = b.matrix if isinstance(b, CovarianceDescriptor) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"descriptor shapes differ or are not square: {a.shape} vs {b.shape}")
    try:
        lam = scipy.linalg.eigh(a, b, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError("covariance pencil is singular") from exc
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise NumericError("covariance pencil is not positive definite")
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))


def _whitener(b: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise NumericError("library descriptor is not positive definite") from exc
    return scipy.linalg.solve_triangular(chol, np.eye(b.shape[0]), lower=True)


def _distances_to(matrices: np.ndarray, whitener: np.ndarray) -> np.ndarray:
    # whitener may be one matrix or one per input matrix
    m = whitener @ matrices @ np.swapaxes(whitener, -1, -2)
    lam = np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))
    # rounding can push eigenvalues of near-singular windows through zero
    lam = np.maximum(lam, np.finfo(np.float64).tiny)
    return np.sqrt(np.sum(np.log(lam) ** 2, axis=-1))


class TextureClass(str, enum.Enum):
    ARTIFACT = "artifact"
    PRECIPITATION = "precipitation"


@dataclass(frozen=True, eq=False)
class LibraryEntry:
    descriptor: CovarianceDescriptor
    cls: TextureClass
    source_id: int


@dataclass(eq=False)
class TextureLibrary:
    """Labelled descriptors plus the feature settings they were built with."""

    entries: list[LibraryEntry]
    bank_config: GaborBankConfig = field(default_factory=GaborBankConfig)
    window: int = DEFAULT_WINDOW
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e.source_id)
        ids = [e.source_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("library source ids must be unique")
        self._cache = {}

    def __len__(self):
        return len(self.entries)

    @property
    def matrices(self) -> np.ndarray:
        if "matrices" not in self._cache:
            self._cache["matrices"] = np.stack([e.descriptor.matrix for e in self.entries])
        return self._cache["matrices"]

    @property
    def is_artifact(self) -> np.ndarray:
        return np.array([e.cls == TextureClass.ARTIFACT for e in self.entries])

    @property
    def whiteners(self) -> np.ndarray:
        if "whiteners" not in self._cache:
            self._cache["whiteners"] = np.stack([_whitener(m) for m in self.matrices])
        return self._cache["whiteners"]

    @property
    def pairwise(self) -> np.ndarray:
        if "pairwise" not in self._cache:
            mats, w = self.matrices, self.whiteners
            d = np.stack([_distances_to(mats, w[j]) for j in range(len(self))], axis=1)
            d = 0.5 * (d + d.T)
            np.fill_diagonal(d, 0.0)
            self._cache["pairwise"] = d
        return self._cache["pairwise"]

    def check_trainable(self):
        if not self.entries:
            raise RuntimeError("texture library is empty")

    def has_both_classes(self) -> bool:
        flags = self.is_artifact
        return bool(flags.any() and (~flags).any())

    def without(self, index: int) -> "TextureLibrary":
        return TextureLibrary(
            self.entries[:index] + self.entries[index + 1 :], self.bank_config, self.window, self.eps
        )

    # persistence: a numpy archive under whatever name the caller picks
    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(
                fh,
                matrices=self.matrices,
                artifact=self.is_artifact,
                source_ids=np.array([e.source_id for e in self.entries], dtype=np.int64),
                centers=np.array([e.descriptor.center for e in self.entries], dtype=np.int64).reshape(-1, 2),
                window=self.window,
                eps=self.eps,
                orientations=self.bank_config.orientations,
                frequencies=np.array(self.bank_config.frequencies),
                kernel_size=self.bank_config.kernel_size,
                sigma=np.nan if self.bank_config.sigma is None else self.bank_config.sigma,
            )

    @classmethod
    def load(cls, path) -> "TextureLibrary":
        with np.load(Path(path), allow_pickle=False) as z:
            sigma = float(z["sigma"])
            bank = GaborBankConfig(
                int(z["orientations"]), tuple(z["frequencies"].tolist()), int(z["kernel_size"]),
                None if np.isnan(sigma) else sigma,
            )
            window = int(z["window"])
            entries = [
                LibraryEntry(
                    CovarianceDescriptor(np.array(m), window, (int(c[0]), int(c[1]))),
                    TextureClass.ARTIFACT if art else TextureClass.PRECIPITATION,
                    int(sid),
                )
                for m, art, sid, c in zip(z["matrices"], z["artifact"], z["source_ids"], z["centers"])
            ]
            return cls(entries, bank, window, float(z["eps"]))

    @classmethod
    def from_patches(cls, patches, bank_config: GaborBankConfig = GaborBankConfig(),
                     window: int = DEFAULT_WINDOW, eps: float = DEFAULT_EPS) -> "TextureLibrary":
        """Library from ``(patch_frame, TextureClass)`` pairs, one descriptor per patch."""
        bank = build_gabor_bank(bank_config)
        entries = []
        for sid, (patch, klass) in enumerate(patches):
            stack = compute_feature_stack(patch, bank)
            center = (patch.spec.width // 2, patch.spec.height // 2)
            desc = region_covariance(stack, center, window, eps)
            entries.append(LibraryEntry(desc, TextureClass(klass), sid))
        return cls(entries, bank_config, window, eps)


def nn_classify(query, library: TextureLibrary) -> TextureClass:
    """Class of the nearest library entry; ties go to the lowest source id."""
    if not library.entries:
        raise RuntimeError("cannot classify against an empty texture library")
    q = query.matrix if isinstance(query, CovarianceDescriptor) else np.asarray(query)
    best, best_entry = np.inf, None
    for entry in library.entries:
        d = covariance_distance(q, entry.descriptor)
        if d < best:
            best, best_entry = d, entry
    return best_entry.cls


def nearest_entries(matrices: np.ndarray, library: TextureLibrary, tol: float = 1e-7,
                    lower: np.ndarray | None = None) -> np.ndarray:
    """Index of the nearest library entry for each matrix.

    Exact nearest-neighbour search that skips entries whose triangle-inequality
    lower bound already exceeds the best distance found so far. Library
    entries are pivots; their pairwise distances are precomputed once.
    ``lower`` optionally supplies initial lower bounds, shape
    ``(n_matrices, n_library)``, with all-NaN rows for matrices that have
    none. Ties go to the lowest library index.
    """
    library.check_trainable()
    matrices = np.asarray(matrices, dtype=np.float64)
    n_sites, n_lib = matrices.shape[0], len(library)
    if n_sites == 0:
        return np.zeros(0, dtype=np.intp)
    if n_lib == 1:
        return np.zeros(n_sites, dtype=np.intp)
    pair = library.pairwise
    white = library.whiteners
    done = np.zeros((n_sites, n_lib), dtype=bool)
    best_d = np.full(n_sites, np.inf)
    best_i = np.full(n_sites, n_lib, dtype=np.intp)
    active = np.arange(n_sites)
    # first pivot: library medoid, or the entry with the smallest given bound
    cand = np.full(n_sites, int(np.argmin(pair.sum(axis=1))), dtype=np.intp)
    if lower is None:
        lower = np.zeros((n_sites, n_lib))
    else:
        lower = np.array(lower, dtype=np.float64)
        known = ~np.isnan(lower).any(axis=1)
        lower[~known] = 0.0
        cand[known] = np.argmin(lower[known], axis=1)
    while active.size:
        for j in np.unique(cand):
            sel = active[cand == j]
            d = _distances_to(matrices[sel], white[j])
            done[sel, j] = True
            better = (d < best_d[sel]) | ((d == best_d[sel]) & (j < best_i[sel]))
            best_d[sel[better]] = d[better]
            best_i[sel[better]] = j
            lower[sel] = np.maximum(lower[sel], np.abs(d[:, None] - pair[j][None, :]))
            lower[sel, j] = d
        sub = lower[active]
        open_ = ~done[active] & (sub <= (best_d[active] * (1 + tol) + tol)[:, None])
        keep = open_.any(axis=1)
        active = active[keep]
        if not active.size:
            break
        masked = np.where(open_[keep], sub[keep], np.inf)
        cand = np.argmin(masked, axis=1)
    return best_i


def anchor_lower_bounds(matrices: np.ndarray, ys: np.ndarray, xs: np.ndarray,
                        library: TextureLibrary, block: int = 8, min_sites: int | None = None) -> np.ndarray:
    """Lower bounds on site-to-library distances via one anchor site per block.

    Overlapping windows make neighbouring descriptors close, so the full
    distance row of an anchor bounds every site of its block through the
    triangle inequality: ``d(q, e) >= |d(a, e) - d(q, a)|``. Blocks with
    fewer than ``min_sites`` sites (default: a tenth of the library size)
    do not pay for an anchor row; their rows are NaN.
    """
    n_lib = len(library)
    if min_sites is None:
        min_sites = max(2, n_lib // 10)
    ys, xs = np.asarray(ys), np.asarray(xs)
    lower = np.full((ys.size, n_lib), np.nan)
    if ys.size == 0:
        return lower
    key = (ys // block) * (int(xs.max()) // block + 1) + xs // block
    _, first, inverse, counts = np.unique(key, return_index=True, return_inverse=True, return_counts=True)
    dense = counts >= min_sites
    if not dense.any():
        return lower
    anchors = matrices[first[dense]]
    anchor_d = np.empty((anchors.shape[0], n_lib))
    for j in range(n_lib):
        anchor_d[:, j] = _distances_to(anchors, library.whiteners[j])
    slot = np.cumsum(dense) - 1  # block -> row in anchors
    sel = dense[inverse]
    site_anchor = slot[inverse[sel]]
    white = np.stack([_whitener(a) for a in anchors])
    to_anchor = _distances_to(matrices[sel], white[site_anchor])
    lower[sel] = np.abs(anchor_d[site_anchor] - to_anchor[:, None])
    return lower


def classify_descriptors(matrices: np.ndarray, library: TextureLibrary,
                         lower: np.ndarray | None = None) -> np.ndarray:
    """Boolean array: True where the nearest library entry is an artifact."""
    idx = nearest_entries(matrices, library, lower=lower)
    return library.is_artifact[idx]


def loocv(library: TextureLibrary) -> float:
    """Leave-one-out nearest-neighbour accuracy over the library."""
    n = len(library)
    if n < 2:
        raise ValueError("leave-one-out needs at least two entries")
    d = library.pairwise.copy()
    np.fill_diagonal(d, np.inf)
    # argmin picks the lowest index, i.e. lowest source id, on ties
    nearest = np.argmin(d, axis=1)
    flags = library.is_artifact
    return float(np.mean(flags[nearest] == flags))


def _sample_sites(prec: np.ndarray, stride: int) -> np.ndarray:
    sites = np.zeros_like(prec)
    sites[::stride, ::stride] = prec[::stride, ::stride]
    if stride > 1 and prec.any():
        # precipitation out of reach of the lattice gets its own evaluation
        dist = ndimage.distance_transform_cdt(~sites, metric="chessboard") if sites.any() else None
        if dist is None:
            sites = prec.copy()
        else:
            sites |= prec & (dist > stride)
    return sites


def segment_texture(frame: RadarFrame, library: TextureLibrary, stride: int = 2,
                    stack: FeatureStack | None = None) -> PixelMask:
    """Per-pixel artifact candidates from nearest-neighbour texture classification.

    Descriptors are evaluated on every ``stride``-th precipitation pixel in
    both directions; the remaining precipitation pixels take the class of the
    nearest evaluated site. Background (label 0) is never a candidate.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    library.check_trainable()
    prec = frame.precipitation & frame.valid
    out = np.zeros(frame.spec.shape, dtype=bool)
    if not prec.any():
        return PixelMask(frame.spec, out, MaskRole.ARTIFACT_CANDIDATE)
    if stack is None:
        stack = compute_feature_stack(frame, build_gabor_bank(library.bank_config))
    sites = _sample_sites(prec, stride)
    ys, xs = np.nonzero(sites)
    mats = covariance_at_sites(stack, ys, xs, library.window, library.eps)
    site_cls = np.zeros(frame.spec.shape, dtype=bool)
    lower = anchor_lower_bounds(mats, ys, xs, library) if len(library) > 1 else None
    site_cls[ys, xs] = classify_descriptors(mats, library, lower)
    if stride == 1:
        out = site_cls & prec
    else:
        _, (iy, ix) = ndimage.distance_transform_edt(~sites, return_indices=True)
        out = site_cls[iy, ix] & prec
    return PixelMask(frame.spec, out, MaskRole.ARTIFACT_CANDIDATE)
