"""Grayscale image I/O and patch plumbing.

Pixels live in [0, 1] as float64. Binary PGM (P5, maxval 255) is the
native format; 8-bit grayscale PNG can be read if Pillow is installed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ImageError(Exception):
    """Base class for image I/O failures."""


class MalformedImageError(ImageError):
    """File is truncated or its header cannot be parsed."""


class UnsupportedFormatError(ImageError):
    """File is a recognizable raster but not a format we read."""


@dataclass(frozen=True)
class ImageGray:
    """A 2-D grayscale image with pixel values in [0, 1].

    ``pixels`` is row-major float64 of shape (height, width). The original
    8-bit depth is implicit: round-tripping through :func:`save_image` and
    :func:`load_image` quantizes to 256 levels.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise parameters on the [0, 1] pixel scale."""

    mean: float = 0.0
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")


@dataclass(frozen=True)
class PatchMatrix:
    """Columns of vectorized image patches (or generic training signals).

    ``data`` has shape (dim_m, count_q). ``patch_side`` and ``source_dims``
    are set when the matrix came out of :func:`extract_patches` and are
    required by :func:`assemble_image`; synthetic signal matrices leave
    them as None.
    """

    data: np.ndarray
    patch_side: int | None = None
    source_dims: tuple[int, int] | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {d.shape}")
        if self.patch_side is not None and d.shape[0] != self.patch_side ** 2:
            raise ValueError(
                f"dim_m={d.shape[0]} inconsistent with patch_side={self.patch_side}"
            )
        object.__setattr__(self, "data", d)

    @property
    def dim_m(self) -> int:
        return self.data.shape[0]

    @property
    def count_q(self) -> int:
        return self.data.shape[1]


# magic numbers of netpbm flavors we recognize but do not read
_NETPBM_OTHER = (b"P1", b"P2", b"P3", b"P4", b"P6")
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _parse_pgm(blob: bytes) -> np.ndarray:
    """Parse a binary PGM (P5) payload into a uint8 (H, W) array."""
    pos = 2  # past magic
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comments between header tokens
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            nl = blob.find(b"\n", pos)
            if nl < 0:
                raise MalformedImageError("unterminated comment in PGM header")
            pos = nl + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token:
            raise MalformedImageError("truncated PGM header")
        try:
            fields.append(int(token))
        except ValueError:
            raise MalformedImageError(f"non-numeric PGM header token {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedImageError(f"invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"only 8-bit PGM (maxval 255) is supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = blob[pos : pos + width * height]
    if len(raster) < width * height:
        raise MalformedImageError("PGM raster shorter than width*height")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def _load_png(path: Path) -> np.ndarray:
    try:
        from PIL import Image
    except ImportError:
        raise UnsupportedFormatError(
            "PNG reading requires the optional 'pillow' dependency"
        ) from None
    with Image.open(path) as im:
        if im.mode != "L":
            raise UnsupportedFormatError(
                f"only 8-bit grayscale PNG is supported, got mode {im.mode!r}"
            )
        return np.asarray(im, dtype=np.uint8)


def load_image(path) -> ImageGray:
    """Read a grayscale raster (binary PGM, or 8-bit grayscale PNG).

    8-bit samples map to sample/255. Raises FileNotFoundError for a missing
    file, MalformedImageError for an unparseable header or truncated data,
    and UnsupportedFormatError for rasters we do not read.
    """
    path = Path(path)
    blob = path.read_bytes()  # propagates FileNotFoundError
    if len(blob) < 2:
        raise MalformedImageError(f"{path}: too short to contain an image header")
    if blob[:2] == b"P5":
        samples = _parse_pgm(blob)
    elif blob[:2] in _NETPBM_OTHER:
        raise UnsupportedFormatError(f"{path}: netpbm flavor {blob[:2].decode()} not supported")
    elif blob[: len(_PNG_MAGIC)] == _PNG_MAGIC:
        samples = _load_png(path)
    else:
        raise UnsupportedFormatError(f"{path}: unrecognized image format")
    return ImageGray(samples.astype(np.float64) / 255.0)


def save_image(img: ImageGray, path) -> None:
    """Write ``img`` as binary PGM (P5, maxval 255), rounding half up."""
    # floor(x + 0.5) so that 127.5 -> 128 on every platform
    samples = np.floor(np.clip(img.pixels, 0.0, 1.0) * 255.0 + 0.5)
    samples = np.clip(samples, 0, 255).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + samples.tobytes())


def downscale(img: ImageGray, alpha: int) -> ImageGray:
    """Block-mean decimation by an integer factor.

    Each output pixel is the mean of one alpha x alpha block; trailing rows
    and columns that do not fill a block are dropped.
    """
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if alpha == 1:
        return img
    h = img.height // alpha
    w = img.width // alpha
    if h < 1 or w < 1:
        raise ValueError(f"alpha={alpha} larger than image {img.height}x{img.width}")
    cropped = img.pixels[: h * alpha, : w * alpha]
    blocks = cropped.reshape(h, alpha, w, alpha)
    return ImageGray(blocks.mean(axis=(1, 3)))


def add_awgn(img: ImageGray, noise: NoiseSpec) -> ImageGray:
    """Add i.i.d. Gaussian noise per pixel and clip to [0, 1].

    Deterministic for a fixed (img, seed) pair: draws come from a PCG64
    generator seeded with ``noise.seed``.
    """
    rng = np.random.default_rng(noise.seed)
    draws = rng.normal(noise.mean, math.sqrt(noise.variance), size=img.pixels.shape)
    return ImageGray(np.clip(img.pixels + draws, 0.0, 1.0))


def extract_patches(img: ImageGray, patch_side: int) -> PatchMatrix:
    """Vectorize every overlapping patch_side x patch_side patch.

    Column q corresponds to the q-th patch top-left corner in row-major
    scan order; within a column the patch itself is row-major. The result
    has Q = (H - PS + 1) * (W - PS + 1) columns.
    """
    ps = int(patch_side)
    if ps < 1:
        raise ValueError(f"patch_side must be >= 1, got {patch_side}")
    if ps > min(img.height, img.width):
        raise ValueError(
            f"patch_side={ps} exceeds image dimensions {img.height}x{img.width}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(img.pixels, (ps, ps))
    n_rows, n_cols = windows.shape[:2]
    data = windows.reshape(n_rows * n_cols, ps * ps).T
    return PatchMatrix(np.ascontiguousarray(data), patch_side=ps,
                       source_dims=(img.height, img.width))


def assemble_image(patches: PatchMatrix) -> ImageGray:
    """Invert :func:`extract_patches` by averaging overlapping patch pixels.

    Every output pixel is the plain arithmetic mean over all patches that
    cover it, clipped to [0, 1] afterwards.
    """
    if patches.patch_side is None or patches.source_dims is None:
        raise ValueError("patches lack patch_side/source_dims metadata")
    ps = patches.patch_side
    h, w = patches.source_dims
    n_rows = h - ps + 1
    n_cols = w - ps + 1
    expected = n_rows * n_cols
    if patches.count_q != expected:
        raise ValueError(
            f"count_q={patches.count_q} does not match the full overlapping grid "
            f"({n_rows}x{n_cols}={expected}) for source {h}x{w}, PS={ps}"
        )
    acc = np.zeros((h, w))
    cover = np.zeros((h, w))
    for di in range(ps):
        for dj in range(ps):
            row = patches.data[di * ps + dj].reshape(n_rows, n_cols)
            acc[di : di + n_rows, dj : dj + n_cols] += row
            cover[di : di + n_rows, dj : dj + n_cols] += 1.0
    return ImageGray(np.clip(acc / cover, 0.0, 1.0))


def split_columns(patches: PatchMatrix, parts: int) -> list[PatchMatrix]:
    """Split into ``parts`` contiguous column blocks of near-equal size.

    The first (Q mod parts) blocks receive one extra column, so
    concatenating the blocks in order restores the input exactly.
    """
    if parts < 1:
        raise ValueError(f"parts must be >= 1, got {parts}")
    if parts > patches.count_q:
        raise ValueError(f"cannot split {patches.count_q} columns into {parts} parts")
    pieces = np.array_split(patches.data, parts, axis=1)
    return [
        PatchMatrix(np.ascontiguousarray(p), patch_side=patches.patch_side,
                    source_dims=patches.source_dims)
        for p in pieces
    ]
