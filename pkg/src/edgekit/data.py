"""Image and ground-truth I/O plus a deterministic synthetic edge dataset.

Images are PNG or binary PPM/PGM; edge maps are written as 16-bit
big-endian PGM so probabilities survive a round-trip to within one
quantization step (1/65535). The synthetic generator rasterizes a few
anti-aliased shapes with distinct mean colors and emits exact one-pixel
region boundaries as ground truth, making full-pipeline evaluation
possible without any external dataset.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

__all__ = [
    "Sample",
    "consensus_gt",
    "load_image",
    "load_manifest",
    "load_samples",
    "read_edge_map",
    "synth_dataset",
    "write_dataset",
    "write_edge_map",
    "write_manifest",
]


@dataclass
class Sample:
    """One image with at least one annotation map of the same size."""

    image: np.ndarray  # float32 [3, H, W] in [0, 1]
    gt_maps: list[np.ndarray] = field(default_factory=list)  # each [H, W] in [0, 1]
    id: str = ""

    def __post_init__(self):
        h, w = self.image.shape[1:]
        for m in self.gt_maps:
            if m.shape != (h, w):
                raise ValueError(f"sample {self.id}: gt shape {m.shape} does not match image {h}x{w}")


# ---------------------------------------------------------------------------
# netpbm I/O (binary P5 / P6, maxval up to 65535)

def _read_pnm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] not in (b"P5", b"P6"):
        raise ValueError(f"unsupported image format in {path!r} (expected binary PGM/PPM)")
    # header: magic, width, height, maxval, separated by whitespace/comments
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated header in {path!r}")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    channels = 3 if raw[:2] == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(raw) - pos < count * dtype.itemsize:
        raise ValueError(f"truncated pixel data in {path!r}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    arr = data.astype(np.float32).reshape(height, width, channels) / float(maxval)
    return arr


def _write_pnm(path: str, arr: np.ndarray, maxval: int) -> None:
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    magic = b"P6" if c == 3 else b"P5"
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    quant = np.round(np.clip(arr, 0.0, 1.0) * maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(quant.tobytes())


def load_image(path: str) -> np.ndarray:
    """Load an 8-bit PNG or binary PPM/PGM as float32 [3, H, W] in [0, 1].

    Grayscale inputs are replicated across the three channels.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"image not found: {path!r}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    elif ext in (".ppm", ".pgm", ".pnm"):
        arr = _read_pnm(path)
    else:
        raise ValueError(f"unsupported image format: {path!r}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_edge_map(prob: np.ndarray, path: str) -> None:
    """Store a probability map as 16-bit big-endian PGM (maxval 65535)."""
    if prob.min() < 0.0 or prob.max() > 1.0:
        raise ValueError("edge map values must lie in [0, 1]")
    _write_pnm(path, prob.astype(np.float32), 65535)


def read_edge_map(path: str) -> np.ndarray:
    """Inverse of :func:`write_edge_map`; returns float32 [H, W]."""
    arr = _read_pnm(path)
    if arr.shape[2] != 1:
        raise ValueError(f"edge map {path!r} must be single-channel")
    return arr[:, :, 0]


# ---------------------------------------------------------------------------
# annotations

def consensus_gt(gt_maps: list[np.ndarray]) -> np.ndarray:
    """Pixelwise fraction of annotators marking an edge."""
    if not gt_maps:
        raise ValueError("consensus_gt needs at least one annotation map")
    first = gt_maps[0]
    for m in gt_maps[1:]:
        if m.shape != first.shape:
            raise ValueError(f"annotation shape mismatch: {m.shape} vs {first.shape}")
    return np.mean(np.stack(gt_maps), axis=0, dtype=np.float64).astype(np.float32)


# ---------------------------------------------------------------------------
# manifests

def load_manifest(path: str) -> list[tuple[str, list[str]]]:
    """Read tab-separated ``image<TAB>gt[,gt...]`` lines, checking paths exist."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'image<TAB>gt[,gt...]'")
            img = parts[0] if os.path.isabs(parts[0]) else os.path.join(base, parts[0])
            gts = [g if os.path.isabs(g) else os.path.join(base, g) for g in parts[1].split(",")]
            for p in [img] + gts:
                if not os.path.exists(p):
                    raise FileNotFoundError(f"{path}:{ln}: missing file {p!r}")
            entries.append((img, gts))
    return entries


def write_manifest(path: str, entries: list[tuple[str, list[str]]]) -> None:
    with open(path, "w") as fh:
        for img, gts in entries:
            fh.write(f"{img}\t{','.join(gts)}\n")


def load_samples(manifest_path: str) -> list[Sample]:
    samples = []
    for img_path, gt_paths in load_manifest(manifest_path):
        image = load_image(img_path)
        gts = []
        for p in gt_paths:
            if p.lower().endswith((".pgm", ".pnm")):
                gts.append(read_edge_map(p))
            else:
                gts.append(load_image(p)[0])
        sid = os.path.splitext(os.path.basename(img_path))[0]
        samples.append(Sample(image=image, gt_maps=gts, id=sid))
    return samples


# ---------------------------------------------------------------------------
# synthetic dataset

_SUPER = 3  # subpixel grid per axis for coverage anti-aliasing


def _coverage_ellipse(size: int, cx, cy, a, b, theta) -> np.ndarray:
    n = size * _SUPER
    coords = (np.arange(n) + 0.5) / _SUPER
    X, Y = np.meshgrid(coords, coords)
    ct, st = np.cos(theta), np.sin(theta)
    xr = (X - cx) * ct + (Y - cy) * st
    yr = -(X - cx) * st + (Y - cy) * ct
    inside = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
    return inside.reshape(size, _SUPER, size, _SUPER).mean(axis=(1, 3))


def _coverage_polygon(size: int, verts: np.ndarray) -> np.ndarray:
    n = size * _SUPER
    coords = (np.arange(n) + 0.5) / _SUPER
    X, Y = np.meshgrid(coords, coords)
    inside = np.ones((n, n), dtype=bool)
    k = len(verts)
    for i in range(k):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % k]
        # CCW vertices: interior lies left of each directed edge
        inside &= (x1 - x0) * (Y - y0) - (y1 - y0) * (X - x0) >= 0.0
    return inside.reshape(size, _SUPER, size, _SUPER).mean(axis=(1, 3))


# jittered corners of the RGB cube: any two regions differ strongly
_COLOR_ANCHORS = np.array(
    [[r, g, b] for r in (0.15, 0.85) for g in (0.15, 0.85) for b in (0.15, 0.85)]
)


def _image_colors(rng: np.random.Generator, count: int) -> np.ndarray:
    order = rng.permutation(len(_COLOR_ANCHORS))[:count]
    jitter = rng.uniform(-0.08, 0.08, size=(count, 3))
    return np.clip(_COLOR_ANCHORS[order] + jitter, 0.02, 0.98)


def _boundary_from_regions(region: np.ndarray) -> np.ndarray:
    gt = np.zeros(region.shape, dtype=np.float32)
    gt[:, :-1][region[:, :-1] != region[:, 1:]] = 1.0
    gt[:-1, :][region[:-1, :] != region[1:, :]] = 1.0
    return gt


def synth_dataset(seed: int, count: int, size: int) -> list[Sample]:
    """Generate ``count`` images of shapes with exact 1-px boundary GT.

    Each image holds 2-5 anti-aliased ellipses/convex polygons with
    distinct mean colors over a plain background, plus additive Gaussian
    texture noise (sigma 0.05). Fully deterministic for a given seed:
    fixed-order RNG draws and pure array arithmetic.
    """
    if size < 32:
        raise ValueError(f"synth_dataset: size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    samples = []
    for k in range(count):
        n_shapes = int(rng.integers(2, 6))
        colors = _image_colors(rng, n_shapes + 1)
        img = np.ones((size, size, 3), dtype=np.float64) * colors[0]
        region = np.zeros((size, size), dtype=np.int32)
        for s in range(1, n_shapes + 1):
            color = colors[s]
            cx, cy = rng.uniform(0.15 * size, 0.85 * size, size=2)
            if rng.random() < 0.5:
                a, b = rng.uniform(0.06 * size, 0.12 * size, size=2)
                theta = rng.uniform(0.0, np.pi)
                cov = _coverage_ellipse(size, cx, cy, a, b, theta)
            else:
                nv = int(rng.integers(3, 7))
                angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=nv))
                radii = rng.uniform(0.06 * size, 0.12 * size, size=nv)
                verts = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
                cov = _coverage_polygon(size, verts)
            img = img * (1.0 - cov)[:, :, None] + color[None, None, :] * cov[:, :, None]
            region[cov >= 0.5] = s
        img += rng.normal(0.0, 0.05, size=img.shape)
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        gt = _boundary_from_regions(region)
        samples.append(Sample(image=img.transpose(2, 0, 1).copy(), gt_maps=[gt], id=f"img_{k:03d}"))
    return samples


def write_dataset(samples: list[Sample], out_dir: str) -> str:
    """Write images (PNG), GT maps (16-bit PGM), and a manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for s in samples:
        img_path = os.path.join(out_dir, f"{s.id}.png")
        rgb = np.round(s.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(rgb).save(img_path)
        gt_paths = []
        for gi, gt in enumerate(s.gt_maps):
            gt_path = os.path.join(out_dir, f"{s.id}_gt{gi}.pgm")
            write_edge_map(gt, gt_path)
            gt_paths.append(os.path.basename(gt_path))
        entries.append((os.path.basename(img_path), gt_paths))
    manifest = os.path.join(out_dir, "manifest.txt")
    write_manifest(manifest, entries)
    return manifest
