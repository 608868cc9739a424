"""Image ingestion, patch normalization, manifests and synthetic datasets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, DataError

IMAGE_SUFFIXES = (".png", ".pgm")
_EPS = 1e-6


@dataclass
class PlaceDataset:
    """An ordered reference or query traverse.

    ``images`` holds one flattened intensity vector per row. For query sets
    ``ground_truth[i]`` is the reference place id of query ``i`` (-1 when
    the query has no true match).
    """

    role: str
    place_ids: np.ndarray
    images: np.ndarray
    ground_truth: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.role not in ("reference", "query"):
            raise ValueError(f"role must be 'reference' or 'query', got {self.role!r}")
        self.place_ids = np.asarray(self.place_ids, dtype=np.int64)
        self.images = np.atleast_2d(np.asarray(self.images, dtype=float))
        if len(self.place_ids) != len(self.images):
            raise DataError("one place id per image required")
        if self.role == "reference":
            if not np.array_equal(np.sort(self.place_ids), np.arange(len(self.place_ids))):
                raise DataError("reference place ids must be unique and contiguous from 0")
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth, dtype=np.int64)
            if len(self.ground_truth) != len(self.images):
                raise DataError("ground truth must have one entry per query")

    def __len__(self) -> int:
        return len(self.place_ids)

    def check_pairing(self, reference: "PlaceDataset") -> None:
        if self.ground_truth is None:
            return
        known = set(reference.place_ids.tolist())
        bad = [int(g) for g in self.ground_truth if g >= 0 and int(g) not in known]
        if bad:
            raise DataError(f"ground truth refers to unknown reference places {bad[:10]}")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 3:
        if image.shape[2] == 1:
            return image[:, :, 0].astype(float)
        rgb = image[:, :, :3].astype(float)
        # ITU-R BT.601 luma, same weights as cv2's RGB2GRAY
        return rgb @ np.array([0.299, 0.587, 0.114])
    if image.ndim != 2:
        raise DataError(f"unsupported image shape {image.shape}")
    return image.astype(float)


def preprocess_image(raw, width: int = 28, height: int = 28, patch: int = 7) -> np.ndarray:
    """Resize, patch-normalize and rescale an image to a flat vector in [0, 255].

    Each ``patch x patch`` tile is standardized, its extremes are stretched
    onto [-1, 1], and the result is mapped linearly onto [0, 255]. Tiles
    with no contrast become 127.5. RGB input is reduced to luma first.
    """
    if width % patch or height % patch:
        raise ConfigError(f"{width}x{height} is not divisible into {patch}x{patch} patches")
    image = to_grayscale(raw)
    if image.size == 0:
        raise DataError("empty image")
    if image.shape != (height, width):
        image = cv2.resize(image, (width, height), interpolation=cv2.INTER_LINEAR)

    tiles = image.reshape(height // patch, patch, width // patch, patch).swapaxes(1, 2)
    mean = tiles.mean(axis=(2, 3), keepdims=True)
    std = tiles.std(axis=(2, 3), keepdims=True)
    z = (tiles - mean) / np.maximum(std, _EPS)
    lo = z.min(axis=(2, 3), keepdims=True)
    hi = z.max(axis=(2, 3), keepdims=True)
    span = hi - lo
    flat = std < _EPS
    unit = np.where(flat, 0.0, 2.0 * (z - lo) / np.where(flat, 1.0, span) - 1.0)
    out = (unit + 1.0) / 2.0 * 255.0
    return out.swapaxes(1, 2).reshape(height * width)


class PatchNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`preprocess_image`.

    Accepts a sequence of 2-D (or RGB) images, or a 2-D array of already
    flattened ``width * height`` images.
    """

    def __init__(self, width: int = 28, height: int = 28, patch: int = 7):
        self.width = width
        self.height = height
        self.patch = patch

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        if isinstance(X, np.ndarray) and X.ndim == 2 and X.shape[1] == self.width * self.height:
            X = X.reshape(-1, self.height, self.width)
        return np.stack([preprocess_image(x, self.width, self.height, self.patch) for x in X])


def read_image(path: str | Path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise DataError(f"cannot read image {path}")
    if image.ndim == 3:
        image = cv2.cvtColor(image, cv2.COLOR_BGRA2GRAY if image.shape[2] == 4 else cv2.COLOR_BGR2GRAY)
    return image.astype(float)


def write_image(path: str | Path, image: np.ndarray) -> None:
    data = np.clip(np.rint(np.asarray(image, dtype=float)), 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), data):
        raise DataError(f"cannot write image {path}")


@dataclass
class DatasetManifest:
    name: str
    reference: list[Path]
    query: list[Path]
    ground_truth: str | list[tuple[int, int]] = "aligned"
    width: int = 28
    height: int = 28
    patch: int = 7
    source: Path | None = field(default=None, compare=False)

    @property
    def k_p(self) -> int:
        return self.width * self.height

    def ground_truth_vector(self) -> np.ndarray:
        gt = np.full(len(self.query), -1, dtype=np.int64)
        if self.ground_truth == "aligned":
            n = min(len(self.query), len(self.reference))
            gt[:n] = np.arange(n)
        else:
            for q, r in self.ground_truth:
                if not 0 <= q < len(self.query) or not 0 <= r < len(self.reference):
                    raise DataError(f"ground-truth pair ({q}, {r}) out of range")
                gt[q] = r
        return gt

    def to_dict(self) -> dict:
        base = self.source.parent if self.source is not None else None

        def rel(p: Path) -> str:
            return str(p.relative_to(base)) if base is not None and p.is_relative_to(base) else str(p)

        return {
            "name": self.name,
            "reference": [rel(p) for p in self.reference],
            "query": [rel(p) for p in self.query],
            "ground_truth": self.ground_truth if self.ground_truth == "aligned"
            else [list(pair) for pair in self.ground_truth],
            "preprocess": {"width": self.width, "height": self.height, "patch": self.patch},
        }


def _expand(entry, base: Path) -> list[Path]:
    if isinstance(entry, str):
        folder = base / entry
        if not folder.is_dir():
            raise DataError(f"image directory {folder} does not exist")
        return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [base / str(p) for p in entry]


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    missing = {"name", "reference", "query"} - set(raw)
    if missing:
        raise ConfigError(f"manifest {path} lacks fields {sorted(missing)}")
    gt = raw.get("ground_truth", "aligned")
    if gt != "aligned":
        gt = [(int(q), int(r)) for q, r in gt]
    pre = raw.get("preprocess", {})
    return DatasetManifest(
        name=raw["name"],
        reference=_expand(raw["reference"], path.parent),
        query=_expand(raw["query"], path.parent),
        ground_truth=gt,
        width=int(pre.get("width", 28)),
        height=int(pre.get("height", 28)),
        patch=int(pre.get("patch", 7)),
        source=path,
    )


def load_datasets(manifest: DatasetManifest) -> tuple[PlaceDataset, PlaceDataset]:
    """Read and preprocess every image a manifest lists.

    All unreadable files are collected before failing so one run reports
    the full list.
    """
    problems = []
    vectors = {}
    for p in [*manifest.reference, *manifest.query]:
        if p in vectors:
            continue
        try:
            vectors[p] = preprocess_image(read_image(p), manifest.width, manifest.height, manifest.patch)
        except DataError as exc:
            problems.append(f"{p}: {exc}")
    if problems:
        raise DataError("unreadable images:\n  " + "\n  ".join(problems))
    ref = PlaceDataset("reference", np.arange(len(manifest.reference)),
                       np.array([vectors[p] for p in manifest.reference]).reshape(-1, manifest.k_p))
    gt = manifest.ground_truth_vector()
    qry = PlaceDataset("query", np.arange(len(manifest.query)),
                       np.array([vectors[p] for p in manifest.query]).reshape(-1, manifest.k_p), gt)
    qry.check_pairing(ref)
    return ref, qry


def generate_synthetic_dataset(n_places: int, noise_sigma: float, occlusion_fraction: float,
                               seed: int, width: int = 28, height: int = 28,
                               smoothing: float = 2.0) -> tuple[PlaceDataset, PlaceDataset]:
    """Reference/query pair of smoothed-noise scenes with index-aligned truth.

    Queries are their reference scene plus Gaussian pixel noise (clipped to
    [0, 255]) and one constant-valued rectangular occluder covering about
    ``occlusion_fraction`` of the pixels.
    """
    if n_places < 1:
        raise ConfigError("n_places must be at least 1")
    if not 0 <= occlusion_fraction < 1:
        raise ConfigError("occlusion_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    refs = np.empty((n_places, height * width))
    for i in range(n_places):
        scene = gaussian_filter(rng.normal(size=(height, width)), smoothing, mode="wrap")
        scene = (scene - scene.min()) / (scene.max() - scene.min()) * 255.0
        refs[i] = scene.ravel()

    # noise is always drawn so occluder placement does not depend on sigma
    noise = rng.normal(0.0, 1.0, refs.shape) * noise_sigma
    queries = np.clip(refs + noise, 0.0, 255.0)
    if occlusion_fraction > 0:
        area = occlusion_fraction * width * height
        rows = max(1, min(height, int(round(np.sqrt(area * height / width)))))
        cols = max(1, min(width, int(round(area / rows))))
        for i in range(n_places):
            top = rng.integers(0, height - rows + 1)
            left = rng.integers(0, width - cols + 1)
            img = queries[i].reshape(height, width)
            img[top:top + rows, left:left + cols] = rng.uniform(0.0, 255.0)
    ids = np.arange(n_places)
    return (PlaceDataset("reference", ids, refs),
            PlaceDataset("query", ids, queries, ground_truth=ids.copy()))


def write_synthetic_dataset(out_dir: str | Path, reference: PlaceDataset, query: PlaceDataset,
                            name: str = "synthetic", width: int = 28, height: int = 28,
                            patch: int = 7) -> Path:
    """Write 8-bit PNGs plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "reference").mkdir(parents=True, exist_ok=True)
    (out / "query").mkdir(parents=True, exist_ok=True)
    ref_paths, q_paths = [], []
    for i, img in enumerate(reference.images):
        p = out / "reference" / f"{i:05d}.png"
        write_image(p, img.reshape(height, width))
        ref_paths.append(p.relative_to(out).as_posix())
    for i, img in enumerate(query.images):
        p = out / "query" / f"{i:05d}.png"
        write_image(p, img.reshape(height, width))
        q_paths.append(p.relative_to(out).as_posix())
    gt: str | list = "aligned"
    if query.ground_truth is not None and not np.array_equal(query.ground_truth, np.arange(len(query))):
        gt = [[int(q), int(r)] for q, r in enumerate(query.ground_truth) if r >= 0]
    manifest = {
        "name": name,
        "reference": ref_paths,
        "query": q_paths,
        "ground_truth": gt,
        "preprocess": {"width": width, "height": height, "patch": patch},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
