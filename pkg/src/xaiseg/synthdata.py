"""Procedural crack patches: value-noise textures with dark random-walk cracks.

Each split draws its patches from its own pool of large source textures, so
no texture is shared between train, validation and test.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageio import read_image, read_mask, to_uint8, write_pgm

SPLITS = ("train", "val", "test")
BG_RANGE = (0.35, 0.9)


@dataclass
class SynthConfig:
    patch_size: int = 64
    n_train: int = 600
    n_val: int = 160
    n_test: int = 160
    positive_fraction: float = 0.4
    # texture
    octaves: int = 4
    base_cell: int = 32
    persistence: float = 0.55
    contrast: float = 1.0
    source_size: int = 256
    sources_per_split: dict = field(default_factory=lambda: {"train": 3, "val": 1, "test": 1})
    # cracks
    n_cracks: tuple = (1, 3)
    width_range: tuple = (1, 4)
    waviness: float = 0.35
    max_area_fraction: float = 0.05
    darkness: float = 0.3
    darkness_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.patch_size, self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("sizes must be >= 1")
        if not 0 < self.positive_fraction < 1:
            raise ValueError("positive_fraction must lie in (0, 1)")
        lo, hi = self.width_range
        if not 1 <= lo <= hi < self.patch_size:
            raise ValueError("width_range must lie within the patch")
        if self.source_size < self.patch_size:
            raise ValueError("source textures must be at least one patch wide")
        if not (0 < self.darkness - self.darkness_jitter and self.darkness + self.darkness_jitter < 1):
            raise ValueError("darkness +- jitter must stay inside (0, 1)")


@dataclass
class Sample:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    mask: np.ndarray  # (H, W) bool
    label: int
    source_id: str


@dataclass
class Split:
    images: np.ndarray  # (N, 1, H, W)
    masks: np.ndarray  # (N, H, W)
    labels: np.ndarray
    source_ids: list

    def __len__(self):
        return len(self.labels)

    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 1)

    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == 0)


def quantize(img: np.ndarray) -> np.ndarray:
    # snap to 8-bit levels so graymap round-trips are exact
    return (to_uint8(img).astype(np.float32) / 255).astype(np.float32)


def value_noise(size: int, cell: int, rng: np.random.Generator) -> np.ndarray:
    """One octave of bilinear lattice noise on a ``size`` x ``size`` grid."""
    n = size // cell + 2
    lattice = rng.random((n, n))
    t = np.arange(size) / cell
    i0 = np.floor(t).astype(int)
    f = t - i0
    a = lattice[i0][:, i0]
    b = lattice[i0][:, i0 + 1]
    c = lattice[i0 + 1][:, i0]
    d = lattice[i0 + 1][:, i0 + 1]
    fy, fx = f[:, None], f[None, :]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def gen_background(size: int, cfg: SynthConfig | None = None, seed: int = 0) -> np.ndarray:
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    amp, cell = 1.0, cfg.base_cell
    for _ in range(cfg.octaves):
        img += amp * value_noise(size, max(cell, 1), rng)
        amp *= cfg.persistence
        cell //= 2
    img = (img - img.mean()) * cfg.contrast
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    img = BG_RANGE[0] + img * (BG_RANGE[1] - BG_RANGE[0])
    return quantize(img)


def _stamp(mask: np.ndarray, y: int, x: int, w: int) -> None:
    lo, hi = -((w - 1) // 2), w // 2 + 1
    h_, w_ = mask.shape
    mask[max(y + lo, 0) : min(y + hi, h_), max(x + lo, 0) : min(x + hi, w_)] = True


def gen_crack_path(size: int, cfg: SynthConfig | None = None, seed: int = 0,
                   n_cracks: int | None = None) -> np.ndarray:
    """Random-walk cracks with momentum, each stroked as one 8-connected piece."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    if n_cracks is None:
        n_cracks = int(rng.integers(cfg.n_cracks[0], cfg.n_cracks[1] + 1))
    budget = int(cfg.max_area_fraction * size * size)
    out = np.zeros((size, size), dtype=bool)
    wlo, whi = cfg.width_range
    for _ in range(n_cracks):
        crack = np.zeros_like(out)
        # start near one edge and head inwards
        side = rng.integers(4)
        u = rng.uniform(0.15, 0.85) * (size - 1)
        y, x, heading = {
            0: (0.0, u, np.pi / 2),
            1: (size - 1.0, u, -np.pi / 2),
            2: (u, 0.0, 0.0),
            3: (u, size - 1.0, np.pi),
        }[int(side)]
        heading += rng.uniform(-0.5, 0.5)
        turn = 0.0
        width = int(rng.integers(wlo, whi + 1))
        length = rng.uniform(0.6, 1.4) * size
        travelled, seg = 0.0, 0.0
        while travelled < length:
            iy, ix = int(round(y)), int(round(x))
            if not (0 <= iy < size and 0 <= ix < size):
                break
            trial = crack.copy()
            _stamp(trial, iy, ix, width)
            if np.count_nonzero(trial | out) > budget:
                break
            crack = trial
            # half-pixel steps keep successive rounded centres 8-adjacent
            turn = 0.8 * turn + rng.normal(0, cfg.waviness) * 0.25
            heading += turn * 0.5
            y += 0.5 * np.sin(heading)
            x += 0.5 * np.cos(heading)
            travelled += 0.5
            seg += 0.5
            if seg >= 8:
                seg = 0.0
                width = int(np.clip(width + rng.integers(-1, 2), wlo, whi))
        out |= crack
    return out


def render_sample(background: np.ndarray, mask: np.ndarray, cfg: SynthConfig, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    factor = cfg.darkness + rng.uniform(-cfg.darkness_jitter, cfg.darkness_jitter, size=background.shape)
    img = np.where(mask, background * factor, background)
    return quantize(img)


def _sources(cfg: SynthConfig, split: str, split_index: int):
    n = cfg.sources_per_split.get(split, 1)
    ids, textures = [], []
    for k in range(n):
        ids.append(f"{split}-{k}")
        textures.append(gen_background(cfg.source_size, cfg, seed=hash_seed(cfg.seed, 1, split_index, k)))
    return ids, textures


def hash_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1, dtype=np.uint64)[0])


def gen_split(cfg: SynthConfig, split: str) -> Split:
    si = SPLITS.index(split)
    n = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}[split]
    ids, textures = _sources(cfg, split, si)
    rng = np.random.default_rng(hash_seed(cfg.seed, 2, si))
    n_pos = int(round(cfg.positive_fraction * n))
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_pos]] = 1
    ps = cfg.patch_size
    images = np.empty((n, 1, ps, ps), dtype=np.float32)
    masks = np.zeros((n, ps, ps), dtype=bool)
    source_ids = []
    for i in range(n):
        k = int(rng.integers(len(textures)))
        top, left = rng.integers(0, cfg.source_size - ps + 1, size=2)
        bg = textures[k][top : top + ps, left : left + ps]
        if labels[i]:
            m = np.zeros((ps, ps), dtype=bool)
            attempt = 0
            while not m.any():
                m = gen_crack_path(ps, cfg, seed=hash_seed(cfg.seed, 3, si, i, attempt))
                attempt += 1
            masks[i] = m
            images[i, 0] = render_sample(bg, m, cfg, seed=hash_seed(cfg.seed, 4, si, i))
        else:
            images[i, 0] = bg
        source_ids.append(ids[k])
    return Split(images, masks, labels, source_ids)


def gen_dataset(cfg: SynthConfig | None = None) -> dict[str, Split]:
    cfg = cfg or SynthConfig()
    return {s: gen_split(cfg, s) for s in SPLITS}


MANIFEST_FIELDS = ("path", "label", "mask_path", "source_id", "split")


def write_dataset(data: dict[str, Split], out_dir) -> Path:
    out = Path(out_dir)
    rows = []
    for split, d in data.items():
        (out / split).mkdir(parents=True, exist_ok=True)
        for i in range(len(d)):
            img_rel = f"{split}/{i:05d}.pgm"
            mask_rel = f"{split}/{i:05d}_mask.pgm"
            write_pgm(out / img_rel, to_uint8(d.images[i, 0]))
            write_pgm(out / mask_rel, d.masks[i])
            rows.append((img_rel, int(d.labels[i]), mask_rel, d.source_ids[i], split))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def load_dataset(manifest) -> dict[str, Split]:
    manifest = Path(manifest)
    root = manifest.parent
    by_split: dict[str, list] = {}
    for row in read_manifest(manifest):
        by_split.setdefault(row["split"], []).append(row)
    out = {}
    for split, rows in by_split.items():
        imgs = np.stack([read_image(root / r["path"]) for r in rows])[:, None]
        masks = np.stack([read_mask(root / r["mask_path"]) for r in rows])
        labels = np.array([int(r["label"]) for r in rows])
        out[split] = Split(imgs.astype(np.float32), masks, labels, [r["source_id"] for r in rows])
    return out
