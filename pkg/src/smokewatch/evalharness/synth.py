"""Deterministic synthetic smoke scenes for desk-scale training and eval.

Every image is rendered from an integer-hash noise core (splitmix64-style
mixing), so a corpus is bit-identical for a given seed on any platform.
Scenes are textured terrain under a sky gradient; positive images add one or
two rising smoke plumes (anisotropic puff chains that widen and fade with
height) with tight mass-derived bounding boxes, and any image may carry the
classic confusors: cloud blobs in the sky and low fog banks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..geometry import BoundingBox

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    """splitmix64 finalizer on python ints."""
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SceneRng:
    """Tiny deterministic RNG for scalar layout decisions."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 40) / float(1 << 24))

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi)."""
        return lo + self.next_u64() % (hi - lo)

    def chance(self, p: float) -> bool:
        return self.uniform(0.0, 1.0) < p

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i + 1)
            items[i], items[j] = items[j], items[i]


def _hash_grid(seed: int, xi: np.ndarray, yi: np.ndarray) -> np.ndarray:
    """Hash integer lattice coordinates to [0, 1) float32."""
    with np.errstate(over="ignore"):
        h = (
            xi.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
            ^ yi.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
            ^ np.uint64(seed & _MASK)
        )
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        h = h ^ (h >> np.uint64(31))
    return ((h >> np.uint64(40)).astype(np.float32)) / np.float32(1 << 24)


def value_noise(seed: int, h: int, w: int, cell: int) -> np.ndarray:
    """Bilinear value noise in [0, 1) with lattice spacing cell."""
    ys, xs = np.mgrid[0:h, 0:w]
    x0 = xs // cell
    y0 = ys // cell
    fx = ((xs % cell) / cell).astype(np.float32)
    fy = ((ys % cell) / cell).astype(np.float32)
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    v00 = _hash_grid(seed, x0, y0)
    v01 = _hash_grid(seed, x0 + 1, y0)
    v10 = _hash_grid(seed, x0, y0 + 1)
    v11 = _hash_grid(seed, x0 + 1, y0 + 1)
    return (v00 * (1 - sx) + v01 * sx) * (1 - sy) + (v10 * (1 - sx) + v11 * sx) * sy


def fractal_noise(seed: int, h: int, w: int, cell: int, octaves: int = 3) -> np.ndarray:
    out = np.zeros((h, w), dtype=np.float32)
    amp_total = 0.0
    amp = 1.0
    for o in range(octaves):
        out += amp * value_noise(_mix64(seed + o), h, w, max(2, cell >> o))
        amp_total += amp
        amp *= 0.5
    return out / amp_total


@dataclass(frozen=True)
class SynthParams:
    image_size: tuple[int, int] = (256, 256)  # (H, W)
    positive_fraction: float = 0.5
    second_plume_prob: float = 0.2
    cloud_prob: float = 0.65
    fog_prob: float = 0.35

    def __post_init__(self):
        if not (0.0 <= self.positive_fraction <= 1.0):
            raise ValueError("positive_fraction must be in [0, 1]")


@dataclass
class SceneRecord:
    file: str
    split: str
    label: int
    boxes: list[tuple[float, float, float, float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"file": self.file, "split": self.split, "label": self.label,
             "boxes": [list(b) for b in self.boxes]}
        )


def _add_gaussian(alpha: np.ndarray, cx: float, cy: float, sx: float, sy: float, amp: float):
    """Accumulate an elliptical Gaussian, evaluated on a clipped window."""
    h, w = alpha.shape
    x0 = max(0, int(cx - 4 * sx))
    x1 = min(w, int(cx + 4 * sx) + 1)
    y0 = max(0, int(cy - 4 * sy))
    y1 = min(h, int(cy + 4 * sy) + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    g = amp * np.exp(
        -(((xs - cx) ** 2) / (2 * sx * sx) + ((ys - cy) ** 2) / (2 * sy * sy))
    ).astype(np.float32)
    alpha[y0:y1, x0:x1] += g


def _render_plume(rng: SceneRng, h: int, w: int, horizon: float) -> np.ndarray:
    """Alpha map of one rising plume: a puff chain that widens and fades."""
    alpha = np.zeros((h, w), dtype=np.float32)
    base_x = rng.uniform(0.15 * w, 0.85 * w)
    base_y = rng.uniform(horizon + 0.06 * h, 0.9 * h)
    height = rng.uniform(0.15 * h, min(0.5 * h, base_y - 8))
    wind = rng.uniform(-0.35, 0.35)
    r0 = rng.uniform(2.5, 6.5)
    peak = rng.uniform(0.55, 0.85)
    n_puffs = 14
    for i in range(n_puffs):
        t = i / (n_puffs - 1)
        px = base_x + wind * t * height + rng.uniform(-1.5, 1.5) * (0.3 + t)
        py = base_y - t * height
        r = r0 * (1.0 + 2.4 * t)
        _add_gaussian(alpha, px, py, r, 1.3 * r, peak * (1.0 - 0.45 * t))
    return np.clip(alpha, 0.0, 0.92)


def _mass_box(alpha: np.ndarray, tail: float = 0.005) -> BoundingBox:
    """Tight box holding all but a tail fraction of the alpha mass per axis."""
    total = float(alpha.sum())
    col_mass = np.cumsum(alpha.sum(axis=0, dtype=np.float64)) / total
    row_mass = np.cumsum(alpha.sum(axis=1, dtype=np.float64)) / total
    x0 = int(np.searchsorted(col_mass, tail))
    x1 = int(np.searchsorted(col_mass, 1.0 - tail)) + 1
    y0 = int(np.searchsorted(row_mass, tail))
    y1 = int(np.searchsorted(row_mass, 1.0 - tail)) + 1
    h, w = alpha.shape
    return BoundingBox(
        max(0, x0 - 1), max(0, y0 - 1), min(w, x1 + 1), min(h, y1 + 1)
    )


def render_scene(seed: int, positive: bool, params: SynthParams | None = None):
    """Render one scene.

    Returns:
        (pixels, boxes, plume_alphas): uint8 HWC image, one BoundingBox per
        plume, and each plume's alpha map for mass checks.
    """
    params = params or SynthParams()
    h, w = params.image_size
    rng = SceneRng(_mix64(seed))

    horizon = h * rng.uniform(0.38, 0.52)
    ys = np.arange(h, dtype=np.float32)[:, None]
    xs = np.arange(w, dtype=np.float32)[None, :]

    # sky: blue-gray gradient getting paler toward the horizon
    sky_t = np.clip(ys / max(horizon, 1.0), 0.0, 1.0)
    img = np.zeros((h, w, 3), dtype=np.float32)
    img[..., 0] = 0.45 + 0.25 * sky_t
    img[..., 1] = 0.58 + 0.2 * sky_t
    img[..., 2] = 0.78 + 0.1 * sky_t

    # terrain: green-brown fractal texture with ridge shading
    terrain_noise = fractal_noise(rng.next_u64(), h, w, 64, octaves=4)
    shade = 0.35 + 0.5 * terrain_noise
    terrain = np.stack(
        [0.30 * shade + 0.08, 0.38 * shade + 0.10, 0.22 * shade + 0.06], axis=-1
    )
    ground = (ys >= horizon).astype(np.float32)[..., None]
    img = img * (1 - ground) + terrain * ground

    # fog: a translucent pale band hugging the horizon
    if rng.chance(params.fog_prob):
        fog_y = horizon + rng.uniform(-0.02, 0.08) * h
        fog_sigma = rng.uniform(0.03, 0.07) * h
        band = np.exp(-((ys - fog_y) ** 2) / (2 * fog_sigma**2)).astype(np.float32)
        lateral = 0.6 + 0.4 * fractal_noise(rng.next_u64(), 1, w, 64, octaves=2)[0]
        fog_alpha = rng.uniform(0.25, 0.5) * band * lateral[None, :]
        img = img * (1 - fog_alpha[..., None]) + 0.87 * fog_alpha[..., None]

    # clouds: bright horizontally stretched blobs in the sky
    if rng.chance(params.cloud_prob):
        cloud_alpha = np.zeros((h, w), dtype=np.float32)
        for _ in range(rng.randint(1, 4)):
            cx = rng.uniform(0.1 * w, 0.9 * w)
            cy = rng.uniform(0.06 * h, max(horizon - 0.12 * h, 0.1 * h))
            sx = rng.uniform(0.06 * w, 0.16 * w)
            sy = sx * rng.uniform(0.2, 0.4)
            _add_gaussian(cloud_alpha, cx, cy, sx, sy, rng.uniform(0.5, 0.85))
        puff = 0.7 + 0.3 * fractal_noise(rng.next_u64(), h, w, 32, octaves=2)
        cloud_alpha = np.clip(cloud_alpha * puff, 0.0, 0.95)
        img = img * (1 - cloud_alpha[..., None]) + 0.96 * cloud_alpha[..., None]

    boxes: list[BoundingBox] = []
    plume_alphas: list[np.ndarray] = []
    if positive:
        n_plumes = 1 + (1 if rng.chance(params.second_plume_prob) else 0)
        for _ in range(n_plumes):
            alpha = _render_plume(rng, h, w, horizon)
            grain = 0.88 + 0.12 * fractal_noise(rng.next_u64(), h, w, 16, octaves=2)
            smoke = np.stack([0.80 * grain, 0.80 * grain, 0.82 * grain], axis=-1)
            img = img * (1 - alpha[..., None]) + smoke * alpha[..., None]
            boxes.append(_mass_box(alpha))
            plume_alphas.append(alpha)

    # fine sensor grain
    img += 0.025 * (fractal_noise(rng.next_u64(), h, w, 4, octaves=1)[..., None] - 0.5)
    pixels = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return pixels, boxes, plume_alphas


@dataclass
class CorpusManifest:
    root: Path
    records: list[SceneRecord]

    def split(self, name: str) -> list[SceneRecord]:
        return [r for r in self.records if r.split == name]


def synth_corpus(
    seed: int,
    n_train: int,
    n_val: int,
    params: SynthParams | None = None,
    out_dir: str | Path = "corpus",
) -> CorpusManifest:
    """Generate a labeled corpus on disk plus its JSONL manifest.

    Labels per split respect positive_fraction to rounding; images are
    deterministic functions of (seed, split, index).
    """
    if n_train < 1 or n_val < 1:
        raise ValueError("n_train and n_val must be >= 1")
    params = params or SynthParams()
    root = Path(out_dir)
    records: list[SceneRecord] = []
    for split, count, salt in (("train", n_train, 1), ("val", n_val, 2)):
        (root / split).mkdir(parents=True, exist_ok=True)
        n_pos = round(count * params.positive_fraction)
        flags = [i < n_pos for i in range(count)]
        SceneRng(_mix64(seed ^ (salt * 0x517CC1B727220A95))).shuffle(flags)
        for i, positive in enumerate(flags):
            scene_seed = _mix64((seed << 2) ^ (salt << 1) ^ _mix64(i))
            pixels, boxes, _ = render_scene(scene_seed, positive, params)
            rel = f"{split}/img_{i:05d}.png"
            Image.fromarray(pixels).save(root / rel)
            records.append(
                SceneRecord(
                    file=rel, split=split, label=int(positive),
                    boxes=[b.as_tuple() for b in boxes],
                )
            )
    with open(root / "manifest.jsonl", "w") as f:
        for r in records:
            f.write(r.to_json() + "\n")
    return CorpusManifest(root=root, records=records)


def load_manifest(root: str | Path) -> CorpusManifest:
    root = Path(root)
    records = []
    with open(root / "manifest.jsonl") as f:
        for line in f:
            d = json.loads(line)
            records.append(
                SceneRecord(
                    file=d["file"], split=d["split"], label=d["label"],
                    boxes=[tuple(b) for b in d["boxes"]],
                )
            )
    return CorpusManifest(root=root, records=records)


def load_samples(manifest: CorpusManifest, split: str):
    """Materialize a split as detector TrainSamples."""
    from ..detector.train import TrainSample

    samples = []
    for r in manifest.split(split):
        pixels = np.asarray(Image.open(manifest.root / r.file).convert("RGB"))
        samples.append(
            TrainSample(pixels=pixels, boxes=[BoundingBox(*b) for b in r.boxes])
        )
    return samples
