"""Synthetic demo corpus: five visually separable lesion archetypes.

Each class has distinct shape and color statistics on a skin-toned background.
Two internal sources feed train/val/test; one held-out external source with
shifted color statistics appears only in the test split, enabling the
internal/external evaluation protocol at desk scale. Rendering is a pure
function of (seed, sample index).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import LABEL_CODES, Corpus, SampleRecord, save_manifest
from .utils import derive_seed

# Per-class lesion archetype: base RGB, radius range, axis ratio, border wobble.
_ARCHETYPES = {
    "BEK": {"color": (170, 140, 90), "radius": (30, 48), "ratio": 1.4, "wobble": 0.05},
    "NEV": {"color": (120, 70, 40), "radius": (30, 48), "ratio": 1.0, "wobble": 0.03},
    "ACK": {"color": (190, 85, 80), "radius": (28, 44), "ratio": 1.8, "wobble": 0.08},
    "BCC": {"color": (205, 140, 160), "radius": (22, 34), "ratio": 1.0, "wobble": 0.03},
    "MEL": {"color": (45, 35, 40), "radius": (30, 50), "ratio": 1.2, "wobble": 0.25},
}

_SOURCES = {
    "dermA": {"background": (224, 192, 170), "shift": (0, 0, 0), "image_type": "dermoscopic"},
    "clinB": {"background": (232, 202, 182), "shift": (0, 0, 0), "image_type": "clinical"},
    "extC": {"background": (238, 186, 150), "shift": (15, -5, -15), "image_type": "dermoscopic"},
}

# (source, split) -> per-class counts; train is imbalanced on purpose so the
# balanced stream has real oversampling work to do. Totals: 200/50/100.
_ALLOCATION = {
    ("dermA", "train"): {"BEK": 18, "NEV": 42, "ACK": 12, "BCC": 24, "MEL": 24},
    ("clinB", "train"): {"BEK": 12, "NEV": 28, "ACK": 8, "BCC": 16, "MEL": 16},
    ("dermA", "val"): {"BEK": 6, "NEV": 6, "ACK": 6, "BCC": 6, "MEL": 6},
    ("clinB", "val"): {"BEK": 4, "NEV": 4, "ACK": 4, "BCC": 4, "MEL": 4},
    ("dermA", "test"): {"BEK": 5, "NEV": 5, "ACK": 5, "BCC": 5, "MEL": 5},
    ("clinB", "test"): {"BEK": 5, "NEV": 5, "ACK": 5, "BCC": 5, "MEL": 5},
    ("extC", "test"): {"BEK": 10, "NEV": 10, "ACK": 10, "BCC": 10, "MEL": 10},
}

_SUBCLASSES = {"NEV": "melanocytic nevus", "ACK": "bowen's disease"}


def _render_sample(label: str, source: str, rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Render one lesion image; returns (HxWx3 uint8, lesion bbox)."""
    spec = _ARCHETYPES[label]
    src = _SOURCES[source]
    size = int(rng.integers(192, 257))
    bg = np.array(src["background"], dtype=np.float64)
    shift = np.array(src["shift"], dtype=np.float64)
    canvas = np.ones((size, size, 3), dtype=np.float64) * (bg + rng.normal(0, 2, size=3))

    r = float(rng.uniform(*spec["radius"])) * size / 224.0
    rx, ry = r * spec["ratio"], r
    theta = float(rng.uniform(0, np.pi))
    if src["image_type"] == "clinical":
        # wide-field photo: lesion may sit off-center
        margin = max(rx, ry) * 1.3 + 4
        cx = float(rng.uniform(margin, size - margin))
        cy = float(rng.uniform(margin, size - margin))
    else:
        cx = size / 2 + float(rng.uniform(-0.15, 0.15)) * size
        cy = size / 2 + float(rng.uniform(-0.15, 0.15)) * size

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    phi = np.arctan2(v, u)
    wobble = 1.0 + spec["wobble"] * np.sin(5 * phi + float(rng.uniform(0, 2 * np.pi)))
    dist = np.sqrt((u / rx) ** 2 + (v / ry) ** 2) / wobble
    alpha = np.clip((1.05 - dist) / 0.1, 0.0, 1.0)  # soft edge

    color = np.array(spec["color"], dtype=np.float64) + shift + rng.normal(0, 3, size=3)
    canvas = canvas * (1 - alpha[..., None]) + color * alpha[..., None]
    canvas += rng.normal(0, 4, size=canvas.shape)
    image = np.clip(np.round(canvas), 0, 255).astype(np.uint8)

    mask = alpha > 0.5
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    pad = 6
    x0 = max(0, int(cols[0]) - pad)
    y0 = max(0, int(rows[0]) - pad)
    x1 = min(size, int(cols[-1]) + 1 + pad)
    y1 = min(size, int(rows[-1]) + 1 + pad)
    return image, (x0, y0, x1 - x0, y1 - y0)


def make_demo_corpus(out_dir: str | Path, seed: int = 0) -> Corpus:
    """Generate the demo corpus; writes images/ and manifest.jsonl under out_dir."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    records = []
    counter = 0
    for (source, split), counts in _ALLOCATION.items():
        for label in LABEL_CODES:
            for _ in range(counts[label]):
                rng = np.random.default_rng(derive_seed(seed, "demo", counter))
                image, bbox = _render_sample(label, source, rng)
                sample_id = f"{source}-{split}-{counter:04d}"
                rel = f"images/{sample_id}.png"
                Image.fromarray(image).save(image_dir / f"{sample_id}.png")
                is_clinical = _SOURCES[source]["image_type"] == "clinical"
                subclass = ""
                if label in _SUBCLASSES and rng.random() < 0.3:
                    subclass = _SUBCLASSES[label]
                records.append(
                    SampleRecord(
                        id=sample_id,
                        image_ref=rel,
                        label=label,
                        subclass=subclass,
                        dataset=source,
                        split=split,
                        image_type=_SOURCES[source]["image_type"],
                        bbox=bbox if is_clinical else None,
                    )
                )
                counter += 1

    manifest = out_dir / "manifest.jsonl"
    save_manifest(records, manifest)
    corpus = Corpus(records, manifest_path=str(manifest))
    return corpus
