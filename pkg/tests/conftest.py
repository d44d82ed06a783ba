import numpy as np
import pytest

from dermalign.corpus import Corpus, SampleRecord


def make_record(
    id: str,
    label: str = "NEV",
    split: str = "train",
    dataset: str = "src0",
    subclass: str = "",
    image_type: str = "dermoscopic",
    bbox=None,
    image_ref: str = "",
) -> SampleRecord:
    return SampleRecord(
        id=id,
        image_ref=image_ref or f"images/{id}.png",
        label=label,
        subclass=subclass,
        dataset=dataset,
        split=split,
        image_type=image_type,
        bbox=bbox,
    )


def make_corpus(spec: dict[str, dict[str, int]], dataset: str = "src0") -> Corpus:
    """spec: split -> {label: count}."""
    records = []
    i = 0
    for split, counts in spec.items():
        for label, count in counts.items():
            for _ in range(count):
                records.append(make_record(f"{split}-{label}-{i:05d}", label, split, dataset))
                i += 1
    return Corpus(records)


@pytest.fixture
def disk_image() -> tuple[np.ndarray, tuple[int, int, int, int]]:
    """Dark 40x40 disk (intensity 30) centered in a bright 200x200 field (220)."""
    img = np.full((200, 200, 3), 220, dtype=np.uint8)
    yy, xx = np.mgrid[0:200, 0:200]
    mask = (xx - 100) ** 2 + (yy - 100) ** 2 <= 20**2
    img[mask] = 30
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    bbox = (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
    return img, bbox
