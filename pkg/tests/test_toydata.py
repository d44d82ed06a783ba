from collections import Counter

import numpy as np
from PIL import Image

from dermalign.corpus import load_manifest
from dermalign.preprocess import luminance, otsu_crop
from dermalign.toydata import make_demo_corpus


class TestDemoCorpus:
    def test_split_sizes_and_sources(self, tmp_path):
        corpus = make_demo_corpus(tmp_path, seed=0)
        by_split = Counter(r.split for r in corpus.records)
        assert by_split == {"train": 200, "val": 50, "test": 100}
        assert corpus.internal_sources == {"dermA", "clinB"}
        assert corpus.external_sources == {"extC"}
        # external source appears only in the test split
        assert all(r.split == "test" for r in corpus.records if r.dataset == "extC")

    def test_every_class_in_every_axis(self, tmp_path):
        corpus = make_demo_corpus(tmp_path, seed=0)
        for split in ("train", "val", "test"):
            labels = {r.label for r in corpus.split_records(split)}
            assert len(labels) == 5, split

    def test_clinical_records_have_bboxes(self, tmp_path):
        corpus = make_demo_corpus(tmp_path, seed=0)
        for rec in corpus.records:
            if rec.image_type == "clinical":
                assert rec.bbox is not None
                img = np.asarray(Image.open(tmp_path / rec.image_ref))
                x, y, w, h = rec.bbox
                assert x >= 0 and y >= 0 and x + w <= img.shape[1] and y + h <= img.shape[0]
            else:
                assert rec.bbox is None

    def test_images_written_and_loadable(self, tmp_path):
        corpus = make_demo_corpus(tmp_path, seed=0)
        rec = corpus.records[0]
        arr = np.asarray(Image.open(tmp_path / rec.image_ref).convert("RGB"))
        assert arr.ndim == 3 and arr.shape[2] == 3

    def test_manifest_deterministic(self, tmp_path):
        make_demo_corpus(tmp_path / "a", seed=0)
        make_demo_corpus(tmp_path / "b", seed=0)
        assert (tmp_path / "a/manifest.jsonl").read_bytes() == (
            tmp_path / "b/manifest.jsonl"
        ).read_bytes()
        sample = "dermA-train-0000.png"
        assert (tmp_path / "a/images" / sample).read_bytes() == (
            tmp_path / "b/images" / sample
        ).read_bytes()

    def test_lesions_darker_than_skin(self, tmp_path):
        # the dermoscopic crop path assumes the lesion is the darker Otsu class
        corpus = make_demo_corpus(tmp_path, seed=0)
        checked = 0
        for rec in corpus.records[:40]:
            if rec.image_type != "dermoscopic":
                continue
            img = np.asarray(Image.open(tmp_path / rec.image_ref).convert("RGB"))
            result = otsu_crop(img)
            assert not result.fallback, rec.id
            x, y, w, h = result.mask_bbox
            inside = luminance(img)[y : y + h, x : x + w].mean()
            outside = luminance(img).mean()
            assert inside < outside
            checked += 1
        assert checked > 0
