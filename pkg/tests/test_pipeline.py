import itertools

import numpy as np
import pytest

from glyphfusion import pipeline
from glyphfusion.config import RunConfig
from glyphfusion.errors import ArgumentError
from glyphfusion.glyphs import bundled_font


def test_diversity_matches_pairwise_loop():
    images = np.random.default_rng(0).normal(size=(5, 3, 4, 4))
    pairs = [np.linalg.norm(a - b) for a, b in itertools.combinations(images, 2)]
    assert pipeline.diversity(images) == pytest.approx(np.mean(pairs), rel=1e-12)
    assert pipeline.diversity(images[:1]) == 0.0
    assert pipeline.diversity(np.repeat(images[:1], 4, axis=0)) == pytest.approx(0.0, abs=1e-6)


def test_foreground_iou():
    mask = pipeline.glyph_mask("A", bundled_font("mono-a"))
    perfect = np.where(mask, 0.0, 1.0)[None].repeat(3, axis=0)
    assert pipeline.foreground_iou(perfect, mask) == 1.0
    assert pipeline.foreground_iou(np.ones((3, 64, 64)), mask) == 0.0
    half = perfect.copy()
    half[:, :, 32:] = 1.0
    expected = (mask[:, :32].sum()) / mask.sum()
    assert pipeline.foreground_iou(half, mask) == pytest.approx(expected)


def test_summarize_keeps_order_and_spread():
    rows = [pipeline.AblationRow(v, s, m, 0.0)
            for v, s, m in [(1.0, 0, 2.0), (0.0, 0, 1.0), (1.0, 1, 4.0)]]
    assert pipeline.summarize(rows) == {1.0: (3.0, 1.0), 0.0: (1.0, 0.0)}


def test_style_count_step_budget(monkeypatch):
    seen = []

    def fake_train(run, codec, images=None, progress=None, base=None):
        seen.append((run.style_image_count, run.epochs))
        return None

    monkeypatch.setattr(pipeline, "train", fake_train)
    monkeypatch.setattr(pipeline, "sample_images",
                        lambda *a, **k: np.random.default_rng(0).uniform(size=(2, 3, 8, 8)))
    cfg = RunConfig(batch_size=2, epochs=60)
    rows = pipeline.ablate_style_count(cfg, None, [2, 25], [0], steps=780)
    assert seen == [(2, 780), (25, 60)]
    assert [r.value for r in rows] == [2.0, 25.0]
    seen.clear()
    pipeline.ablate_style_count(cfg, None, [2, 25], [0])
    assert seen == [(2, 60), (25, 60)]
    seen.clear()
    pipeline.ablate_style_count(cfg, None, [3], [0], steps=780)
    assert seen == [(3, 390)]  # ceil(3 / 2) = 2 batches per epoch
    with pytest.raises(ArgumentError):
        pipeline.ablate_style_count(cfg, None, [2], [0], steps=0)
