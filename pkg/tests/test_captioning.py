import numpy as np
import pytest

from semaug.backends import FakeCaptioner, FakeScorer
from semaug.captioning import (
    CaptionCache,
    SamplingConfig,
    ScoredCaptionSet,
    caption_record,
    generate_captions,
    score_captions,
    select_caption,
)
from semaug.errors import EmptySet, UnsupportedMode, ValidationError

CONFIGS = (SamplingConfig(mode="beam", count=4), SamplingConfig(mode="nucleus", count=6))


@pytest.fixture
def image(rng):
    return rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)


def test_generate_pools_configs_in_order(image):
    pairs = generate_captions(image, CONFIGS, 3, FakeCaptioner(), hint="cat")
    assert [m for _, m in pairs] == ["beam"] * 4 + ["nucleus"] * 6
    assert pairs == generate_captions(image, CONFIGS, 3, FakeCaptioner(), hint="cat")


def test_invalid_configs_rejected_before_any_call(image):
    calls = []

    class Spy(FakeCaptioner):
        def caption(self, *a, **k):
            calls.append(1)
            return super().caption(*a, **k)

    with pytest.raises(UnsupportedMode):
        generate_captions(image, [SamplingConfig(mode="beam"), SamplingConfig(mode="greedy")], 0, Spy())
    with pytest.raises(ValidationError):
        generate_captions(image, [SamplingConfig(mode="nucleus", count=0)], 0, Spy())
    with pytest.raises(ValidationError):
        generate_captions(image, [SamplingConfig(mode="nucleus", nucleus_p=1.5)], 0, Spy())
    assert calls == []


def test_score_rejects_empty(image):
    with pytest.raises(EmptySet):
        score_captions(image, [], FakeScorer())


def test_clip_filter_takes_first_maximum():
    assert select_caption([0.2, 0.7, 0.7, 0.1], "clip_filter") == 1


def test_random_selection_is_seeded_and_respects_pool():
    picks = {select_caption([0.1] * 10, "random", seed=s, pool=[3, 4, 5]) for s in range(50)}
    assert picks == {3, 4, 5}
    assert select_caption([0.1] * 10, "random", seed=9) == select_caption([0.1] * 10, "random", seed=9)
    with pytest.raises(EmptySet):
        select_caption([], "random")


def test_caption_record_clip_filter_picks_max(image):
    scored = caption_record("r", image, CONFIGS, FakeCaptioner(), FakeScorer(), strategy="clip_filter", seed=1,
                            hint="cat")
    sims = [c.similarity for c in scored.captions]
    assert scored.s_star == max(sims)
    assert scored.chosen_index == sims.index(max(sims))


def test_caption_record_random_uses_nucleus_pool(image):
    for seed in range(10):
        scored = caption_record("r", image, CONFIGS, FakeCaptioner(), FakeScorer(), strategy="random", seed=seed)
        assert scored.captions[scored.chosen_index].mode == "nucleus"


def test_cache_round_trip(image, tmp_path):
    scored = caption_record("r", image, CONFIGS, FakeCaptioner(), FakeScorer(), seed=4)
    cache = CaptionCache.load(tmp_path / "c.jsonl", "fp")
    cache.put(scored)
    cache.save()
    again = CaptionCache.load(tmp_path / "c.jsonl", "fp")
    assert again.get("r", 4) == scored
    assert again.get("r", 5) is None
    assert CaptionCache.load(tmp_path / "c.jsonl", "other").get("r", 4) is None
    assert ScoredCaptionSet.from_cache_line(scored.to_cache_line()) == scored
