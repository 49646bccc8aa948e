import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tripletdiff.data import (GRID, AnnotatedFrame, Dataset, ToyWorldConfig, Triplet, Vocabulary, contact_sheet,
                              downsample, frame_caption, load_annotations, load_dataset_dir, make_toy_dataset,
                              oracle_classify, oracle_classify_batch, parse_caption, placement_box,
                              render_clean, render_toy, save_dataset_dir, triplet_caption, triplet_counts,
                              zipf_probabilities)
from tripletdiff.errors import ConfigError, FormatError, LookupFailure

VOCAB = Vocabulary(("grasper", "hook", "clipper"), ("retract", "dissect", "clip", "null_verb"),
                   ("gallbladder", "liver", "cystic_duct", "null_target"), "test")


def test_caption_examples():
    assert triplet_caption(Triplet(2, 2, 2), VOCAB) == "clipper clip cystic duct"
    assert triplet_caption(Triplet(1, 1, 1), VOCAB) == "hook dissect liver"
    assert triplet_caption(Triplet(0, 3, 3), VOCAB) == "grasper"
    with pytest.raises(LookupFailure):
        triplet_caption(Triplet(7, 0, 0), VOCAB)


def test_frame_caption_join_and_split():
    img = np.zeros((4, 4, 3))
    one = AnnotatedFrame(img, (Triplet(1, 1, 1),), "a")
    two = AnnotatedFrame(img, (Triplet(0, 0, 0), Triplet(1, 1, 1)), "b")
    three = (Triplet(0, 0, 0), Triplet(1, 1, 1), Triplet(2, 2, 2))
    assert frame_caption(one, VOCAB) == "hook dissect liver"
    assert frame_caption(two, VOCAB) == "grasper retract gallbladder. hook dissect liver"
    cap = frame_caption(AnnotatedFrame(img, three, "c"), VOCAB)
    assert cap.split(". ") == [triplet_caption(t, VOCAB) for t in three]


def test_frame_invariants():
    img = np.zeros((4, 4, 3))
    with pytest.raises(FormatError):
        AnnotatedFrame(img, (), "empty")
    with pytest.raises(FormatError):
        AnnotatedFrame(img, (Triplet(0, 0, 0), Triplet(0, 0, 0)), "dup")


def test_load_fixture_field_by_field(mini_cholec):
    ds = load_annotations(mini_cholec / "labels" / "VID01.json", mini_cholec / "videos" / "VID01", 8)
    assert ds.n == 3 and ds.dropped == 1 and ds.provenance == "ingested"
    assert [f.frame_id for f in ds.frames] == ["0", "1", "2"]
    assert [tuple(t.ids for t in f.triplets) for f in ds.frames] == [
        ((0, 0, 0),), ((1, 1, 1), (2, 2, 2)), ((0, 3, 3),)]
    assert ds.captions() == ["grasper retract gallbladder", "hook dissect liver. clipper clip cystic duct",
                             "grasper"]
    assert ds.frames[2].triplets[0].null_flags(ds.vocab) == (True, True)
    assert ds.images().shape == (3, 8, 8, 3) and 0 <= ds.images().min() and ds.images().max() <= 1
    assert np.allclose(ds.frames[0].image[5, 5], np.array([200, 40, 40]) / 255)


def test_single_frame_annotation(tmp_path, mini_cholec):
    doc = json.loads((mini_cholec / "labels" / "VID01.json").read_text())
    doc["annotations"] = {"0": [[1]]}
    (tmp_path / "a.json").write_text(json.dumps(doc))
    ds = load_annotations(tmp_path / "a.json", mini_cholec / "videos" / "VID01", 8)
    assert ds.n == 1 and ds.frames[0].triplets == (Triplet(0, 0, 0),)


def test_undefined_triplet_id_is_reported(tmp_path, mini_cholec):
    doc = json.loads((mini_cholec / "labels" / "VID01.json").read_text())
    doc["annotations"]["1"] = [[999]]
    (tmp_path / "a.json").write_text(json.dumps(doc))
    with pytest.raises(LookupFailure, match="999") as e:
        load_annotations(tmp_path / "a.json", mini_cholec / "videos" / "VID01", 8)
    assert "frame 1" in str(e.value)


@pytest.mark.parametrize("drop", ["categories", "annotations"])
def test_missing_key_is_named(tmp_path, mini_cholec, drop):
    doc = json.loads((mini_cholec / "labels" / "VID01.json").read_text())
    del doc[drop]
    (tmp_path / "a.json").write_text(json.dumps(doc))
    with pytest.raises(FormatError, match=drop):
        load_annotations(tmp_path / "a.json", mini_cholec / "videos" / "VID01", 8)


def test_ingestion_round_trip(tmp_path, mini_cholec):
    ds = load_dataset_dir(mini_cholec, 8)
    save_dataset_dir(ds, tmp_path)
    again = load_dataset_dir(tmp_path, 8)
    assert again.vocab == ds.vocab and again.triplet_map == ds.triplet_map
    for a, b in zip(ds.frames, again.frames):
        assert (a.frame_id, a.source_video, a.triplets) == (b.frame_id, b.source_video, b.triplets)
        np.testing.assert_array_equal(a.image, b.image)


def test_toy_round_trip_every_triplet():
    cfg = ToyWorldConfig(noise_level=0.0)
    for t in cfg.vocab().all_triplets():
        r = oracle_classify(render_toy(t, 0, cfg), cfg)
        assert r.triplet.ids == t.ids and r.confidence > 0.99


def test_render_deterministic():
    cfg = ToyWorldConfig()
    t = Triplet(1, 2, 3)
    np.testing.assert_array_equal(render_toy(t, 5, cfg), render_toy(t, 5, cfg))
    assert not np.array_equal(render_toy(t, 5, cfg), render_toy(t, 6, cfg))


def test_verb_changes_only_placement_region():
    size = 32
    a, b = render_clean(Triplet(1, 0, 2), size), render_clean(Triplet(1, 2, 2), size)
    mask = np.zeros((size, size), bool)
    for v in (0, 2):
        ys, xs = placement_box(v, size)
        mask[ys, xs] = True
    diff = np.any(a != b, axis=-1)
    assert diff.any() and not diff[~mask].any()


def test_oracle_noise_images_fall_below_reject_threshold():
    cfg = ToyWorldConfig()
    noise = np.random.default_rng(0).random((1000, 32, 32, 3))
    conf = np.array([r.confidence for r in oracle_classify_batch(noise, cfg)])
    assert conf.max() < 0.5


def test_oracle_accuracy_at_noise_005():
    cfg = ToyWorldConfig(noise_level=0.05)
    trips = cfg.vocab().all_triplets()
    rng = np.random.default_rng(1)
    chosen = [trips[i] for i in rng.integers(0, len(trips), 1000)]
    imgs = np.stack([render_toy(t, i, cfg) for i, t in enumerate(chosen)])
    res = oracle_classify_batch(imgs, cfg)
    acc = np.mean([r.triplet.ids == t.ids for r, t in zip(res, chosen)])
    assert acc >= 0.99


def test_oracle_works_at_base_resolution():
    cfg = ToyWorldConfig()
    t = Triplet(3, 1, 0)
    low = downsample(render_toy(t, 0, cfg), 2)
    assert low.shape[0] == GRID and oracle_classify(low, cfg).triplet.ids == t.ids


def test_texture_vanishes_at_base_grid():
    cfg = ToyWorldConfig(noise_level=0.0)
    for t in cfg.vocab().all_triplets()[::7]:
        np.testing.assert_allclose(downsample(render_toy(t, 0, cfg), 2), render_clean(t, GRID), atol=1e-6)


def test_toy_uniform_counts():
    ds = make_toy_dataset(ToyWorldConfig(skew=0.0, image_size=16), 4800)
    counts = np.array(list(triplet_counts(ds).values()))
    p = 1 / 48
    assert len(counts) == 48 and np.all(np.abs(counts - 100) < 4 * np.sqrt(4800 * p * (1 - p)))


def test_toy_skew_ratio_and_zipf_fit():
    n = 10000
    ds = make_toy_dataset(ToyWorldConfig(skew=1.2, image_size=16), n)
    counts = triplet_counts(ds)
    trips = ds.vocab.all_triplets()
    c = np.array([counts.get(t.ids, 0) for t in trips])
    assert c.max() > 10 * c.min()
    p = zipf_probabilities(48, 1.2)
    se = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(c - n * p) < 3 * se + 1)


def test_toy_dataset_deterministic():
    cfg = ToyWorldConfig(image_size=16, seed=3)
    a, b = make_toy_dataset(cfg, 50), make_toy_dataset(cfg, 50)
    assert a.captions() == b.captions()
    assert a.images().tobytes() == b.images().tobytes()


@pytest.mark.parametrize("kwargs", [{"image_size": 8}, {"n_instruments": 1}, {"skew": -1.0}, {"image_size": 24}])
def test_toy_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ToyWorldConfig(**kwargs)


@given(st.integers(0, 3), st.integers(0, 2), st.integers(0, 3))
def test_parse_caption_inverts_triplet_caption(i, v, t):
    vocab = ToyWorldConfig().vocab()
    trip = Triplet(i, v, t)
    assert parse_caption(triplet_caption(trip, vocab), vocab).ids == trip.ids


@given(st.integers(1, 4), st.integers(1, 6))
def test_downsample_preserves_mean(factor, cells):
    rng = np.random.default_rng(factor * 10 + cells)
    img = rng.random((factor * cells, factor * cells, 3))
    out = downsample(img, factor)
    assert out.shape == (cells, cells, 3)
    assert np.isclose(out.mean(), img.mean())


def test_contact_sheet_layout():
    imgs = np.zeros((5, 4, 4, 3))
    sheet = contact_sheet(imgs, ncol=3)
    assert sheet.shape == (2 * 5 + 1, 3 * 5 + 1, 3)
