import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from xaiseg import synthdata as D
from xaiseg.imageio import FormatError, read_attr, read_pgm, write_attr, write_pgm

seeds = st.integers(0, 2**31 - 1)
SMALL = dict(n_train=12, n_val=6, n_test=6, source_size=96)


def test_background_is_reproducible_and_in_range():
    a = D.gen_background(64, seed=3)
    assert np.array_equal(a, D.gen_background(64, seed=3))
    assert a.dtype == np.float32 and a.min() >= D.BG_RANGE[0] - 1 / 255 and a.max() <= D.BG_RANGE[1] + 1 / 255
    assert np.mean(a != D.gen_background(64, seed=4)) > 0.5


def test_quantize_snaps_to_byte_levels():
    q = D.quantize(np.linspace(0, 1, 50))
    assert np.array_equal(q * 255, np.round(q * 255)) and np.array_equal(D.quantize(q), q)


@settings(max_examples=30)
@given(seeds)
def test_each_crack_is_one_component_within_budget(seed):
    cfg = D.SynthConfig()
    m = D.gen_crack_path(64, cfg, seed=seed, n_cracks=1)
    assert len(oracles.components(m)) <= 1
    assert m.sum() <= cfg.max_area_fraction * m.size
    assert np.array_equal(m, D.gen_crack_path(64, cfg, seed=seed, n_cracks=1))


@settings(max_examples=30)
@given(seeds)
def test_multi_crack_masks_respect_the_area_budget(seed):
    m = D.gen_crack_path(64, seed=seed)
    assert m.sum() <= 0.05 * m.size


@settings(max_examples=20)
@given(seeds)
def test_crack_pixels_are_darker(seed):
    cfg = D.SynthConfig()
    bg = D.gen_background(64, cfg, seed)
    m = D.gen_crack_path(64, cfg, seed)
    img = D.render_sample(bg, m, cfg, seed)
    assert np.all(img[m] < bg[m]) and np.array_equal(img[~m], bg[~m])


def test_labels_masks_and_counts(corpus):
    cfg = D.SynthConfig()
    for name, n in zip(D.SPLITS, (cfg.n_train, cfg.n_val, cfg.n_test)):
        s = corpus[name]
        assert len(s) == n and s.images.shape == (n, 1, 64, 64)
        assert all(s.masks[i].any() for i in s.positives())
        assert not s.masks[s.negatives()].any()
        assert len(s.positives()) == round(cfg.positive_fraction * n)


def test_splits_use_disjoint_sources(corpus):
    ids = {k: set(v.source_ids) for k, v in corpus.items()}
    assert not (ids["train"] & ids["val"] or ids["train"] & ids["test"] or ids["val"] & ids["test"])


def test_dataset_is_deterministic_and_seeded():
    cfg = D.SynthConfig(**SMALL)
    a, b = D.gen_dataset(cfg), D.gen_dataset(cfg)
    assert all(np.array_equal(a[k].images, b[k].images) and np.array_equal(a[k].masks, b[k].masks) for k in a)
    c = D.gen_dataset(D.SynthConfig(**SMALL, seed=1))
    assert not np.array_equal(a["train"].images, c["train"].images)


def test_write_and_load_round_trip(tmp_path):
    cfg = D.SynthConfig(**SMALL)
    data = D.gen_dataset(cfg)
    manifest = D.write_dataset(data, tmp_path)
    rows = D.read_manifest(manifest)
    assert len(rows) == cfg.n_train + cfg.n_val + cfg.n_test
    assert tuple(rows[0]) == D.MANIFEST_FIELDS
    back = D.load_dataset(manifest)
    for k in D.SPLITS:
        assert np.array_equal(back[k].images, data[k].images)
        assert np.array_equal(back[k].masks, data[k].masks)
        assert np.array_equal(back[k].labels, data[k].labels) and back[k].source_ids == data[k].source_ids


@pytest.mark.parametrize("kw", [dict(n_train=0), dict(positive_fraction=1.0), dict(width_range=(0, 2)),
                                dict(source_size=32), dict(darkness=0.05)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        D.SynthConfig(**kw)


def test_hash_seed_is_stable_and_order_sensitive():
    assert D.hash_seed(1, 2, 3) == D.hash_seed(1, 2, 3) != D.hash_seed(3, 2, 1)


# ---------------------------------------------------------------------------
# image files


def test_pgm_round_trip_and_errors(tmp_path):
    img = np.arange(48, dtype=np.uint8).reshape(6, 8)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "bad.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "short.pgm")


def test_attr_round_trip(tmp_path):
    v = np.random.default_rng(0).normal(size=(5, 7))
    write_attr(tmp_path / "v.attr", v)
    assert np.array_equal(read_attr(tmp_path / "v.attr"), v.astype(read_attr(tmp_path / "v.attr").dtype))
