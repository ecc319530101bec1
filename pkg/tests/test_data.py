import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightmbn.data import (
    AugmentConfig,
    DatasetIndex,
    PKSampler,
    REAConfig,
    Sample,
    augment,
    load_dataset,
    load_split,
    parse_reid_filename,
    random_erasing,
    read_image,
    resize,
    sample_erase_rect,
    structural_similarity,
    synth_dataset,
    write_image,
    write_market_layout,
)
from lightmbn.errors import ConfigError, DataError, ParseError


@pytest.fixture(scope="module")
def synth():
    return synth_dataset(20, 12, 7)


# --- filenames and ingestion ----------------------------------------------------


@pytest.mark.parametrize("name,expected", [
    ("0002_c1s1_000451_03.jpg", (2, 1, "normal")),
    ("-1_c3s2_000001_00.jpg", (-1, 3, "distractor")),
    ("0000_c6s3_000001_00.jpg", (0, 6, "junk")),
])
def test_parse_filename(name, expected):
    assert parse_reid_filename(name) == expected


def test_parse_filename_rejects_garbage():
    with pytest.raises(ParseError):
        parse_reid_filename("holiday.jpg")


def _tiny_tree(root, train=((1, 1), (1, 2), (2, 1), (2, 3))):
    for d in ("bounding_box_train", "query", "bounding_box_test"):
        (root / d).mkdir(parents=True)
    img = np.random.default_rng(0).random((3, 16, 8)).astype(np.float32)
    for n, (pid, cam) in enumerate(train):
        write_image(root / "bounding_box_train" / f"{pid:04d}_c{cam}s1_{n:06d}_00.png", img)
    return img


def test_load_dataset_directory(tmp_path):
    _tiny_tree(tmp_path)
    index = load_dataset(tmp_path)
    assert len(index) == 4 and len(index.id_to_indices) == 2 and index.num_classes == 2


def test_load_dataset_empty_train(tmp_path):
    _tiny_tree(tmp_path, train=())
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_image_round_trip(tmp_path):
    img = _tiny_tree(tmp_path)
    back = read_image(next((tmp_path / "bounding_box_train").iterdir()))
    np.testing.assert_allclose(back, img, atol=1 / 255)
    with pytest.raises(DataError):
        read_image(tmp_path / "missing.png")


def _split(tmp_path, query=True, missing=False):
    img = np.zeros((3, 8, 4), dtype=np.float32)
    for n in range(4):
        write_image(tmp_path / f"{n}.png", img)
    entry = lambda n, pid, cam: {"file": f"{n}.png", "pid": pid, "camid": cam}  # noqa: E731
    spec = {"train": [entry(0, 1, 1), entry(1, 2, 1)],
            "query": [entry(2, 1, 2)] if query else [],
            "gallery": [entry(9 if missing else 3, 1, 3)]}
    path = tmp_path / "split.json"
    path.write_text(json.dumps(spec))
    return path


def test_split_roles(tmp_path):
    index = load_split(_split(tmp_path))
    assert [s.role for s in index.samples] == ["train", "train", "query", "gallery"]


def test_split_missing_file_named(tmp_path):
    with pytest.raises(DataError, match="9.png"):
        load_split(_split(tmp_path, missing=True))


def test_split_empty_query(tmp_path):
    with pytest.raises(DataError):
        load_split(_split(tmp_path, query=False))


def test_market_layout_round_trip(tmp_path):
    index = synth_dataset(3, 4, 1)
    write_market_layout(index, tmp_path)
    back = load_dataset(tmp_path)
    assert back.counts() == index.counts()


# --- synthetic data -------------------------------------------------------------


def test_synth_shape_and_determinism(synth):
    assert len(synth) == 240 and len({s.pid for s in synth.samples}) == 20
    again = synth_dataset(20, 12, 7)
    for a, b in zip(synth.samples[::37], again.samples[::37]):
        assert a.pid == b.pid and a.camid == b.camid and a.role == b.role
        np.testing.assert_array_equal(a.image, b.image)
    assert synth[0].image.shape == (3, 384, 128)


def test_synth_split_and_cameras(synth):
    c = synth.counts()
    assert c["train"] == {"images": 120, "ids": 20}
    assert c["query"]["ids"] == c["gallery"]["ids"] == 20
    for pid in range(1, 21):
        q = {s.camid for s in synth.samples if s.pid == pid and s.role == "query"}
        g = {s.camid for s in synth.samples if s.pid == pid and s.role == "gallery"}
        assert not q & g


def test_synth_identity_structure(synth):
    rng = np.random.default_rng(0)
    by_pid = {}
    for i, s in enumerate(synth.samples):
        by_pid.setdefault(s.pid, []).append(i)
    pids = sorted(by_pid)
    same, cross = [], []
    for _ in range(100):
        p = rng.choice(pids)
        a, b = rng.choice(by_pid[p], 2, replace=False)
        same.append(structural_similarity(synth.image(a), synth.image(b)))
        p1, p2 = rng.choice(pids, 2, replace=False)
        cross.append(structural_similarity(synth.image(by_pid[p1][0]), synth.image(by_pid[p2][0])))
    assert np.mean(same) > np.mean(cross)


@pytest.mark.parametrize("kw", [{"n_ids": 1}, {"per_id": 1}])
def test_synth_guards(kw):
    with pytest.raises(ConfigError):
        synth_dataset(**kw)


# --- augmentation ------------------------------------------------------------------


def test_resize_constant_and_shape():
    img = np.full((3, 384, 128), 0.25, dtype=np.float32)
    out = resize(img, (403, 134))
    assert out.shape == (3, 403, 134)
    np.testing.assert_allclose(out, 0.25, atol=1e-6)
    assert AugmentConfig().resized == (403, 134)


def test_augment_shapes_and_eval_determinism():
    img = np.random.default_rng(0).random((3, 384, 128)).astype(np.float32)
    cfg = AugmentConfig()
    a = augment(img, cfg, "train", np.random.default_rng(1))
    assert a.shape == (3, 384, 128) and a.dtype == np.float32
    np.testing.assert_array_equal(augment(img, cfg, "eval"), augment(img, cfg, "eval"))
    np.testing.assert_allclose(augment(np.full_like(img, 0.485), cfg, "eval")[0], 0.0, atol=1e-6)


def test_rea_p0_is_identity():
    img = np.random.default_rng(0).random((3, 20, 10))
    assert random_erasing(img, REAConfig(p=0.0), np.random.default_rng(0)) is img


def test_rea_forced_rect_fills_channel_mean():
    img = np.random.default_rng(1).random((3, 20, 10))
    out = random_erasing(img, REAConfig(p=1.0), np.random.default_rng(0), rect=(3, 2, 5, 4))
    mean = img.mean(axis=(1, 2))
    for c in range(3):
        assert np.sum(out[c] == mean[c]) == 20
        assert np.sum(out[c] != img[c]) == 20


def test_rea_frequency():
    cfg = REAConfig(p=0.5)
    rng = np.random.default_rng(0)
    img = np.random.default_rng(1).random((3, 48, 16))
    hits = sum(random_erasing(img, cfg, rng) is not img for _ in range(10_000))
    assert 0.48 <= hits / 10_000 <= 0.52


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([(384, 128), (24, 8), (100, 37)]))
def test_rea_area_bounds(seed, hw):
    rect = sample_erase_rect(*hw, REAConfig(), np.random.default_rng(seed))
    if rect is not None:
        top, left, eh, ew = rect
        assert 0.02 <= eh * ew / (hw[0] * hw[1]) <= 0.4
        assert top + eh <= hw[0] and left + ew <= hw[1]


# --- sampler -------------------------------------------------------------------------


def test_sampler_thousand_batches(synth):
    s = PKSampler(synth, 6, 8, seed=0)
    stream = s.stream()
    train = set(synth.positions("train"))
    for _ in range(1000):
        b = next(stream)
        assert len(b.indices) == 48
        counts = Counter(b.labels.tolist())
        assert len(counts) == 6 and set(counts.values()) == {8}
        assert set(b.indices.tolist()) <= train
        for i, y in zip(b.indices, b.labels):
            assert synth.label_of[synth[int(i)].pid] == y


def test_sampler_epoch_covers_every_identity(synth):
    s = PKSampler(synth, 6, 8, seed=3)
    for e in (1, 2, 7):
        seen = {int(y) for b in s.epoch(e) for y in b.labels}
        assert seen == set(range(20))
    assert s.batches_per_epoch() == 4


def test_sampler_replacement_for_small_identity():
    samples = [Sample(1, 1, "train", "normal", image=np.zeros((3, 2, 2))) for _ in range(3)]
    samples += [Sample(2, 1, "train", "normal", image=np.zeros((3, 2, 2))) for _ in range(9)]
    index = DatasetIndex(samples)
    b = PKSampler(index, 2, 8, seed=0).epoch(1)[0]
    first = [int(i) for i, y in zip(b.indices, b.labels) if y == index.label_of[1]]
    assert len(first) == 8 and set(first) <= {0, 1, 2}


def test_sampler_determinism_and_guard(synth):
    a = [b.indices for b in PKSampler(synth, seed=5).epoch(3)]
    b = [b.indices for b in PKSampler(synth, seed=5).epoch(3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ConfigError):
        PKSampler(synth_dataset(3, 4, 1), P=6)
