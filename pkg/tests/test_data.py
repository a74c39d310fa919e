import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ielseg import data as dt
from ielseg.field import Field, LabelMask
from ielseg.oracles import laplacian_loops


def test_gen_synthetic_contract():
    assert len(dt.gen_synthetic(0, 16)) == 0
    a = dt.gen_synthetic(6, 32, classes=3, seed=11)
    b = dt.gen_synthetic(6, 32, classes=3, seed=11)
    for x, y in zip(a.images, b.images):
        assert x == y
    for x, y in zip(a.clean_masks, b.clean_masks):
        assert np.array_equal(x.ids, y.ids)
    for img, m in zip(a.images, a.clean_masks):
        assert img.channels == 3 and img.values.min() >= 0 and img.values.max() <= 1
        assert m.ids.min() >= 0 and m.ids.max() < 3
        assert m.ids.any()  # at least one shape
    c = dt.gen_synthetic(6, 32, classes=3, seed=12)
    assert not all(np.array_equal(x.ids, y.ids) for x, y in zip(a.clean_masks, c.clean_masks))
    with pytest.raises(ValueError):
        dt.gen_synthetic(1, 30)


def test_sample_does_not_depend_on_n():
    small = dt.gen_synthetic(2, 16, seed=3)
    big = dt.gen_synthetic(5, 16, seed=3)
    assert small.images[1] == big.images[1]


def test_gen_splits():
    tr, va = dt.gen_splits(4, 2, 16, seed=1)
    assert (len(tr), len(va), tr.split, va.split) == (4, 2, "train", "val")
    full = dt.gen_synthetic(6, 16, seed=1)
    assert va.images[0] == full.images[4]


def test_dataset_validation():
    img = Field(np.zeros((3, 4, 4)))
    m = LabelMask(np.zeros((4, 4), int), 2)
    with pytest.raises(ValueError):
        dt.Dataset([img], [m], [m], split="val")
    with pytest.raises(ValueError):
        dt.Dataset([img], [])
    with pytest.raises(ValueError):
        dt.Dataset([img], [LabelMask(np.zeros((4, 5), int), 2)])
    ds = dt.Dataset([img], [m])
    assert ds.targets is ds.clean_masks


def test_window_count_arithmetic():
    # floor(0.2 * 4096 / 9) = floor(91.02) = 91
    spec = dt.NoiseSpec(3, 0.2, 2, 0)
    assert dt.window_count(64, 64, spec) == 91
    m = LabelMask(np.zeros((64, 64), int), 2)
    noisy = dt.inject_window_noise(m, spec)
    # all-background mask: changed pixels come in whole windows relabelled to 1
    changed = np.count_nonzero(noisy.ids)
    assert changed % 9 == 0 and changed <= 91 * 9


def test_paper_noise_settings_have_valid_counts():
    for k, p in [(2, 0.10), (3, 0.20), (5, 0.10), (1, 0.50)]:
        spec = dt.NoiseSpec(k, p, 2, 0)
        m = LabelMask(np.zeros((64, 64), int), 2)
        dt.inject_window_noise(m, spec)
        assert dt.window_count(64, 64, spec) == int(p * 4096 / k**2 + 1e-9)


def test_noise_zero_fraction_and_errors():
    m = LabelMask(np.random.default_rng(0).integers(0, 2, (9, 9)), 2)
    assert np.array_equal(dt.inject_window_noise(m, dt.NoiseSpec(3, 0.0)).ids, m.ids)
    with pytest.raises(ValueError):
        dt.inject_window_noise(m, dt.NoiseSpec(10, 0.1))
    with pytest.raises(ValueError):
        # 9x10 has 9 aligned 3x3 windows, p=1 asks for floor(90/9)=10
        dt.inject_window_noise(LabelMask(np.zeros((9, 10), int), 2), dt.NoiseSpec(3, 1.0))
    with pytest.raises(ValueError):
        dt.NoiseSpec(0, 0.1)
    with pytest.raises(ValueError):
        dt.NoiseSpec(3, 1.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 40), st.integers(4, 40), st.integers(1, 4), st.floats(0, 0.6), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_noise_touches_disjoint_aligned_windows(rows, cols, k, p, classes, seed):
    base = np.random.default_rng(seed).integers(0, classes, (rows, cols))
    m = LabelMask(base, classes)
    spec = dt.NoiseSpec(k, p, classes, seed)
    if dt.window_count(rows, cols, spec) > (rows // k) * (cols // k):
        with pytest.raises(ValueError):
            dt.inject_window_noise(m, spec)
        return
    noisy = dt.inject_window_noise(m, spec)
    again = dt.inject_window_noise(m, spec)
    assert np.array_equal(noisy.ids, again.ids)
    diff = noisy.ids != base
    assert diff.sum() <= dt.window_count(rows, cols, spec) * k * k
    # every changed pixel sits in an aligned window that is constant after noise
    for r, c in zip(*np.nonzero(diff)):
        r0, c0 = (r // k) * k, (c // k) * k
        assert r0 + k <= rows and c0 + k <= cols
        win = noisy.ids[r0:r0 + k, c0:c0 + k]
        assert (win == win[0, 0]).all()


def test_noisify_per_image_seeds():
    ds = dt.gen_synthetic(3, 16, seed=2)
    a = dt.noisify(ds, dt.NoiseSpec(2, 0.3, 2, 5))
    b = dt.noisify(ds, dt.NoiseSpec(2, 0.3, 2, 5))
    assert all(np.array_equal(x.ids, y.ids) for x, y in zip(a.noisy_masks, b.noisy_masks))
    assert a.targets is a.noisy_masks
    assert a.clean_masks is ds.clean_masks


def _heat_oracle(u, dt_, n):
    for _ in range(n):
        u = u + dt_ * laplacian_loops(u)
    return u


def test_preprocess_removes_island_and_thin_line():
    island = np.zeros((9, 9), int)
    island[4, 4] = 1
    # centre of a diffused delta: 1 -> 0.6 -> 0.4 after two dt=0.1 steps
    assert _heat_oracle(island.astype(float), 0.1, 2)[4, 4] == pytest.approx(0.4)
    assert np.array_equal(dt.preprocess_labels(LabelMask(island, 2), 0, 0.1).ids, island)
    assert dt.preprocess_labels(LabelMask(island, 2), 1, 0.1).ids[4, 4] == 1
    assert not dt.preprocess_labels(LabelMask(island, 2), 2, 0.1).ids.any()
    line = np.zeros((9, 12), int)
    line[4, :] = 1
    assert _heat_oracle(line.astype(float), 0.1, 10)[4, 6] < 0.5
    assert not dt.preprocess_labels(LabelMask(line, 2), 10, 0.1).ids.any()


def test_postprocess():
    logits = np.zeros((2, 8, 8))
    logits[0] = 1.0
    logits[:, 2, 3] = [0.0, 1.5]  # isolated flip
    assert dt.postprocess_predictions(Field(logits), 0, 0.1).ids[2, 3] == 1
    assert not dt.postprocess_predictions(Field(logits), 3, 0.2).ids.any()
    ties = dt.postprocess_predictions(Field(np.ones((3, 4, 4))), 2, 0.1)
    assert not ties.ids.any() and ties.classes == 3
