import numpy as np
import pytest
from scipy.stats import binom, chisquare

from maskvc.errors import ConfigError, ShapeMismatchError
from maskvc.features import MelSpectrogram
from maskvc.masks import (ALL_ONES_POLICY, MaskPolicy, all_ones_mask, apply_mask, masked_fraction, sample_mask,
                          sample_mask_batch)
from maskvc.presets import ABLATION_MATRICES
from maskvc.util import round_half_up

DRAWS = 1000
DIMS = (80, 64)


def zero_frames(mask):
    return np.flatnonzero(np.all(mask.values == 0, axis=0))


@pytest.mark.parametrize('label', sorted({p for rows in ABLATION_MATRICES.values() for _, p, _ in rows}))
def test_labels_round_trip(label):
    assert MaskPolicy.parse(label).label == label


def test_parse_modes():
    assert MaskPolicy.parse('FIF 25') == MaskPolicy('FIF', 'constant', 25.0)
    assert MaskPolicy.parse('FIP 0-50') == MaskPolicy('FIP', 'uniform', 50.0)
    assert MaskPolicy() == MaskPolicy.parse('FIF 0-50')
    with pytest.raises(ConfigError):
        MaskPolicy.parse('XYZ 10')
    with pytest.raises(ConfigError):
        MaskPolicy('FIF', 'constant', 120.0)


@pytest.mark.parametrize('label', ['FIF 0-50', 'FIF_NS 0-50', 'FIS 0-50', 'FIP 0-50', 'FIF 25'])
def test_masks_are_binary(label):
    rng = np.random.default_rng(0)
    policy = MaskPolicy.parse(label)
    for _ in range(DRAWS):
        m = sample_mask(policy, DIMS, rng)
        assert m.shape == DIMS
        assert np.all((m.values == 0) | (m.values == 1))


def test_fif_is_one_contiguous_block_of_exact_size():
    rng = np.random.default_rng(1)
    policy = MaskPolicy.parse('FIF 0-50')
    for _ in range(DRAWS):
        m = sample_mask(policy, DIMS, rng)
        frames = zero_frames(m)
        k = round_half_up(DIMS[1] * m.seed_trace['size_percent'] / 100.0)
        assert len(frames) == k
        assert 0.0 <= m.seed_trace['size_percent'] <= 50.0
        if k:
            assert np.array_equal(frames, np.arange(frames[0], frames[0] + k))
        # whole columns only
        assert np.all(m.values.min(axis=0) == m.values.max(axis=0))


def test_fif_constant_size():
    rng = np.random.default_rng(2)
    for _ in range(DRAWS):
        m = sample_mask(MaskPolicy.parse('FIF 25'), DIMS, rng)
        assert len(zero_frames(m)) == 16


def test_size_rounds_half_up():
    m = sample_mask(MaskPolicy.parse('FIF 25'), (4, 10), np.random.default_rng(0))
    assert len(zero_frames(m)) == 3


def test_fif_start_covers_every_position():
    rng = np.random.default_rng(3)
    starts = {int(sample_mask(MaskPolicy.parse('FIF 50'), (4, 10), rng).seed_trace['start']) for _ in range(DRAWS)}
    assert starts == set(range(6))


def test_fif_zero_is_all_ones():
    rng = np.random.default_rng(4)
    for _ in range(DRAWS):
        assert np.all(sample_mask(MaskPolicy.parse('FIF 0'), DIMS, rng).values == 1.0)
    assert np.all(all_ones_mask(DIMS).values == 1.0)
    assert all_ones_mask(DIMS).policy == ALL_ONES_POLICY


def test_fif_ns_drops_exact_count_of_whole_frames():
    rng = np.random.default_rng(5)
    for _ in range(DRAWS):
        m = sample_mask(MaskPolicy.parse('FIF_NS 0-50'), DIMS, rng)
        k = round_half_up(DIMS[1] * m.seed_trace['size_percent'] / 100.0)
        assert len(zero_frames(m)) == k
        assert np.all(m.values.min(axis=0) == m.values.max(axis=0))


def test_fis_is_one_contiguous_band():
    rng = np.random.default_rng(6)
    for _ in range(DRAWS):
        m = sample_mask(MaskPolicy.parse('FIS 0-50'), DIMS, rng)
        rows = np.flatnonzero(np.all(m.values == 0, axis=1))
        k = round_half_up(DIMS[0] * m.seed_trace['size_percent'] / 100.0)
        assert len(rows) == k
        if k:
            assert np.array_equal(rows, np.arange(rows[0], rows[0] + k))
        assert np.all(m.values.min(axis=1) == m.values.max(axis=1))


def test_fip_drop_rate():
    rng = np.random.default_rng(7)
    fractions = [masked_fraction(sample_mask(MaskPolicy.parse('FIP 40'), DIMS, rng)) for _ in range(DRAWS)]
    assert np.mean(fractions) == pytest.approx(0.4, abs=0.005)


def test_uniform_sizes_spread_over_range():
    rng = np.random.default_rng(8)
    sizes = [sample_mask(MaskPolicy.parse('FIF 0-50'), DIMS, rng).seed_trace['size_percent'] for _ in range(DRAWS)]
    assert min(sizes) < 5.0 and max(sizes) > 45.0
    assert np.mean(sizes) == pytest.approx(25.0, abs=1.5)


def test_sampling_is_deterministic():
    for label in ('FIF 0-50', 'FIF_NS 0-50', 'FIS 0-50', 'FIP 0-50'):
        a = sample_mask_batch(MaskPolicy.parse(label), DIMS, np.random.default_rng(9), 5)
        b = sample_mask_batch(MaskPolicy.parse(label), DIMS, np.random.default_rng(9), 5)
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))


def test_apply_mask():
    mel = MelSpectrogram(values=np.random.default_rng(0).normal(size=DIMS))
    assert np.array_equal(apply_mask(mel, all_ones_mask(DIMS)).values, mel.values)
    m = sample_mask(MaskPolicy.parse('FIF 25'), DIMS, np.random.default_rng(1))
    masked = apply_mask(mel, m)
    assert np.all(masked.values[:, zero_frames(m)] == 0)
    assert masked.source_mask is m
    with pytest.raises(ShapeMismatchError):
        apply_mask(mel, all_ones_mask((80, 63)))


def test_bad_dims():
    with pytest.raises(ShapeMismatchError):
        sample_mask(MaskPolicy(), (0, 10), np.random.default_rng(0))


def test_masking_twice_changes_nothing():
    mel = MelSpectrogram(values=np.random.default_rng(10).normal(size=DIMS))
    for label in ('FIF 0-50', 'FIF_NS 0-50', 'FIS 0-50', 'FIP 0-50'):
        m = sample_mask(MaskPolicy.parse(label), DIMS, np.random.default_rng(11))
        once = apply_mask(mel, m)
        assert np.array_equal(apply_mask(once.values, m).values, once.values)
        assert np.array_equal(apply_mask(once, m).values, once.values)


@pytest.mark.parametrize('label', ['FIF 25', 'FIF_NS 25', 'FIS 25', 'FIP 25', 'FIF 0-50'])
def test_seeds_give_different_masks(label):
    policy = MaskPolicy.parse(label)
    drawn = {sample_mask(policy, DIMS, np.random.default_rng(seed)).values.tobytes() for seed in range(10)}
    assert len(drawn) >= 5


def test_fif_uniform_mean_zero_frames():
    rng = np.random.default_rng(12)
    policy = MaskPolicy.parse('FIF 0-50')
    counts = [len(zero_frames(sample_mask(policy, (4, 64), rng))) for _ in range(10000)]
    assert np.mean(counts) == pytest.approx(16.0, abs=0.5)


def test_fip_counts_follow_the_binomial():
    n_cells, p, draws = 8 * 16, 0.4, 2000
    rng = np.random.default_rng(13)
    policy = MaskPolicy.parse('FIP 40')
    zeros = np.array([int((sample_mask(policy, (8, 16), rng).values == 0).sum()) for _ in range(draws)])
    middle = np.arange(42, 61)
    observed = [np.sum(zeros <= 41)] + [np.sum(zeros == k) for k in middle] + [np.sum(zeros >= 61)]
    expected = [binom.cdf(41, n_cells, p)] + list(binom.pmf(middle, n_cells, p)) + [binom.sf(60, n_cells, p)]
    _, p_value = chisquare(observed, np.array(expected) * draws)
    assert p_value > 1e-3
