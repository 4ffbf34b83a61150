import numpy as np
import pytest

from conftest import tiny_model_config
from core import diffcore as dc
from core.diffcore import DenseArray
from core.gradcheck import grad_check
from core.layers import Linear
from core.mpm import (
    MaskConfig, MpmEncoder, apply_mask, consistent_loss, encode_sequence, make_mask, sincos_2d, target_count,
)
from utils.errors import BadRatio, ConfigError, GridTooSmall, MissingP5, ShapeMismatch


# ------------------------------------------------------------
# Masken
# ------------------------------------------------------------
def test_random_mask_count():
    mask = make_mask(100, 0.15, "random", (10, 10), seed=7)
    assert len(mask.masked) == 15
    assert len(set(mask.masked)) == 15
    assert all(0 <= i < 100 for i in mask.masked)


def test_block_mask_is_4x4_rectangle():
    # setup
    mask = make_mask(64, 0.25, "block", (8, 8), seed=3)
    rows = sorted({i // 8 for i in mask.masked})
    cols = sorted({i % 8 for i in mask.masked})

    # check: zusammenhängend und vollständig gefüllt
    assert len(mask.masked) == 16
    assert rows == list(range(rows[0], rows[0] + 4))
    assert cols == list(range(cols[0], cols[0] + 4))
    assert set(mask.masked) == {r * 8 + c for r in rows for c in cols}


def test_grid_mask_is_regular_lattice():
    # setup: 25 % auf 8×8 → jede zweite Zelle in beiden Achsen
    mask = make_mask(64, 0.25, "grid", (8, 8), seed=0)
    rows = sorted({i // 8 for i in mask.masked})
    cols = sorted({i % 8 for i in mask.masked})

    # check
    assert len(mask.masked) == 16
    assert np.all(np.diff(rows) == 2) and np.all(np.diff(cols) == 2)
    assert set(mask.masked) == {r * 8 + c for r in rows for c in cols}


def test_zero_ratio_gives_empty_mask():
    mask = make_mask(16, 0.0, "random", (4, 4), seed=0)
    assert mask.empty
    assert make_mask(16, 0.0, "block", (4, 4), seed=0).empty


def test_mask_is_pure_function_of_seed():
    a = make_mask(100, 0.3, "random", (10, 10), seed=11)
    b = make_mask(100, 0.3, "random", (10, 10), seed=11)
    c = make_mask(100, 0.3, "random", (10, 10), seed=12)
    assert a == b
    assert a.masked != c.masked


def test_round_half_up():
    assert target_count(0.25, 2) == 1
    assert target_count(0.15, 10) == 2
    assert target_count(0.15, 4) == 1


def test_mask_errors():
    with pytest.raises(BadRatio):
        make_mask(16, 0.96, "random", (4, 4), seed=0)
    with pytest.raises(ShapeMismatch):
        make_mask(15, 0.1, "random", (4, 4), seed=0)
    with pytest.raises(ConfigError):
        make_mask(16, 0.1, "diagonal", (4, 4), seed=0)
    # 7 Zellen sind auf 4×4 weder Rechteck noch Gitter
    with pytest.raises(GridTooSmall):
        make_mask(16, 7 / 16, "block", (4, 4), seed=0)
    with pytest.raises(GridTooSmall):
        make_mask(16, 7 / 16, "grid", (4, 4), seed=0)


def test_mask_config_validation():
    with pytest.raises(BadRatio):
        MaskConfig(ratio=1.0).validate()
    with pytest.raises(ConfigError):
        MaskConfig(loss_variant="cosine").validate()


# ------------------------------------------------------------
# Maske anwenden
# ------------------------------------------------------------
def test_apply_empty_mask_is_identity():
    x = np.random.default_rng(0).normal(size=(3, 4))
    out = apply_mask(x, make_mask(4, 0.0, "random", (2, 2), seed=0))
    np.testing.assert_array_equal(out.data, x)


def test_apply_mask_zeroes_column():
    # setup
    mask = make_mask(3, 0.3, "random", (1, 3), seed=0)
    mask.masked = (0,)

    # check
    out = apply_mask(np.ones((2, 3)), mask)
    np.testing.assert_array_equal(out.data, [[0.0, 1.0, 1.0], [0.0, 1.0, 1.0]])


def test_apply_all_but_one():
    # setup
    x = np.random.default_rng(1).uniform(1.0, 2.0, size=(2, 4))
    mask = make_mask(4, 0.75, "random", (2, 2), seed=4)

    # check
    out = apply_mask(x, mask).data
    kept = [i for i in range(4) if i not in mask.masked]
    assert len(kept) == 1
    assert np.count_nonzero(np.any(out != 0.0, axis=0)) == 1
    np.testing.assert_array_equal(out[:, kept[0]], x[:, kept[0]])


def test_apply_mask_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        apply_mask(np.ones((2, 5)), make_mask(4, 0.5, "random", (2, 2), seed=0))


# ------------------------------------------------------------
# Encoder
# ------------------------------------------------------------
def test_encode_sequence_shape():
    # setup
    cfg = tiny_model_config(stage_channels=[2, 3, 4, 4, 8], hidden=16)
    enc = MpmEncoder(cfg, np.random.default_rng(0))

    # check
    out = encode_sequence(np.ones((8, 4)), enc, sincos_2d(2, 2, 16))
    assert out.shape == (4, 16)


def test_zero_layers_returns_projected_embedding():
    # setup
    cfg = tiny_model_config(mpm_layers=0)
    enc = MpmEncoder(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(cfg.c5, 4))
    pos = sincos_2d(2, 2, cfg.hidden)

    # check
    expected = x.T @ enc.proj.w.data + enc.proj.b.data + pos
    np.testing.assert_allclose(encode_sequence(x, enc, pos).data, expected, rtol=1e-12)


def test_positions_make_identical_inputs_distinct():
    # setup
    cfg = tiny_model_config()
    enc = MpmEncoder(cfg, np.random.default_rng(0))
    x = np.ones((cfg.c5, 4))

    # check
    out = encode_sequence(x, enc, sincos_2d(2, 2, cfg.hidden)).data
    assert not np.allclose(out[0], out[3])


def test_sincos_rows_are_distinct():
    pos = sincos_2d(3, 4, 8)
    assert pos.shape == (12, 8)
    assert len({tuple(np.round(r, 12)) for r in pos}) == 12


def test_encoder_gradient():
    # setup
    cfg = tiny_model_config()
    enc = MpmEncoder(cfg, np.random.default_rng(3))
    pos = sincos_2d(2, 2, cfg.hidden)

    # check
    err = grad_check(lambda x: dc.sum_(encode_sequence(x, enc, pos) ** 2) * 0.01,
                     np.random.default_rng(4).normal(size=(cfg.c5, 4)))
    assert err < 1e-4


# ------------------------------------------------------------
# Konsistenz-Loss
# ------------------------------------------------------------
def _mask(n, idx):
    mask = make_mask(n, 0.0, "random", (1, n), seed=0)
    mask.masked = tuple(idx)
    return mask


def test_identical_encodings_give_zero():
    fd = np.random.default_rng(0).normal(size=(5, 2))
    mask = _mask(5, [0, 2, 4])
    assert consistent_loss(fd, fd, mask, "masked_vectors").item() == 0.0
    assert consistent_loss(fd, fd, mask, "all_vectors").item() == 0.0


def test_masked_vectors_sum():
    # setup: Differenz aus Einsen an 3 maskierten Positionen, C_h = 2
    fd = np.zeros((5, 2))
    mask = _mask(5, [0, 2, 4])

    # check
    assert consistent_loss(fd + 1.0, fd, mask, "masked_vectors").item() == pytest.approx(6.0)
    assert consistent_loss(fd + 1.0, fd, mask, "all_vectors").item() == pytest.approx(10.0)


def test_masked_not_larger_than_all():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    mask = _mask(6, [1, 4])
    assert consistent_loss(a, b, mask, "masked_vectors").item() <= consistent_loss(a, b, mask, "all_vectors").item()


def test_empty_mask_gives_zero():
    rng = np.random.default_rng(6)
    assert consistent_loss(rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), _mask(4, [])).item() == 0.0


def test_target_is_detached_by_default():
    # setup
    fd_masked = DenseArray(np.ones((3, 2)), requires_grad=True)
    fd = DenseArray(np.zeros((3, 2)), requires_grad=True)

    # check
    consistent_loss(fd_masked, fd, _mask(3, [1])).backward()
    assert fd.grad is None
    np.testing.assert_allclose(fd_masked.grad[1], [2.0, 2.0])
    np.testing.assert_allclose(fd_masked.grad[0], [0.0, 0.0])


def test_target_grad_flag_lets_gradient_through():
    fd_masked = DenseArray(np.ones((3, 2)), requires_grad=True)
    fd = DenseArray(np.zeros((3, 2)), requires_grad=True)
    consistent_loss(fd_masked, fd, _mask(3, [1]), target_grad=True).backward()
    np.testing.assert_allclose(fd.grad[1], [-2.0, -2.0])


@pytest.mark.parametrize("seed", range(10))
def test_consistent_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    target = rng.normal(size=(6, 4))
    mask = make_mask(6, 0.5, "random", (2, 3), seed)
    assert grad_check(lambda x: consistent_loss(x, target, mask), rng.normal(size=(6, 4))) < 1e-4


def test_reconstruct_p5_variant():
    # setup
    rng = np.random.default_rng(0)
    readout = Linear(4, 3, rng)
    fd_masked = rng.normal(size=(5, 4))
    p5 = rng.normal(size=(3, 5))
    mask = _mask(5, [1, 3])

    # check
    pred = fd_masked @ readout.w.data + readout.b.data
    expected = ((pred[[1, 3]] - p5.T[[1, 3]]) ** 2).sum()
    got = consistent_loss(fd_masked, None, mask, "reconstruct_p5", p5_flat=p5, readout=readout)
    assert got.item() == pytest.approx(expected, rel=1e-12)


def test_reconstruct_p5_requires_p5():
    with pytest.raises(MissingP5):
        consistent_loss(np.ones((3, 2)), np.ones((3, 2)), _mask(3, [0]), "reconstruct_p5")
