import numpy as np
import pytest

import oracles
from fedreid.encoder import Encoder, EncoderConfig, part_pool, patchify
from fedreid.errors import ConfigurationError
from fedreid.numerics import Tensor

SMALL = EncoderConfig(depth=2, channels=32, heads=4)


@pytest.fixture(scope="module")
def enc():
    return Encoder(SMALL, np.random.default_rng(0))


def _images(n, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, 3, 64, 32)).astype(np.float32)


def test_token_shape(enc):
    assert SMALL.grid == (8, 4) and SMALL.tokens == 32
    assert enc(_images(2)).shape == (2, 33, 32)


def test_identical_images_identical_outputs(enc):
    x = _images(1)
    out = enc(np.concatenate([x, x])).data
    assert out[0].tobytes() == out[1].tobytes()


def test_batch_permutation_equivariance(enc):
    x = _images(3)
    a = enc(x).data
    b = enc(x[[2, 0, 1]]).data
    np.testing.assert_allclose(b, a[[2, 0, 1]], atol=1e-6)


def test_attention_rows_sum_to_one(enc):
    enc(_images(2))
    for blk in enc.blocks:
        w = blk.attn.last_weights.astype(np.float64)
        assert w.shape == (2, 4, 33, 33)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)


def test_patchify_row_major():
    img = np.arange(3 * 16 * 8, dtype=np.float32).reshape(1, 3, 16, 8)
    p = patchify(img, 8)
    assert p.shape == (1, 2, 192)
    np.testing.assert_array_equal(p[0, 1].reshape(3, 8, 8), img[0, :, 8:16, :])


def test_part_pool_constants():
    v = np.arange(5, dtype=np.float32)
    tokens = Tensor(np.broadcast_to(v, (1, 33, 5)).copy())
    np.testing.assert_array_equal(part_pool(tokens, 8).data[0], np.tile(v, (4, 1)))


def test_part_pool_grouping():
    # 8 token rows x 1 column: part 0 is the mean of rows 0-1
    tokens = np.zeros((1, 9, 2), np.float32)
    tokens[0, 1:, 0] = np.arange(8)
    out = part_pool(Tensor(tokens), 8).data[0]
    np.testing.assert_array_equal(out[:, 0], [0.5, 2.5, 4.5, 6.5])


def test_part_pool_matches_loop_oracle():
    rng = np.random.default_rng(1)
    tokens = rng.normal(size=(2, 33, 6)).astype(np.float32)
    out = part_pool(Tensor(tokens), 8).data
    for b in range(2):
        np.testing.assert_allclose(out[b], oracles.part_pool(tokens[b], 8, 4), atol=1e-6)


def test_part_pool_rejects_bad_rows():
    with pytest.raises(ConfigurationError):
        part_pool(Tensor(np.zeros((1, 7, 2))), 6)


@pytest.mark.parametrize("kw", [dict(channels=30, heads=4), dict(height=60), dict(height=32, patch=16)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        EncoderConfig(**kw).validate()


def test_wrong_image_size_rejected(enc):
    with pytest.raises(ConfigurationError):
        enc(np.zeros((1, 3, 32, 32), np.float32))


def test_unique_parameter_names(enc):
    names = list(enc.named_parameters())
    assert len(names) == len(set(names)) and all(n.startswith("encoder.") for n in names)
