import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tiny import tiny_config
from fedreid.data import generate_dataset
from fedreid.errors import ProtocolError
from fedreid.evaluation import (EmbeddingIndex, cmc_map, embed, evaluate, rank, rank_all, write_metrics_csv,
                                write_rankings)
from fedreid.training import build_model


def test_ap_five_sixths():
    res = cmc_map([np.array([0, 1, 2])], [7], [7, 3, 7])
    assert res.map == pytest.approx(5 / 6, abs=1e-12)
    assert res.cmc.tolist() == [1.0, 1.0, 1.0]


def test_first_hit_at_rank_two():
    res = cmc_map([np.array([1, 0, 2])], [7], [7, 3, 7])
    assert res.cmc.tolist() == [0.0, 1.0, 1.0]
    assert res.map == pytest.approx((1 / 2 + 2 / 3) / 2)


def _instance(seed):
    rng = np.random.default_rng(seed)
    nq, ng, nid = rng.integers(1, 8), rng.integers(2, 25), rng.integers(1, 6)
    gids = rng.integers(0, nid, ng)
    qids = rng.choice(gids, nq)
    rankings = [rng.permutation(ng) for _ in range(nq)]
    return rankings, qids, gids


@pytest.mark.parametrize("seed", range(100))
def test_cmc_map_matches_brute_force(seed):
    rankings, qids, gids = _instance(seed)
    res = cmc_map(rankings, qids, gids)
    cmc, m = oracles.cmc_map(rankings, qids, gids)
    assert abs(res.map - m) <= 1e-9
    np.testing.assert_allclose(res.cmc, cmc, atol=1e-9, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_cmc_is_monotone_and_bounded(seed):
    res = cmc_map(*_instance(seed))
    assert np.all(np.diff(res.cmc) >= 0)
    assert res.cmc[-1] == 1.0 and 0 < res.map <= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_invariant_to_gallery_permutation(seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(3, 6))
    g = rng.normal(size=(9, 6))
    qids, gids = np.array([0, 1, 2]), np.array([0, 1, 2] * 3)
    base = cmc_map(rank_all(EmbeddingIndex(q, qids, qids), EmbeddingIndex(g, gids, gids)), qids, gids)
    perm = rng.permutation(9)
    moved = cmc_map(rank_all(EmbeddingIndex(q, qids, qids), EmbeddingIndex(g[perm], gids[perm], gids[perm])),
                    qids, gids[perm])
    assert moved.map == pytest.approx(base.map, abs=1e-12)
    np.testing.assert_allclose(moved.cmc, base.cmc)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100))
def test_ranking_invariant_to_positive_scaling(seed, scale):
    rng = np.random.default_rng(seed)
    q, g = rng.normal(size=8), rng.normal(size=(12, 8))
    assert rank(q * scale, g).tolist() == rank(q, g).tolist()
    assert rank(q, g * scale).tolist() == rank(q, g).tolist()


@pytest.mark.parametrize("seed", range(10))
def test_rank_matches_exhaustive_oracle(seed):
    rng = np.random.default_rng(seed)
    q, g = rng.normal(size=6), rng.normal(size=(15, 6))
    assert rank(q, g).tolist() == oracles.exhaustive_rank(q, g)


def test_ties_keep_gallery_order():
    g = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    assert rank(np.array([1.0, 0.0]), g).tolist() == [0, 2, 1]


def test_query_without_match_names_identity():
    with pytest.raises(ProtocolError, match="identity 9"):
        cmc_map([np.array([0, 1])], [9], [1, 2])


def test_cross_camera_only_drops_same_camera_matches():
    gids, gcams = np.array([5, 5, 3]), np.array([0, 1, 0])
    order = np.array([0, 2, 1])
    plain = cmc_map([order], [5], gids, [0], gcams)
    cross = cmc_map([order], [5], gids, [0], gcams, cross_camera_only=True)
    assert plain.rank(1) == 1.0
    assert cross.rankings[0].tolist() == [2, 1]
    assert cross.rank(1) == 0.0 and cross.map == pytest.approx(0.5)
    with pytest.raises(ProtocolError):
        cmc_map([np.array([0, 1])], [5], [5, 5], [0], [0, 0], cross_camera_only=True)


def _embed_model():
    cfg = tiny_config()
    model = build_model(cfg, 6)
    return model, generate_dataset(2, 3, seed=1)


def test_embeddings_ignore_fdm_parameters():
    model, samples = _embed_model()
    before = embed(samples, model).vectors.copy()
    rng = np.random.default_rng(0)
    for p in model.fdm.parameters():
        p.data = rng.normal(size=p.shape).astype(np.float32) * 10
    assert embed(samples, model).vectors.tobytes() == before.tobytes()
    del model.fdm
    assert embed(samples, model).vectors.tobytes() == before.tobytes()


def test_embedding_width_and_chunking():
    model, samples = _embed_model()
    a = embed(samples, model, chunk=2)
    b = embed(samples, model, chunk=64)
    assert a.vectors.shape == (6, 4 * 16)
    np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-6)


def test_evaluate_and_csv_outputs(tmp_path):
    model, samples = _embed_model()
    query, gallery = samples[0::2], samples[1::2]
    res = evaluate(model, query, gallery)
    write_metrics_csv(tmp_path / "m.csv", res.metrics())
    write_rankings(tmp_path / "r.csv", res, [s.identity for s in query], [s.identity for s in gallery])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "metric,value" and [l.split(",")[0] for l in lines[1:]] == ["rank1", "rank5", "rank10", "map"]
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 1 + len(query)
