import numpy as np
import pytest

import rlt


def test_generate_and_oracle_agree():
    for relation in rlt.RELATIONS:
        e = rlt.generate(relation, seed=3)
        assert e["video"].shape == (8, 32, 32, 1)
        assert e["relation"] == relation
        assert relation in e["prompt"]
        assert rlt.relation_oracle(e["video"]) == relation


def test_generate_is_seeded():
    a = rlt.generate("orbit", seed=5)["video"]
    b = rlt.generate("orbit", seed=5)["video"]
    assert np.array_equal(a, b)


def test_masks_union():
    e = rlt.generate("collide", seed=1)
    assert np.array_equal(e["mask_r"], np.maximum(e["mask_s1"], e["mask_s2"]))


def test_temporal_consistency_identical_frames():
    frame = np.random.default_rng(0).random((1, 8, 8, 1))
    assert rlt.temporal_consistency(np.repeat(frame, 4, axis=0)) == 1.0


def test_svd_and_similarity_match_numpy():
    rng = np.random.default_rng(1)
    w = rng.standard_normal((12, 7))
    u, s, v = rlt.svd(w)
    np.testing.assert_allclose(s, np.linalg.svd(w, compute_uv=False), rtol=1e-10)
    np.testing.assert_allclose(u @ np.diag(s) @ v.T, w, atol=1e-10)
    assert rlt.subspace_similarity(w, w, 3) == pytest.approx(1.0, abs=1e-9)


def test_prompt_round_trip():
    assert rlt.decode_prompt(rlt.encode_prompt("circle approach square")) == "circle approach square"


def test_errors_are_raised():
    with pytest.raises(rlt.RltError):
        rlt.generate("hug")
    with pytest.raises(rlt.RltError):
        rlt.subspace_similarity(np.eye(3), np.eye(4), 2)
