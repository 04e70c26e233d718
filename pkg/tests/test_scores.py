import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twoview import autodiff as ad
from twoview.autodiff import Tensor
from twoview.common import CommonComponent
from twoview.config import TrainConfig
from twoview.individual import IndividualComponent
from twoview.scores import (
    common_maps,
    common_score,
    common_score_rows,
    contractive_penalty,
    contractive_penalty_rows,
    export_saliency,
    grad_map_common,
    grad_map_individual,
    individual_maps,
    individual_score,
    read_pgm,
    saliency_bytes,
)

vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.floats(0.1, 10), st.floats(0.1, 10))
def test_common_score_symmetry_and_scaling(z1, z2, a, b):
    s = common_score(z1, z2)
    assert s == pytest.approx(common_score(z2, z1), rel=1e-12, abs=1e-12)
    assert common_score(a * z1, b * z2) == pytest.approx(a * b * s, rel=1e-9, abs=1e-9)
    assert 0.0 <= s <= np.linalg.norm(z1) * np.linalg.norm(z2) + 1e-9


def test_common_score_values():
    assert common_score([1, 0], [0, 1]) == 0.0
    assert common_score([2, 0], [3, 0]) == pytest.approx(6.0)
    # squared dot product over the norms: anti-aligned pairs score positive too
    assert common_score([2, 0], [-3, 0]) == pytest.approx(6.0)
    assert common_score([0, 0], [1, 1]) == 0.0


def test_row_scores_match_scalar(rng):
    Z1, Z2 = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    Z1[2] = 0.0
    s, bad = common_score_rows(Tensor(Z1), Tensor(Z2))
    np.testing.assert_allclose(s.data, [common_score(a, b) for a, b in zip(Z1, Z2)], rtol=1e-12)
    assert bad.tolist() == [False, False, True, False, False, False]


def test_individual_score_properties(rng):
    z1, z2 = rng.standard_normal(4), rng.standard_normal(4)
    assert individual_score(2 * z1 - z2, z1, z2) == pytest.approx(0.0, abs=1e-24)
    h = rng.standard_normal(4)
    assert 0 <= individual_score(h, z1, z2) <= 0.5 * h @ h
    with pytest.raises(ValueError):
        individual_score(np.ones(3), z1, z2)


def test_contractive_penalty_values():
    g = np.array([3.0, -4.0])
    assert contractive_penalty(g, 1.0) == 7.0
    assert contractive_penalty(g, 0.0) == 25.0
    assert contractive_penalty(g, 0.5) == 16.0
    rows = contractive_penalty_rows(Tensor(np.array([[3.0, -4.0], [0.0, 1.0]])), 0.5)
    np.testing.assert_allclose(rows.data, [16.0, 1.0])


def small_models(rng, k=3):
    cfg = TrainConfig(k=k, hidden=(6,), seed=3, batch_size=4)
    common = CommonComponent.create(5, 4, cfg)
    ind = IndividualComponent.create(5, 4, cfg, common)
    for net in (common.encoder1, common.encoder2, *ind.encoders):
        net.running_mean = 0.1 * rng.standard_normal(k)
        net.running_var = 1 + rng.random(k)
    return common, ind


def test_batched_common_maps_equal_single_maps(rng):
    common, _ = small_models(rng)
    X1, X2 = rng.standard_normal((5, 5)), rng.standard_normal((5, 4))
    s, G1, G2, _ = common_maps(common, X1, X2)
    for j in range(5):
        one = grad_map_common(common, X1[j], X2[j])
        assert one.value == pytest.approx(s[j], rel=1e-12)
        np.testing.assert_allclose(one.maps[1], G1[j], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(one.maps[2], G2[j], rtol=1e-12, atol=1e-14)


def test_batched_individual_maps_equal_single_maps(rng):
    common, ind = small_models(rng)
    X1, X2 = rng.standard_normal((4, 5)), rng.standard_normal((4, 4))
    for view, (Xa, Xb) in ((1, (X1, X2)), (2, (X2, X1))):
        r, G, _ = individual_maps(ind, common, Xa, Xb, view)
        for j in range(4):
            one = grad_map_individual(ind, common, Xa[j], Xb[j], view)
            assert one.value == pytest.approx(r[j], rel=1e-12)
            np.testing.assert_allclose(one.maps[view], G[j], rtol=1e-10, atol=1e-14)


def test_individual_maps_need_q_equal_k(rng):
    cfg = TrainConfig(k=3, q=2, hidden=(4,), batch_size=4)
    common = CommonComponent.create(5, 4, cfg)
    ind = IndividualComponent.create(5, 4, cfg, common)
    with pytest.raises(ValueError, match="q == k"):
        grad_map_individual(ind, common, np.ones(5), np.ones(4), 1)


def test_common_map_shape_errors(rng):
    common, _ = small_models(rng)
    with pytest.raises(ad.ShapeError):
        grad_map_common(common, np.ones(4), np.ones(4))


def test_saliency_scaling():
    px = saliency_bytes(np.array([-2.0, 1.0, 0.0, 0.5]), 2, 2)
    np.testing.assert_array_equal(px, [[255, 128], [0, 64]])
    np.testing.assert_array_equal(saliency_bytes(np.ones(6), 2, 3), 128)
    with pytest.raises(ValueError):
        saliency_bytes(np.ones(5), 2, 3)


def test_pgm_roundtrip(tmp_path, rng):
    m = rng.standard_normal(28 * 14)
    path = tmp_path / "a.pgm"
    px = export_saliency(m, (28, 14), str(path))
    back = read_pgm(str(path))
    assert back.shape == (28, 14)
    np.testing.assert_array_equal(back, px)
    assert path.read_bytes().startswith(b"P5\n14 28\n255\n")


def test_pgm_missing_directory(tmp_path):
    with pytest.raises(OSError):
        export_saliency(np.ones(4), (2, 2), str(tmp_path / "nope" / "a.pgm"))
