import numpy as np
import pytest

from graspkit import synthetic as sy
from graspkit.dataset import default_gesture_table, load_manifest
from graspkit.hand_geometry import FINGER_JOINTS, FingerId, functional_finger


def test_canonical_hands():
    assert functional_finger(sy.open_palm()) == FingerId.THUMB
    assert functional_finger(sy.pointing_index()) == FingerId.INDEX
    assert functional_finger(sy.fist()) == FingerId.INDEX


def test_pointing_index_tip_on_target():
    lm = sy.pointing_index((0.25, 0.7))
    np.testing.assert_allclose(lm.points[FINGER_JOINTS[FingerId.INDEX][3], :2], [0.25, 0.7], atol=1e-12)


def test_random_rotation_is_proper(rng):
    for _ in range(20):
        R = sy.random_rotation(rng)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)


def test_planted_dataset_layout():
    d = sy.planted_dataset(seed=3, n_per_class=2)
    assert len(d.egos) == len(d.masks) == 4 and len(d.exos) == len(d.exo_landmarks) == 4
    for s, m in zip(d.egos, d.masks):
        assert s.features.shape == (d.depth, d.size, d.size)
        assert m.sum() == 25
        # the class channel is brightest inside the planted square
        ch = s.features[s.task]
        assert ch[m].mean() > ch[~m].mean() + 2.0


def test_planted_dataset_is_seeded():
    a, b = sy.planted_dataset(seed=5, n_per_class=2), sy.planted_dataset(seed=5, n_per_class=2)
    for x, y in zip(a.egos + a.exos, b.egos + b.exos):
        np.testing.assert_array_equal(x.features, y.features)


def test_planted_dataset_rejects_shallow_depth():
    with pytest.raises(ValueError):
        sy.planted_dataset(depth=3)


def test_write_planted_dataset(tmp_path):
    d = sy.planted_dataset(seed=1, n_per_class=1)
    recs = load_manifest(sy.write_planted_dataset(tmp_path, d))
    assert [r.view for r in recs].count("exo") == 2
    for r in recs:
        assert (tmp_path / r.feature_path).exists()


def test_separable_embeddings():
    X, y = sy.separable_embeddings(n_per_class=5)
    assert X.shape == (70, 16) and set(y) == set(range(14))


def test_outcome_predictions_count_cells():
    rows = sy.outcome_predictions({("Hold", "scissors"): (1, 4)})
    true = default_gesture_table().gesture_id("Hold", "scissors")
    assert len(rows) == 4 and sum(p == t for _, _, p, t in rows) == 1
    assert all(t == true for *_, t in rows)
    assert len(sy.PUBLISHED_CELL_OUTCOMES) == 24


def test_button_scene_peak_and_target():
    s = sy.button_scene()
    r, c = s.pixel
    assert np.unravel_index(np.argmax(s.amap), s.amap.shape) == (r, c)
    u, v, z = s.cam.project(s.target)
    assert (u, v, z) == pytest.approx((c, r, s.depth))


def test_contact_world():
    g = default_gesture_table().gestures[1]
    cm = sy.contact_world(g, 5.0, fingers=[1, 2])
    assert cm.stiffness == (0.0, 5.0, 5.0, 0.0, 0.0)
    assert cm.theta_contact[1] == pytest.approx(g.flexion[1] + 0.2)
    assert np.isinf(cm.theta_contact[0])
