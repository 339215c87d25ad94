import json

import numpy as np
import pytest

from fastpci.config import DataConfig
from fastpci.errors import ArgumentError
from fastpci.kernels import BACKWARD, FORWARD, warp_points
from fastpci.metrics import chamfer
from fastpci.synth import (
    TEST, TRAIN, ObjectSpec, SceneSpec, dataset, generate, random_scene, read_sequence, rigid_transform,
    rotation_matrix, split_seed, write_sequence,
)


def one_object(kind="box", v=(0, 0, 0), w=(0, 0, 0), n=200, sigma=0.0):
    size = (1.0,) if kind == "sphere" else (1.0, 0.5, 0.8)
    return SceneSpec(7, [ObjectSpec(kind, (1.0, 2.0, 0.5), size, v, w, n)], sigma)


def test_static_noiseless_frames_identical():
    seq = generate(one_object())
    for f in seq.frames[1:]:
        np.testing.assert_array_equal(f, seq.frames[0])


def test_pure_translation():
    seq = generate(one_object(v=(1, 0, 0)))
    np.testing.assert_allclose(seq.frame(0.5), seq.frames[0] + [0.5, 0, 0], atol=1e-12)
    np.testing.assert_allclose(seq.gt_flow_forward, np.tile([1.0, 0, 0], (200, 1)), atol=1e-12)


def test_fractional_rotation_matches_direct_oracle():
    seq = generate(one_object("sphere", w=(0, 0, np.pi / 2)))
    c = np.array([1.0, 2.0, 0.5])
    a = np.pi / 4
    R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    expect = (seq.frames[0] - c) @ R.T + c
    np.testing.assert_allclose(seq.frame(0.5), expect, atol=1e-9)


def test_rotation_matrix_axis_angle():
    R = rotation_matrix([0, 0, np.pi])
    np.testing.assert_allclose(R @ [1, 0, 0], [-1, 0, 0], atol=1e-15)
    np.testing.assert_array_equal(rotation_matrix([0, 0, 0]), np.eye(3))


def test_linear_warp_exact_for_translation_and_chord_bound_for_rotation():
    spec = one_object(v=(0.3, -0.2, 0.1))
    seq = generate(spec)
    for k, t in enumerate(seq.times):
        np.testing.assert_allclose(warp_points(seq.clean[0], seq.gt_flow_forward, t, FORWARD), seq.clean[k],
                                   atol=1e-9)
    omega = np.deg2rad(30.0)
    spec = one_object("box", v=(0.5, 0, 0), w=(0, 0, omega))
    seq = generate(spec)
    r = np.linalg.norm(seq.clean[0] - np.array(spec.objects[0].center), axis=1)
    for k, t in enumerate(seq.times):
        err = np.linalg.norm(warp_points(seq.clean[0], seq.gt_flow_forward, t) - seq.clean[k], axis=1)
        assert np.all(err <= 0.5 * omega ** 2 * r + 1e-12)


def test_noiseless_frame_equals_rigid_oracle():
    spec = one_object("box", v=(0.2, 0.1, 0), w=(0.1, 0.2, 0.3))
    seq = generate(spec)
    for k, t in enumerate(seq.times):
        assert chamfer(seq.clean[k], rigid_transform(seq.clean[0], spec.objects[0], t)) == 0.0


def test_random_scene_defaults_and_ordering():
    spec = random_scene(3, 1024)
    assert spec.points == 1024
    assert spec.objects[0].kind == "plane"
    assert len(spec.objects) == 5
    seq = generate(spec)
    assert seq.frames.shape == (5, 1024, 3) and seq.gt_flow_forward.shape == (1024, 3)
    assert np.all(np.diff(seq.labels) >= 0)
    diam = np.ptp(seq.clean[0], axis=0).max() * np.sqrt(2)
    for o in spec.objects:
        assert np.linalg.norm(o.velocity) <= 0.5 * diam
        assert np.linalg.norm(o.angular) <= np.deg2rad(30.0) + 1e-12


def test_noise_level():
    seq = generate(SceneSpec(1, [ObjectSpec("plane", (0, 0, 0), (5, 5, 0), points=20000)], 0.005))
    resid = seq.frames - seq.clean
    assert abs(resid.std() - 0.005) < 2e-4


def test_generate_errors():
    with pytest.raises(ArgumentError):
        generate(SceneSpec(0, []))
    with pytest.raises(ArgumentError):
        SceneSpec(0, [], noise_sigma=-1.0)
    with pytest.raises(ArgumentError):
        ObjectSpec("cone", (0, 0, 0), (1,))
    with pytest.raises(ArgumentError):
        ObjectSpec("box", (0, 0, 0), (1, 1, 1), velocity=(np.inf, 0, 0))


def test_dataset_counts_determinism_and_disjoint_seeds():
    train, test = dataset(5, 100, 3, DataConfig(), points=64)
    assert len(train) == 100 and len(test) == 3
    assert not set(train.seeds) & set(test.seeds)
    assert split_seed(5, TRAIN, 0) != split_seed(5, TEST, 0)
    again, _ = dataset(5, 100, 3, DataConfig(), points=64)
    for i in (0, 57):
        assert train[i].frames.tobytes() == again[i].frames.tobytes()
    with pytest.raises(ArgumentError):
        dataset(0, 0, 1)


def test_sequence_round_trip(tmp_path):
    seq = generate(random_scene(11, 128))
    write_sequence(seq, tmp_path / "s")
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    assert manifest["times"] == [0.0, 0.25, 0.5, 0.75, 1.0]
    back = read_sequence(tmp_path / "s")
    np.testing.assert_allclose(back.frames, seq.frames, rtol=1e-8, atol=1e-9)
    np.testing.assert_array_equal(back.clean, seq.clean)
