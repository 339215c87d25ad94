import math

import numpy as np
import pytest

from fastpci import checkpoint
from fastpci.config import Config, Flags, ModelConfig, TrainConfig
from fastpci.errors import ArgumentError, NumericError
from fastpci.runtime import (
    EVAL_SLOTS, copy_frame0, evaluate, frame_at, interpolate, interpolate_files, load_model, model_predictor,
    resample, save_checkpoint, train,
)
from fastpci.synth import dataset, generate, random_scene


def toy_config(**train):
    model = ModelConfig(points=32, divisors=(1, 4, 8), channels=(4, 5, 6), attn_dim=3, knn_k=3, cost_channels=4,
                        predictor_channels=(5, 5, 5), refine_channels=(4, 5, 6), refine_divisor=2, refine_k=4,
                        fusion_k=4, fusion_hidden=4, flags=Flags())
    return Config(model=model, train=TrainConfig(**{"epochs": 1, "batch_size": 2, **train}))


@pytest.fixture(scope="module")
def data():
    return dataset(0, 4, 2, points=32)


def test_epochs_zero_writes_initial_checkpoint(tmp_path, data):
    cfg = toy_config(epochs=0)
    res = train(cfg, data[0], tmp_path)
    assert res.curve == []
    assert (tmp_path / "loss.csv").read_text() == "epoch,step,total,intp,cd1,cd2,ms\n"
    state = checkpoint.load(tmp_path / "model.fpci")
    for name, p in res.model.named_parameters():
        assert state[name].tobytes() == p.data.astype(np.float32).tobytes()


def test_train_curve_and_checkpoints(tmp_path, data):
    cfg = toy_config(epochs=2, checkpoint_every=3)
    res = train(cfg, data[0], tmp_path)
    assert len(res.curve) == 4
    assert [r["step"] for r in res.curve] == [1, 2, 3, 4]
    assert [r["epoch"] for r in res.curve] == [0, 0, 1, 1]
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert len(lines) == 5
    assert (tmp_path / "step_3.fpci").exists()
    model, loaded_cfg = load_model(tmp_path / "model.fpci")
    assert loaded_cfg.to_json() == cfg.to_json()
    for (n, a), (_, b) in zip(model.named_parameters(), res.model.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), n


def test_max_steps_caps_training(data):
    res = train(toy_config(epochs=5, max_steps=3), data[0])
    assert len(res.curve) == 3


def test_empty_dataset_rejected():
    with pytest.raises(ArgumentError):
        train(toy_config(), [])


def test_non_finite_loss_aborts_with_terms(data):
    res = train(toy_config(epochs=0), data[0])
    res.model.pyramid.encoder.layers[0].weight.data[...] = np.nan
    with pytest.raises(NumericError, match="intp="):
        train(toy_config(), data[0], model=res.model)


def test_continuous_t_sampling_uses_rigid_ground_truth(data):
    seq = data[0][0]
    np.testing.assert_array_equal(frame_at(seq, 0.5), seq.frames[2])
    mid = frame_at(seq, 0.4)
    assert mid.shape == seq.frames[0].shape
    res = train(toy_config(t_sampling="continuous", max_steps=1), data[0])
    assert len(res.curve) == 1


def test_evaluate_perfect_predictions_are_zero(data):
    _, test = data

    class Oracle:
        def __init__(self):
            self.lookup = {}
            for seq in test:
                for k, t in EVAL_SLOTS:
                    self.lookup[(seq.frames[0].tobytes(), t)] = seq.frames[k]

        def __call__(self, pc0, pc1, t):
            return self.lookup[(pc0.tobytes(), t)]

    report = evaluate(Oracle(), test)
    assert all(v == (0.0, 0.0) for v in report.rows.values())
    assert report.average == (0.0, 0.0)


def test_average_row_is_exact_mean(data):
    _, test = data
    report = evaluate(copy_frame0, test)
    rows = report.to_csv().splitlines()
    assert rows[0] == "frame,CD,EMD"
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "2", "3", "Average"]
    vals = np.array([[float(x) for x in r.split(",")[1:]] for r in rows[1:4]])
    avg = [float(x) for x in rows[4].split(",")[1:]]
    assert avg == [sum(vals[:, 0]) / 3, sum(vals[:, 1]) / 3]


def test_evaluate_without_emd(data):
    report = evaluate(copy_frame0, data[1], with_emd=False)
    assert all(math.isnan(v[1]) for v in report.rows.values())


def test_resample():
    X = np.random.default_rng(0).random((50, 3))
    assert len(resample(X, 20)) == 20
    with pytest.warns(UserWarning):
        up = resample(X, 70)
    np.testing.assert_array_equal(up[50:], X[:20])
    assert resample(X, 50) is X


def test_interpolate_files(tmp_path):
    from fastpci.cloudio import read_points, write_cloud
    from fastpci.model import FastPCI

    cfg = toy_config()
    model = FastPCI(cfg.model)
    save_checkpoint(tmp_path / "m.fpci", model, cfg)
    seq = generate(random_scene(1, 40))
    write_cloud(tmp_path / "a.xyz", seq.frames[0])
    write_cloud(tmp_path / "b.bin", seq.frames[-1])
    out = interpolate_files(tmp_path / "m.fpci", tmp_path / "a.xyz", tmp_path / "b.bin", 0.5, tmp_path / "o.xyz")
    assert out.shape == (32, 3)
    assert read_points(tmp_path / "o.xyz").shape == (32, 3)
    with pytest.raises(ArgumentError):
        interpolate(model, seq.frames[0], seq.frames[-1], 1.5)


def test_model_predictor_wraps_predict():
    from fastpci.model import FastPCI

    model = FastPCI(toy_config().model)
    X = np.random.default_rng(3).random((32, 3))
    np.testing.assert_array_equal(model_predictor(model)(X, X + 0.1, 0.5), model.predict(X, X + 0.1, 0.5))
