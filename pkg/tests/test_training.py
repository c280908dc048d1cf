import numpy as np
import pytest

from cer_mtl.data import synthetic_recordings
from cer_mtl.model import ModelConfig, build_model
from cer_mtl.training import (
    AdamState,
    DataConfig,
    EarlyStopping,
    Evaluation,
    NonFiniteError,
    TrainConfig,
    adam_step,
    epoch_log_csv,
    evaluate,
    fit,
    prepare_data,
    run_sweep,
    train,
)

SMALL_DATA = DataConfig(folds=3, center_stride=20)
FAST = dict(learning_rate=3e-3, batch_size=64)


@pytest.fixture(scope="module")
def recordings():
    return synthetic_recordings(11, n_recordings=6, frames=1200, difficulty="easy")


@pytest.fixture(scope="module")
def bundle(recordings):
    return prepare_data(recordings, SMALL_DATA, 20, ("activation", "valence", "dominance"))[0]


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        g = np.array([0.5, -2.0, 1e-3])
        new, state = adam_step(AdamState(), {"w": np.zeros(3)}, {"w": g}, 1e-3)
        assert np.allclose(new["w"], -1e-3 * np.sign(g), rtol=1e-4)
        assert state.step == 1

    def test_hand_example(self):
        new, _ = adam_step(AdamState(), {"w": np.array(1.0)}, {"w": np.array(0.5)}, 5e-5)
        assert new["w"] == pytest.approx(1 - 5e-5 * (0.5 / (0.5 + 1e-8)), abs=1e-15)
        assert new["w"] == pytest.approx(0.99995, abs=1e-9)

    def test_zero_gradient_forever(self):
        p = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        for _ in range(50):
            p, state = adam_step(state, p, {"w": np.zeros(2)}, 0.1)
        assert np.array_equal(p["w"], [1.0, -2.0])

    def test_pure_and_deterministic(self):
        rng = np.random.default_rng(0)
        params = {"a": rng.standard_normal((3, 2))}
        grads = {"a": rng.standard_normal((3, 2))}
        before = params["a"].copy()
        one = adam_step(AdamState(), params, grads, 0.01)
        two = adam_step(AdamState(), params, grads, 0.01)
        assert one[0]["a"].tobytes() == two[0]["a"].tobytes()
        assert np.array_equal(params["a"], before)

    def test_non_finite_gradient_names_parameter(self):
        with pytest.raises(NonFiniteError) as err:
            adam_step(AdamState(), {"x.w": np.zeros(2)}, {"x.w": np.array([1.0, np.nan])}, 0.1)
        assert err.value.parameter == "x.w"


def test_early_stopping_counts():
    es = EarlyStopping(3)
    assert es.update(1, 1.0) and not es.update(2, 1.0)
    es.update(3, 2.0)
    assert not es.should_stop
    es.update(4, 3.0)
    assert es.should_stop and es.best_epoch == 1


def _fake_validation(values):
    it = iter(values)

    def validate(net):
        v = next(it)
        return Evaluation(v, {}, {t: 0.0 for t in net.config.tasks}, {}, {}, {})

    return validate


def test_worsening_validation_stops_at_patience_plus_one(bundle):
    net = build_model(ModelConfig(), 0)
    res = train(net, bundle, TrainConfig(**FAST), validate=_fake_validation(np.arange(1.0, 200.0)))
    assert res.epochs_run == 21
    assert res.checkpoint.epoch == 1 and res.checkpoint.val_loss == 1.0


def test_checkpoint_is_best_logged_epoch(bundle):
    vals = [0.9, 0.7, 0.8, 0.6, 0.65, 0.9, 0.95]
    res = train(build_model(ModelConfig(), 0), bundle, TrainConfig(max_epochs=7, patience=5, **FAST),
                validate=_fake_validation(vals))
    assert res.checkpoint.epoch == 4
    assert res.checkpoint.val_loss == min(r.val_J for r in res.log)


def test_never_more_than_max_epochs(bundle):
    res = train(build_model(ModelConfig(), 0), bundle, TrainConfig(max_epochs=3, patience=20, **FAST),
                validate=_fake_validation([3.0, 2.0, 1.0, 0.0]))
    assert res.epochs_run == 3


def test_same_seed_same_log(recordings):
    cfg = TrainConfig(max_epochs=3, patience=3, seed=5, **FAST)
    logs = []
    for _ in range(2):
        res, _ = fit(recordings, ModelConfig(), cfg, SMALL_DATA)
        logs.append(epoch_log_csv(res.log, res.network.config.tasks))
    assert logs[0] == logs[1]


def test_one_hot_weights_leave_other_branches_untouched(bundle):
    net = build_model(ModelConfig(), 1)
    before = {k: v.copy() for k, v in net.state().items()}
    train(net, bundle, TrainConfig(max_epochs=2, patience=5, mtl_weights=(0.0, 1.0, 0.0), **FAST))
    after = net.state()
    for name in before:
        same = np.array_equal(before[name], after[name])
        if name.startswith(("task.act.", "task.dom.")):
            assert same, name
        elif name.startswith(("task.val.", "trunk.")):
            assert not same, name


def test_weight_count_must_match_tasks(bundle):
    with pytest.raises(ValueError):
        train(build_model(ModelConfig(), 0), bundle, TrainConfig(mtl_weights=(0.5, 0.5), **FAST))


def test_easy_data_training_ccc_improves(recordings):
    res, bundle = fit(recordings, ModelConfig(), TrainConfig(max_epochs=30, patience=30, **FAST), SMALL_DATA)
    assert res.log[-1].train_J < res.log[0].train_J
    one, _ = fit(recordings, ModelConfig(), TrainConfig(max_epochs=1, **FAST), SMALL_DATA)
    final = evaluate(res.network, bundle.train).ccc
    first = evaluate(one.network, bundle.train).ccc
    assert all(final[t] > first[t] for t in final)


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.learning_rate, c.batch_size, c.max_epochs, c.patience, c.loss) == (5e-5, 256, 100, 20, "ccc")
    with pytest.raises(ValueError):
        TrainConfig(loss="l1")


class TestSweep:
    def test_window_rows(self, recordings):
        table = run_sweep("window", [20, 40], recordings, train_cfg=TrainConfig(max_epochs=1, **FAST),
                          data_cfg=SMALL_DATA)
        assert table.rows == ["20", "40"]
        assert table.to_csv().splitlines()[0] == "N,activation,valence,dominance"

    def test_mode_rows(self, recordings):
        table = run_sweep("mode", ["mtl", "stl"], recordings, train_cfg=TrainConfig(max_epochs=1, **FAST),
                          data_cfg=SMALL_DATA)
        assert table.rows == ["MTL", "STL"]
        assert len(table.to_markdown().splitlines()) == 4

    def test_loss_layout(self, recordings):
        table = run_sweep("loss", ["ccc", "mse"], recordings, train_cfg=TrainConfig(max_epochs=1, **FAST),
                          data_cfg=SMALL_DATA)
        assert table.rows == ["multimodal", "speech", "body"]
        assert [g for g, _ in table.columns] == ["CCC"] * 3 + ["MSE"] * 3

    def test_unknown_axis(self, recordings):
        with pytest.raises(ValueError):
            run_sweep("depth", [1], recordings)
