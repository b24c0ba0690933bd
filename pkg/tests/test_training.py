from collections import Counter

import numpy as np
import pytest

from mela.autodiff import NumericInstabilityError
from mela.model import encode
from mela.tasks.sinusoid import sinusoid_ensemble
from mela.training import (
    EvalCurve,
    MetaTrainConfig,
    evaluate,
    finetune_curve,
    meta_train,
    write_curves_csv,
    write_loss_history_csv,
    zero_step_loss,
)


@pytest.fixture
def ensemble():
    return sinusoid_ensemble(11, 6)


def test_config_validation():
    with pytest.raises(ValueError):
        MetaTrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        MetaTrainConfig(iterations=-1)
    with pytest.raises(ValueError):
        MetaTrainConfig(eval_every=0)


def test_zero_iterations_leave_model_unchanged(small_model, ensemble):
    res = meta_train(small_model, ensemble, MetaTrainConfig(iterations=0))
    assert res.model.fingerprint() == small_model.fingerprint()
    assert res.steps == 0 and res.losses == []


def test_empty_ensemble_is_rejected(small_model):
    with pytest.raises(ValueError):
        meta_train(small_model, [], MetaTrainConfig(iterations=1))


def test_one_iteration_visits_each_dataset_once(small_model, ensemble):
    res = meta_train(small_model, ensemble, MetaTrainConfig(iterations=1, seed=2))
    assert Counter(res.task_ids) == Counter(d.task_id for d in ensemble)
    assert res.model.fingerprint() != small_model.fingerprint()


def test_update_accounting(small_model, ensemble):
    res = meta_train(small_model, ensemble, MetaTrainConfig(iterations=3))
    assert res.steps == 3 * len(ensemble) == len(res.losses) == len(res.task_ids)
    assert res.iterations == 3
    assert all(v >= 0 for v in res.losses)


def test_seed_determinism(small_model, ensemble):
    a = meta_train(small_model, ensemble, MetaTrainConfig(iterations=2, seed=5))
    b = meta_train(small_model, ensemble, MetaTrainConfig(iterations=2, seed=5))
    c = meta_train(small_model, ensemble, MetaTrainConfig(iterations=2, seed=6))
    assert a.model.fingerprint() == b.model.fingerprint()
    assert a.losses == b.losses
    assert a.task_ids != c.task_ids or a.losses != c.losses


def test_meta_training_reduces_loss(small_model):
    data = sinusoid_ensemble(3, 20)
    before = zero_step_loss(small_model, data)
    res = meta_train(small_model, data, MetaTrainConfig(iterations=30, lr=3e-3))
    assert zero_step_loss(res.model, data) < before


def test_validation_selects_best_and_stops(small_model, ensemble):
    val = sinusoid_ensemble(11, 4, stream=2)
    res = meta_train(small_model, ensemble, MetaTrainConfig(iterations=6, eval_every=2), validation=val)
    assert [it for it, _ in res.validation] == [2, 4, 6]
    best = min(v for _, v in res.validation)
    assert zero_step_loss(res.model, val) == pytest.approx(best, rel=1e-12)
    stopped = meta_train(small_model, ensemble, MetaTrainConfig(iterations=50, lr=0.5, eval_every=1, patience=1),
                         validation=val)
    assert stopped.iterations < 50


def test_split_hygiene(small_model, ensemble):
    d = ensemble[0]
    z0, _ = encode(small_model, d.X_train, d.Y_train)
    X, Y = d.X.copy(), d.Y.copy()
    X[d.test_idx] += 3.0
    Y[d.test_idx] -= 7.0
    moved = type(d)(X, Y, d.train_idx, d.test_idx, d.family, d.task_id, d.seed, d.oracle_params())
    z1, _ = encode(small_model, moved.X_train, moved.Y_train)
    assert np.array_equal(z0, z1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_instability_names_iteration_and_task(small_model, ensemble):
    d = ensemble[0]
    bad = type(d)(d.X, d.Y * 1e300, d.train_idx, d.test_idx, d.family, d.task_id, d.seed, d.oracle_params())
    with pytest.raises(NumericInstabilityError, match=f"iteration 0, task {d.task_id}"):
        meta_train(small_model, [bad], MetaTrainConfig(iterations=1))


# -- evaluate ----------------------------------------------------------------------

def test_evaluate_k_zero_gives_one_point(small_model, ensemble):
    curve = evaluate(small_model, ensemble, K=0)
    assert curve.per_task.shape == (len(ensemble), 1)
    assert curve.mean[0] == pytest.approx(zero_step_loss(small_model, ensemble), rel=1e-12)


def test_evaluate_does_not_mutate_model(small_model, ensemble):
    fp = small_model.fingerprint()
    evaluate(small_model, ensemble, K=5, lr=1e-2)
    assert small_model.fingerprint() == fp


def test_finetuning_improves_on_average(small_model):
    data = sinusoid_ensemble(4, 30)
    curve = evaluate(small_model, data, K=10, lr=1e-3)
    assert curve.mean[10] <= curve.mean[0]
    assert np.all(curve.per_task >= 0)
    assert len(curve.steps) == len(curve.mean) == len(curve.stderr) == 11


def test_evaluate_parallel_matches_serial(small_model, ensemble):
    a = evaluate(small_model, ensemble, K=3, jobs=1)
    b = evaluate(small_model, ensemble, K=3, jobs=2)
    assert np.array_equal(a.per_task, b.per_task)
    assert np.array_equal(a.task_ids, np.sort(a.task_ids))


def test_finetune_step_zero_matches_curve(small_model, ensemble):
    d = ensemble[2]
    assert finetune_curve(small_model, d, 0, 1e-3)[0] == evaluate(small_model, [d], K=0).mean[0]


def test_evalcurve_stats():
    c = EvalCurve(np.array([[1.0, 0.5], [3.0, 1.5]]), np.array([0, 1]))
    assert c.mean.tolist() == [2.0, 1.0]
    assert c.stderr[0] == pytest.approx(np.std([1, 3], ddof=1) / np.sqrt(2))
    assert EvalCurve(np.array([[1.0]]), np.array([0])).stderr.tolist() == [0.0]


def test_csv_writers(tmp_path, small_model, ensemble):
    curve = evaluate(small_model, ensemble, K=2)
    p = tmp_path / "c.csv"
    write_curves_csv(p, {None: curve}, "abc")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config-hash: abc"
    assert lines[1] == "step,mean_loss,stderr,n_tasks"
    assert len(lines) == 5
    assert float(lines[2].split(",")[1]) == curve.mean[0]
    write_curves_csv(p, {"b": curve, "a": curve}, "abc")
    assert p.read_text().splitlines()[2].startswith("a,0,")
    res = meta_train(small_model, ensemble, MetaTrainConfig(iterations=1))
    write_loss_history_csv(tmp_path / "l.csv", res, "abc")
    rows = (tmp_path / "l.csv").read_text().splitlines()[2:]
    assert [float(r.split(",")[1]) for r in rows] == res.losses


def test_smoothed_history():
    from mela.training import MetaTrainResult

    r = MetaTrainResult(None, losses=[1.0, 2.0, 3.0, 4.0])
    assert r.smoothed(2).tolist() == [1.5, 2.5, 3.5]
    assert r.smoothed(10).tolist() == [1.0, 2.0, 3.0, 4.0]
