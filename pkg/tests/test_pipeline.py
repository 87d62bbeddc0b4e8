import numpy as np
import pytest

from ima.augment import AugStrategy, MixupDraw
from ima.data import Batch, SyntheticSpec, apply_scaler, fit_scaler, gen_synthetic, make_windows, split
from ima.errors import ConfigError, ShapeError, TrainingError
from ima.models import Adam, DLinearForecaster, LinearImputer, MlpImputer
from ima.numerics import Rng, finite_diff_grad, relative_error
from ima.pipeline import (
    ImaConfig,
    SsrConfig,
    Streams,
    TrainConfig,
    apply_mask,
    evaluate,
    forecast_loss,
    forecast_mae,
    gated,
    gen_mask,
    ima_step,
    impute_batch,
    make_forecaster,
    masked_sse,
    masked_sse_grad,
    mixed_loss,
    mixup_step,
    plain_step,
    reconstruction_report,
    ssr_train,
    train_forecaster,
    write_history,
)
from oracles import masked_sse_loops, metrics_loops


@pytest.fixture(scope="module")
def splits():
    raw = gen_synthetic(SyntheticSpec(n_channels=2, length=600, periods=(24, 12)), Rng(0))
    tr, va, te = split(raw)
    s = fit_scaler(tr)
    return tuple(make_windows(apply_scaler(s, part), 24, 8, stride=3) for part in (tr, va, te))


def _batch(x, y):
    return Batch(np.asarray(x, float), np.asarray(y, float), np.arange(len(x)))


# --- masks and reconstruction loss -------------------------------------------------


def test_mask_extremes_and_rate():
    assert np.all(gen_mask((3, 4, 2), 0.0, Rng(0)) == 1.0)
    assert np.all(gen_mask((3, 4, 2), 1.0, Rng(0)) == 0.0)
    m = gen_mask((100, 100, 10), 0.375, Rng(1))
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert abs((1.0 - m).mean() - 0.375) < 0.005
    with pytest.raises(ValueError):
        gen_mask((2, 2), 1.5, Rng(0))


def test_apply_mask_examples():
    x = np.array([1.0, 2.0, 3.0])
    assert apply_mask(x, np.array([1.0, 0.0, 1.0])).tolist() == [1.0, 0.0, 3.0]
    assert np.array_equal(apply_mask(x, np.ones(3)), x)
    with pytest.raises(ShapeError):
        apply_mask(x, np.ones(2))


def test_masked_sse_examples():
    x = np.array([[[1.0], [2.0]]])
    assert masked_sse(x, np.array([[[1.0], [0.0]]]), np.array([[[1.0], [0.0]]])) == 4.0
    # errors at observed entries do not count
    assert masked_sse(x, np.array([[[9.0], [2.0]]]), np.array([[[1.0], [0.0]]])) == 0.0
    assert masked_sse(x, np.zeros_like(x), np.ones_like(x)) == 0.0
    with pytest.raises(ShapeError):
        masked_sse(x, np.zeros((1, 3, 1)), np.ones_like(x))


def test_masked_sse_matches_loops():
    r = Rng(2)
    x, x_imp = r.normal(size=(3, 6, 2)), r.normal(size=(3, 6, 2))
    m = gen_mask(x.shape, 0.4, r)
    assert abs(masked_sse(x, x_imp, m) - masked_sse_loops(x, x_imp, m)) <= 1e-12


def test_masked_mean_normalization():
    x = np.zeros((2, 2, 1))
    x_imp = np.full_like(x, 2.0)
    m = np.array([[[0.0], [1.0]], [[1.0], [1.0]]])
    assert masked_sse(x, x_imp, m, "masked_mean") == 4.0
    assert masked_sse(x, x_imp, np.ones_like(x), "masked_mean") == 0.0
    with pytest.raises(ValueError):
        SsrConfig(normalization="sum")


@pytest.mark.parametrize("normalization", ["literal", "masked_mean"])
def test_masked_sse_gradient(normalization):
    r = Rng(3)
    x, x_imp = r.normal(size=(2, 5, 2)), r.normal(size=(2, 5, 2))
    m = gen_mask(x.shape, 0.5, r)
    numeric = finite_diff_grad(lambda z: masked_sse(x, z, m, normalization), x_imp, 1e-5)
    assert relative_error(masked_sse_grad(x, x_imp, m, normalization), numeric) <= 1e-6


def test_ssr_gradient_through_imputer():
    r = Rng(4)
    f = MlpImputer(8, hidden=6, rng=r)
    x = r.normal(size=(3, 8, 2))
    m = gen_mask(x.shape, 0.375, r)
    x_m = apply_mask(x, m)
    f.backward(x_m, masked_sse_grad(x, f.forward(x_m), m))
    for key in ("W1", "W2", "b2"):
        original = f.params[key].copy()

        def loss(p, key=key):
            f.params[key] = p
            return masked_sse(x, f.forward(x_m), m)

        numeric = finite_diff_grad(loss, original, 1e-5)
        f.params[key] = original
        assert relative_error(f.grads[key], numeric) <= 1e-4


def test_ssr_with_nothing_masked_is_a_no_op(splits):
    f = MlpImputer(24, rng=Rng(5))
    before = {k: v.copy() for k, v in f.params.items()}
    _, history = ssr_train(f, splits[0], SsrConfig(mask_rate=0.0, epochs=2))
    assert history == [0.0, 0.0]
    assert all(np.array_equal(before[k], f.params[k]) for k in before)


def test_ssr_beats_fill_baselines():
    raw = gen_synthetic(SyntheticSpec(n_channels=2, length=3000, periods=(24, 12)), Rng(0))
    tr, va, _ = split(raw)
    s = fit_scaler(tr)
    ds_tr = make_windows(apply_scaler(s, tr), 24, 8, stride=2)
    ds_va = make_windows(apply_scaler(s, va), 24, 8)
    f, history = ssr_train(MlpImputer(24, rng=Rng(6)), ds_tr, SsrConfig(epochs=20, lr=5e-3))
    assert history[-1] < history[0]
    rep = reconstruction_report(f, ds_va, 0.375, Rng(7))
    assert rep["imputer"] < 0.5 * min(rep["mean_fill"], rep["zero_fill"])


def test_ssr_deterministic(splits):
    runs = [ssr_train(LinearImputer(24, rng=Rng(1)), splits[0], SsrConfig(epochs=2, seed=3)) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    assert np.array_equal(runs[0][0].params["W"], runs[1][0].params["W"])


# --- imputation and gating ---------------------------------------------------------


def test_impute_batch_recompose_keeps_observed():
    x = Rng(8).normal(size=(4, 10, 2))
    f = MlpImputer(10, rng=Rng(9))
    out = impute_batch(f, _batch(x, x[:, :3]), 0.375, True, Rng(10))
    m = gen_mask(x.shape, 0.375, Rng(10))
    assert np.array_equal(out.x[m == 1.0], x[m == 1.0])
    assert not np.array_equal(out.x[m == 0.0], x[m == 0.0])
    assert np.array_equal(out.y, x[:, :3])


def test_impute_batch_cases():
    x = Rng(11).normal(size=(2, 6, 1))
    ident = LinearImputer(6)
    # identity imputer on a fully observed window returns the window
    assert np.array_equal(impute_batch(ident, _batch(x, x), 0.0, False, Rng(0)).x, x)
    # fully masked without recompose: the identity imputer sees zeros
    assert np.all(impute_batch(ident, _batch(x, x), 1.0, False, Rng(0)).x == 0.0)
    # fully masked with recompose: nothing observed to keep
    assert np.all(impute_batch(ident, _batch(x, x), 1.0, True, Rng(0)).x == 0.0)


def test_gate_rate():
    r = Rng(12)
    fires = np.array([gated(0.125, r) for _ in range(10**5)])
    assert abs(fires.mean() - 0.125) < 0.005
    assert all(gated(0.0, r) == 0 for _ in range(100))
    assert all(gated(1.0, r) == 1 for _ in range(100))
    with pytest.raises(ValueError):
        gated(-0.1, r)


# --- losses ----------------------------------------------------------------------------


def test_forecast_metrics_examples():
    y_hat, y = np.array([0.0, 0.0]), np.array([1.0, 3.0])
    assert forecast_loss(y_hat, y) == 5.0
    assert forecast_mae(y_hat, y) == 2.0
    with pytest.raises(ShapeError):
        forecast_loss(y_hat, np.zeros(3))


def test_metrics_match_loops():
    r = Rng(13)
    y_hat, y = r.normal(size=(3, 4, 2)), r.normal(size=(3, 4, 2))
    mse, mae = metrics_loops(y_hat, y)
    assert abs(forecast_loss(y_hat, y) - mse) <= 1e-12
    assert abs(forecast_mae(y_hat, y) - mae) <= 1e-12


@pytest.mark.parametrize("lam", [0.3, np.array([0.1, 0.9, 0.5])])
def test_mixed_loss_gradient(lam):
    r = Rng(14)
    y_hat, y = r.normal(size=(3, 4, 2)), r.normal(size=(3, 4, 2))
    pairing = np.array([2, 0, 1])
    _, grad = mixed_loss(y_hat, y, pairing, lam)
    numeric = finite_diff_grad(lambda z: mixed_loss(z, y, pairing, lam)[0], y_hat, 1e-5)
    assert relative_error(grad, numeric) <= 1e-6


def test_mixed_loss_limits():
    r = Rng(15)
    y_hat, y = r.normal(size=(2, 3, 1)), r.normal(size=(2, 3, 1))
    p = np.array([1, 0])
    assert mixed_loss(y_hat, y, p, 1.0)[0] == forecast_loss(y_hat, y)
    assert mixed_loss(y_hat, y, p, 0.0)[0] == forecast_loss(y_hat, y[p])


# --- single steps --------------------------------------------------------------------


def _zero_forecaster():
    return DLinearForecaster(2, 1, kernel_size=1)


def test_ima_step_zero_forecaster_half_lambda():
    batch = _batch([[[1.0], [1.0]], [[3.0], [3.0]]], [[[2.0]], [[4.0]]])
    cfg = ImaConfig(imputation_rate=0.0)
    loss = ima_step(_zero_forecaster(), Adam(), LinearImputer(2), batch, cfg, Streams(0), draw=MixupDraw(0.5, np.array([1, 0])))
    assert loss == 10.0


def test_ima_without_gate_and_full_lambda_is_baseline():
    r = Rng(16)
    batch = _batch(r.normal(size=(4, 12, 2)), r.normal(size=(4, 4, 2)))
    g1 = DLinearForecaster(12, 4, kernel_size=3, rng=Rng(1))
    g2 = g1.copy()
    ima_step(g1, Adam(), MlpImputer(12, rng=Rng(2)), batch, ImaConfig(), Streams(0), gate=0, draw=MixupDraw(1.0, np.arange(4)))
    plain_step(g2, Adam(), batch.x, batch.y)
    assert all(np.array_equal(g1.params[k], g2.params[k]) for k in g1.params)


def test_ima_with_empty_mask_is_mixup():
    r = Rng(17)
    batch = _batch(r.normal(size=(4, 12, 2)), r.normal(size=(4, 4, 2)))
    g1 = DLinearForecaster(12, 4, kernel_size=3, rng=Rng(1))
    g2 = g1.copy()
    draw = MixupDraw(0.3, np.array([3, 2, 0, 1]))
    cfg = ImaConfig(mask_rate=0.0, recompose=True)
    l1 = ima_step(g1, Adam(), MlpImputer(12, rng=Rng(2)), batch, cfg, Streams(0), gate=1, draw=draw)
    l2 = mixup_step(g2, Adam(), batch, 0.2, Streams(0), draw=draw)
    assert l1 == l2
    assert all(np.array_equal(g1.params[k], g2.params[k]) for k in g1.params)


def test_nonfinite_loss_raises():
    batch = _batch(np.full((2, 4, 1), np.inf), np.zeros((2, 2, 1)))
    g = DLinearForecaster(4, 2, kernel_size=1, rng=Rng(0))
    with np.errstate(all="ignore"), pytest.raises(TrainingError):
        plain_step(g, Adam(), batch.x, batch.y)


# --- full training ----------------------------------------------------------------------


def test_zero_epochs_returns_initial_model(splits):
    g = make_forecaster(24, 8, 5, seed=0)
    best, history = train_forecaster(g, splits[0], splits[1], AugStrategy("baseline"), cfg=TrainConfig(epochs=0))
    assert history == []
    assert all(np.array_equal(best.params[k], g.params[k]) for k in g.params)


def test_training_is_deterministic(splits):
    cfg = TrainConfig(epochs=2, seed=4)
    a = train_forecaster(make_forecaster(24, 8, 5, 4), splits[0], splits[1], AugStrategy("jitter"), cfg=cfg)
    b = train_forecaster(make_forecaster(24, 8, 5, 4), splits[0], splits[1], AugStrategy("jitter"), cfg=cfg)
    assert a[1] == b[1]


def test_training_improves_on_zero_predictor(splits):
    g, history = train_forecaster(make_forecaster(24, 8, 5, 0), splits[0], splits[1], AugStrategy("baseline"), cfg=TrainConfig(epochs=3, lr=5e-3))
    zero = DLinearForecaster(24, 8, kernel_size=5)
    assert evaluate(g, splits[1])[0] < evaluate(zero, splits[1])[0]
    assert min(r.val_mse for r in history) == evaluate(g, splits[1])[0]


def test_zero_imputation_rate_reproduces_baseline_and_mixup(splits):
    cfg = TrainConfig(epochs=2, seed=1)
    imputer = MlpImputer(24, rng=Rng(3))
    pairs = [("baseline", "ia"), ("mixup", "ima")]
    for plain, imputed in pairs:
        ref, h_ref = train_forecaster(make_forecaster(24, 8, 5, 1), splits[0], splits[1], AugStrategy(plain), cfg=cfg)
        got, h_got = train_forecaster(
            make_forecaster(24, 8, 5, 1), splits[0], splits[1], AugStrategy(imputed, {"imputation_rate": 0.0}), imputer, cfg
        )
        assert h_ref == h_got
        assert all(np.array_equal(ref.params[k], got.params[k]) for k in ref.params)


def test_imputer_stays_frozen(splits):
    imputer = MlpImputer(24, rng=Rng(3))
    before = {k: v.copy() for k, v in imputer.params.items()}
    strategy = AugStrategy("ima", {"imputation_rate": 1.0})
    train_forecaster(make_forecaster(24, 8, 5, 0), splits[0], splits[1], strategy, imputer, TrainConfig(epochs=1))
    assert all(np.array_equal(before[k], imputer.params[k]) for k in before)


def test_imputer_mismatch_is_config_error(splits):
    g = make_forecaster(24, 8, 5, 0)
    with pytest.raises(ConfigError):
        train_forecaster(g, splits[0], splits[1], AugStrategy("ia"))
    with pytest.raises(ConfigError):
        train_forecaster(g, splits[0], splits[1], AugStrategy("jitter"), LinearImputer(24))


def test_evaluate_matches_loops(splits):
    g = make_forecaster(24, 8, 5, 2)
    ds = splits[2]
    batch = ds.gather(np.arange(len(ds)))
    mse, mae = metrics_loops(g.forward(batch.x), batch.y)
    got = evaluate(g, ds, batch_size=5)
    assert abs(got[0] - mse) <= 1e-12 and abs(got[1] - mae) <= 1e-12


def test_zero_predictor_on_standardized_data():
    raw = gen_synthetic(SyntheticSpec(n_channels=3, length=4000, periods=(24, 48, 12)), Rng(1))
    tr, va, _ = split(raw)
    s = fit_scaler(tr)
    mse, _ = evaluate(DLinearForecaster(48, 24, kernel_size=25), make_windows(apply_scaler(s, va), 48, 24))
    assert abs(mse - 1.0) <= 0.1


def test_write_history(tmp_path, splits):
    _, history = train_forecaster(make_forecaster(24, 8, 5, 0), splits[0], splits[1], AugStrategy("baseline"), cfg=TrainConfig(epochs=2))
    write_history(history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_mse,val_mae"
    assert len(lines) == 1 + len(history)
