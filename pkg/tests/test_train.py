import math

import numpy as np
import pytest
from scipy import stats

from varfc.classifier import ClassifierSpec
from varfc.data import Dataset, generate
from varfc.model import VariableRateModel
from varfc.train import (ConfigError, TrainConfig, TrainingDiverged, fit, format_config, loss_fixed,
                         loss_variable, parse_config, sample_lambda)

from gradcheck import check

TINY = ClassifierSpec(stages=((1, 4, 1), (2, 8, 2)), stem_channels=4, num_classes=3, input_shape=(3, 8, 8))


def tiny_model(seed=0, compression=True):
    return VariableRateModel(1, TINY, c_total=64, compression=compression, embed_dim=8, seed=seed)


def tiny_data(n=48, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, n).astype(np.int64)
    images = rng.normal(0, 0.3, (n, 3, 8, 8)).astype(np.float32)
    images[np.arange(n), labels] += 0.8  # class = brightest channel
    return Dataset(images, labels)


def tiny_cfg(**kw):
    base = dict(epochs=2, batch_size=16, probe_size=16, n_train=48, n_test=16)
    base.update(kw)
    return TrainConfig(**base)


# -- lambda sampling ------------------------------------------------------------
def test_degenerate_range():
    rng = np.random.default_rng(0)
    assert {sample_lambda(rng, 0.3, 0.3) for _ in range(10)} == {0.3}


def test_log_uniform_distribution():
    rng = np.random.default_rng(1)
    lo, hi = 1e-4, 5.12
    lams = np.array([sample_lambda(rng, lo, hi) for _ in range(100_000)])
    assert lams.min() >= lo and lams.max() <= hi
    u = (np.log(lams) - math.log(lo)) / (math.log(hi) - math.log(lo))
    assert stats.kstest(u, "uniform").pvalue > 0.01
    # median of a uniform has standard error 1 / (2 sqrt(n)) times the width
    se = (math.log(hi) - math.log(lo)) / (2 * math.sqrt(len(lams)))
    assert abs(np.median(np.log(lams)) - 0.5 * (math.log(lo) + math.log(hi))) < 3 * se


# -- loss -----------------------------------------------------------------------
def test_rate_term_is_linear_in_lambda():
    m = tiny_model()
    ds = tiny_data(4)
    loss1, ce1, bpp1 = loss_variable(m, ds.images, ds.labels, 0.01, np.random.default_rng(0))
    loss2, ce2, bpp2 = loss_variable(m, ds.images, ds.labels, 0.02, np.random.default_rng(0))
    # the embedding sees a different lambda, so compare each forward's own terms
    assert (loss1 - ce1).item() == pytest.approx(np.float32(0.01) * bpp1.item(), rel=1e-5)
    assert (loss2 - ce2).item() == pytest.approx(np.float32(0.02) * bpp2.item(), rel=1e-5)


def test_rate_term_doubles_with_lambda_for_fixed_forward():
    m = tiny_model()
    m.autoencoder.set_conditioning(False)  # forward independent of lambda
    ds = tiny_data(4)
    l1, ce1, b1 = loss_variable(m, ds.images, ds.labels, 0.01, np.random.default_rng(0))
    l2, ce2, b2 = loss_variable(m, ds.images, ds.labels, 0.02, np.random.default_rng(0))
    assert ce1.item() == ce2.item() and b1.item() == b2.item()
    assert (l2 - ce2).item() == pytest.approx(2 * (l1 - ce1).item(), rel=1e-6)


def test_small_lambda_limit_is_cross_entropy():
    m = tiny_model()
    ds = tiny_data(4)
    loss, ce, _ = loss_variable(m, ds.images, ds.labels, 1e-9, np.random.default_rng(0))
    assert abs(loss.item() - ce.item()) < 1e-6


def test_fixed_and_variable_losses_agree():
    m = tiny_model()
    ds = tiny_data(4)
    a = loss_variable(m, ds.images, ds.labels, 0.05, np.random.default_rng(3))[0].item()
    b = loss_fixed(m, ds.images, ds.labels, 0.05, np.random.default_rng(3))[0].item()
    assert a == b


def test_no_compression_loss_is_cross_entropy():
    m = tiny_model(compression=False)
    ds = tiny_data(4)
    loss, ce, bpp = loss_variable(m, ds.images, ds.labels, 1.0, np.random.default_rng(0))
    assert bpp is None and loss.item() == ce.item()


@pytest.mark.parametrize("seed", range(5))
def test_full_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    m = tiny_model(seed).astype(np.float64)
    for p in m.parameters():  # leave the zero-init residual / modulation state
        p.data = p.data + rng.standard_normal(p.shape) * 0.1
    ds = tiny_data(2, seed)
    images = ds.images.astype(np.float64)
    lam = 0.5

    def f():
        return loss_variable(m, images, ds.labels, lam, np.random.default_rng(seed))[0]

    assert check(f, m.parameters(), samples=3, seed=seed) < 1e-3


# -- config ---------------------------------------------------------------------
def test_config_round_trip():
    cfg = TrainConfig(epochs=3, seed=7, compression=False, lr0=0.02)
    assert parse_config(format_config(cfg)) == cfg


def test_config_preset_and_comments():
    cfg = parse_config("preset = full  # sixty epochs\n\nseed = 4\n")
    assert cfg.epochs == 60 and cfg.seed == 4


@pytest.mark.parametrize("text", ["bogus = 1", "epochs = many", "no equals sign", "preset = huge",
                                  "lambda_min = 0", "mode = sometimes"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- fit ------------------------------------------------------------------------
def test_fit_logs_one_row_per_epoch_and_one_lambda_per_step(tmp_path):
    cfg = tiny_cfg(epochs=3)
    res = fit(cfg, tiny_data(), tiny_data(16, 1), tmp_path, model=tiny_model())
    assert len(res.log) == 3
    assert len(res.lambdas) == res.steps == 3 * 3
    assert all(cfg.lambda_min <= v <= cfg.lambda_max for v in res.lambdas)
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,mean_ce,mean_rate_bpp,probe_top1" and len(lines) == 4
    assert (tmp_path / "checkpoint.fwt").exists()


def test_fit_is_deterministic(tmp_path):
    runs = []
    for name in ("a", "b"):
        res = fit(tiny_cfg(), tiny_data(), tiny_data(16, 1), tmp_path / name, model=tiny_model())
        runs.append(res)
    assert runs[0].log_csv() == runs[1].log_csv()
    for (na, pa), (nb, pb) in zip(runs[0].model.named_parameters(), runs[1].model.named_parameters()):
        assert na == nb
        assert pa.data.tobytes() == pb.data.tobytes()
    assert (tmp_path / "a" / "checkpoint.fwt").read_bytes() == (tmp_path / "b" / "checkpoint.fwt").read_bytes()


def test_fit_restores_subnormals():
    fit(tiny_cfg(epochs=1), tiny_data(), None, model=tiny_model())
    tiny = np.array([1e-40], np.float32)
    assert (tiny * np.float32(1.0))[0] != 0


def test_fixed_rate_mode_uses_constant_lambda():
    res = fit(tiny_cfg(mode="fixed_rate", fixed_lambda=0.01), tiny_data(), None, model=tiny_model())
    assert set(res.lambdas) == {0.01}


def test_divergence_aborts_with_diagnostics():
    with pytest.raises(TrainingDiverged, match="lambda"):
        fit(tiny_cfg(lr0=1e6, clip_norm=0.0, epochs=4), tiny_data(), None, model=tiny_model())


def test_overfit_probe_reaches_full_train_accuracy():
    ds = generate(64, seed=11)
    cfg = TrainConfig(epochs=100, batch_size=32, mode="fixed_rate", fixed_lambda=1e-4, probe_size=64)
    res = fit(cfg, ds, ds)
    assert res.steps == 200
    pred = res.model.predict(ds.images, 1e-4).argmax(1)
    assert (pred == ds.labels).mean() == 1.0
