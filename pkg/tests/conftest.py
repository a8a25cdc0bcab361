"""Session fixtures for the long-running acceptance checks, plus the criterion summary."""
import time

import pytest

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def _acceptance_run(out_dir, **overrides):
    from varfc.bench import default_lambda_grid, sweep
    from varfc.data import make_splits
    from varfc.train import TrainConfig, fit

    cfg = TrainConfig(**overrides)
    train, test = make_splits(cfg.seed, cfg.n_train, cfg.n_test)
    t0 = time.perf_counter()
    res = fit(cfg, train, test, out_dir)
    t1 = time.perf_counter()
    sw = sweep(res.model, test, default_lambda_grid()) if cfg.compression else None
    t2 = time.perf_counter()
    return {"cfg": cfg, "result": res, "model": res.model, "test": test, "sweep": sw,
            "train_s": t1 - t0, "sweep_s": t2 - t1, "log_csv": res.log_csv(),
            "sweep_csv": sw.csv() if sw else None}


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """The Config.1 variable-rate model: 15 epochs, seed 0, default grid sweep."""
    return _acceptance_run(tmp_path_factory.mktemp("run_main"))


@pytest.fixture(scope="session")
def trained_repeat(tmp_path_factory, trained):
    return _acceptance_run(tmp_path_factory.mktemp("run_repeat"))


@pytest.fixture(scope="session")
def baseline(tmp_path_factory):
    """Identically trained split classifier without the compression path."""
    from varfc.train import probe_accuracy

    run = _acceptance_run(tmp_path_factory.mktemp("run_baseline"), compression=False)
    run["top1"] = probe_accuracy(run["model"], run["test"], 1e-4)
    return run
