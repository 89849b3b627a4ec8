import time

import numpy as np
import pytest
import torch

from blurvid import blur_synth as bs
from blurvid.trainer import FrameDataset, build_model, desk_network, desk_profile, evaluate, train

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line, then assert."""
    def check(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return check


def overfit_dataset(num=8, size=64):
    cfg = bs.SynthConfig(output_size=size)
    samples = []
    for i in range(num):
        pano = bs.synthetic_panorama(2 * size, np.random.default_rng(100 + i))
        samples.append(bs.generate_rotational_sample(pano, cfg, i))
    return FrameDataset.from_samples(samples, 3, label="desk-panorama")


def _run(data, net_cfg, train_cfg):
    t0 = time.perf_counter()
    model = build_model(net_cfg, train_cfg.seed)
    before = evaluate(data, model, with_ssim=False).aggregate
    model, log = train(data, model, train_cfg)
    after = evaluate(data, model, with_ssim=False).aggregate
    return {"model": model, "log": log, "before": before, "after": after,
            "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def overfit_full():
    """Desk overfit run of the full model; about ten minutes on one CPU core."""
    torch.use_deterministic_algorithms(True)
    data = overfit_dataset()
    return data, _run(data, desk_network(), desk_profile())


@pytest.fixture(scope="session")
def overfit_baseline(overfit_full):
    """STN-only network trained with the photometric loss alone."""
    data, _ = overfit_full
    return _run(data, desk_network(use_lw=False, use_itn=False),
                desk_profile(use_tcl=False, use_pt=False))


@pytest.fixture(scope="session")
def overfit_no_refiner(overfit_full):
    data, _ = overfit_full
    return _run(data, desk_network(use_refiner=False), desk_profile())
