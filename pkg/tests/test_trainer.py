import numpy as np
import pytest
import torch

from blurvid import blur_synth as bs
from blurvid.network import NetworkConfig, load_checkpoint
from blurvid.objectives import PSNR_CAP, psnr
from blurvid.trainer import (FrameDataset, NumericalError, TrainConfig, build_model, desk_profile,
                             cross_evaluate, evaluate, frame_labels, lr_at, paper_profile,
                             rotation_bins, run_hash, train)


def tiny_net(**kw):
    params = dict(k=2, n=3, width=0.125, regressor_channels=4, refiner_channels=4)
    params.update(kw)
    return NetworkConfig(**params)


def short(**kw):
    params = dict(lr=1e-3, epochs=3, decay_epochs=(2,), batch_size=2, input_size=16, log_every=0)
    params.update(kw)
    return TrainConfig(**params)


@pytest.fixture(scope="module")
def data():
    pano = bs.synthetic_panorama(32, np.random.default_rng(0))
    cfg = bs.SynthConfig(output_size=16)
    samples = [bs.generate_rotational_sample(pano, cfg, i) for i in range(6)]
    return FrameDataset.from_samples(samples, 3, label="toy", dtype=torch.float64)


class TestSchedule:
    @pytest.mark.parametrize("epoch, lr", [(1, 1e-4), (39, 1e-4), (40, 5e-5), (59, 5e-5), (60, 2.5e-5),
                                           (80, 2.5e-5)])
    def test_reported_schedule(self, epoch, lr):
        assert lr_at(epoch, paper_profile()) == pytest.approx(lr, rel=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_at(0, paper_profile())
        with pytest.raises(ValueError):
            lr_at(81, paper_profile())

    def test_dry_run_trace(self, data):
        cfg = paper_profile()
        _, log = train(data, build_model(tiny_net()), cfg, dry_run=True)
        assert not log.steps
        assert sorted(log.lr_trace) == list(range(1, 81))
        assert {log.lr_trace[e] for e in range(1, 40)} == {1e-4}
        assert {log.lr_trace[e] for e in range(40, 60)} == {5e-5}
        assert {log.lr_trace[e] for e in range(60, 81)} == {2.5e-5}

    def test_lr_applied_to_optimizer(self, data):
        _, log = train(data, build_model(tiny_net()), short())
        assert [s["lr"] for s in log.steps] == [1e-3] * 3 + [5e-4] * 6

    def test_profiles(self):
        gopro = paper_profile("gopro")
        assert (gopro.batch_size, gopro.input_size, gopro.n_frames) == (4, 256, 7)
        p = paper_profile()
        assert (p.batch_size, p.input_size, p.n_frames, p.beta1, p.beta2) == (8, 128, 3, 0.9, 0.999)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(decay_epochs=(60, 40))
        with pytest.raises(ValueError):
            TrainConfig(epochs=10, decay_epochs=(40,))


class TestTraining:
    def test_deterministic(self, data):
        torch.use_deterministic_algorithms(True)
        try:
            runs = [train(data, build_model(tiny_net(), seed=5).double(), short(seed=2))[1]
                    for _ in range(2)]
        finally:
            torch.use_deterministic_algorithms(False)
        assert runs[0].column("loss") == runs[1].column("loss")

    def test_non_finite_loss(self, data, tmp_path):
        bad = data.subset(range(len(data)))
        bad.targets = bad.targets.clone()
        bad.targets[0, 0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericalError, match="non-finite"):
            train(bad, build_model(tiny_net()).double(), short(batch_size=6), run_dir=tmp_path)
        assert (tmp_path / "nonfinite_batch.pt").exists()

    def test_frame_count_mismatch(self, data):
        with pytest.raises(ValueError, match="frames"):
            train(data, build_model(tiny_net(n=5)), short())

    def test_ablation_hashes_and_flags(self, data):
        runs = {"full": (tiny_net(), short()),
                "no_lw": (tiny_net(use_lw=False), short()),
                "no_itn": (tiny_net(use_itn=False), short()),
                "no_tcl": (tiny_net(), short(use_tcl=False)),
                "no_pt": (tiny_net(), short(use_pt=False))}
        assert len({run_hash(*cfgs) for cfgs in runs.values()}) == len(runs)
        base_net, base_tc = tiny_net(use_lw=False, use_itn=False), short(use_tcl=False, use_pt=False)
        _, log = train(data, build_model(base_net), base_tc, dry_run=True)
        assert log.flags == {"use_lw": False, "use_itn": False, "use_refiner": True,
                             "use_tcl": False, "use_pt": False}

    def test_run_dir_outputs(self, data, tmp_path):
        model, log = train(data, build_model(tiny_net()).double(), short(checkpoint_every=2),
                           run_dir=tmp_path)
        assert (tmp_path / "checkpoints" / "epoch_0002.pt").exists()
        assert (tmp_path / "runlog.csv").read_text().count("\n") == len(log.steps) + 1


class TestEvaluate:
    def test_ground_truth_predictor(self, data):
        res = evaluate(data, lambda x: data.targets[:x.shape[0]].double())
        for label in frame_labels(3):
            assert res.aggregate[f"psnr_{label}"] == PSNR_CAP
            assert res.aggregate[f"ssim_{label}"] == pytest.approx(1.0)

    def test_blur_predictor(self, data):
        def repeat(x):
            return x.unsqueeze(1).repeat(1, 3, 1, 1, 1).double()
        res = evaluate(data, repeat, batch_size=4, with_ssim=False)
        expected = np.mean([
            psnr(data.blurred[i].permute(1, 2, 0).numpy(), data.targets[i, 1].permute(1, 2, 0).numpy())
            for i in range(len(data))])
        assert res.aggregate["psnr_F_m"] == pytest.approx(expected, abs=1e-9)
        assert res.aggregate["blur_psnr_middle"] == pytest.approx(expected, abs=1e-9)

    def test_rotation_curve_counts(self, data):
        res = evaluate(data, lambda x: data.targets[:x.shape[0]], with_ssim=False)
        assert sum(b["count"] for b in res.curve) == len(data)

    def test_bins_partition(self):
        rng = np.random.default_rng(0)
        mags = np.concatenate([rng.uniform(0, 17.32, 200), [0.0, 17.320508075688775]])
        edges = np.linspace(0, 10 * np.sqrt(3), 7)
        bins = rotation_bins(mags, edges)
        flat = sorted(i for b in bins for i in b)
        assert flat == list(range(len(mags)))

    def test_cross_evaluate(self, data):
        model = build_model(tiny_net()).double()
        same = evaluate(data, model, with_ssim=False)
        cross = cross_evaluate(model, data, "train-set", "eval-set", with_ssim=False)
        assert cross.labels == {"train": "train-set", "eval": "eval-set"}
        assert cross.aggregate == same.aggregate

    def test_checkpoint_roundtrip_report(self, data, tmp_path):
        model, _ = train(data, build_model(tiny_net()), short(), run_dir=tmp_path)
        loaded, extra = load_checkpoint(tmp_path / "checkpoints" / "final.pt", expected=model.config)
        assert extra["epoch"] == 3
        assert evaluate(data, loaded).aggregate == evaluate(data, model).aggregate


@pytest.mark.slow
class TestOverfitSuite:
    """Invariants over the shared desk-scale training runs."""

    def test_loss_finite_and_smoothed_trace_decreasing(self, overfit_full):
        loss = np.array(overfit_full[1]["log"].column("loss"))
        assert np.all(np.isfinite(loss))
        ma = np.convolve(loss, np.ones(50) / 50, mode="valid")[50:]
        assert np.all(np.diff(ma) <= 0), np.diff(ma).max()

    def test_lr_trace_matches_schedule(self, overfit_full):
        log = overfit_full[1]["log"]
        cfg = desk_profile()
        assert all(s["lr"] == lr_at(s["epoch"], cfg) for s in log.steps)

    def test_refiner_improves_training_psnr(self, overfit_full, overfit_no_refiner):
        with_refiner = overfit_full[1]["after"]["psnr_mean"]
        assert with_refiner >= overfit_no_refiner["after"]["psnr_mean"]
