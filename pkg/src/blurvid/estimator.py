"""scikit-learn style wrapper around the network and training loop."""
import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .network import NetworkConfig
from .trainer import FrameDataset, TrainConfig, build_model, evaluate, train
from .validation import check_consistent_length, check_divisible, check_images, check_sequences


def _to_chw(X):
    return torch.as_tensor(np.ascontiguousarray(np.moveaxis(X, -1, -3)), dtype=torch.float32)


class BlurVideoRestorer(BaseEstimator):
    """Recover a short frame sequence from a single blurred image.

    ``fit`` takes blurred images ``X`` of shape ``(N, H, W, 3)`` and target
    sequences ``y`` of shape ``(N, n_frames, H, W, 3)``. ``predict`` returns
    sequences in the same layout. ``score`` is the mean order-invariant PSNR.
    """

    def __init__(self, n_frames=3, levels=5, width=1.0, use_lw=True, use_itn=True,
                 use_refiner=True, use_tcl=True, use_pt=True, lambda_tc=0.1, lambda_p=0.01,
                 learning_rate=1e-4, epochs=80, decay_epochs=(40, 60), batch_size=8,
                 random_state=0):
        self.n_frames = n_frames
        self.levels = levels
        self.width = width
        self.use_lw = use_lw
        self.use_itn = use_itn
        self.use_refiner = use_refiner
        self.use_tcl = use_tcl
        self.use_pt = use_pt
        self.lambda_tc = lambda_tc
        self.lambda_p = lambda_p
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.decay_epochs = decay_epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _configs(self, size):
        net = NetworkConfig(k=self.levels, n=self.n_frames, width=self.width, use_lw=self.use_lw,
                            use_itn=self.use_itn, use_refiner=self.use_refiner)
        tr = TrainConfig(lr=self.learning_rate, epochs=self.epochs,
                         decay_epochs=tuple(self.decay_epochs), batch_size=self.batch_size,
                         input_size=size, n_frames=self.n_frames, seed=self.random_state,
                         use_tcl=self.use_tcl, use_pt=self.use_pt,
                         lambda_tc=self.lambda_tc, lambda_p=self.lambda_p, log_every=0)
        return net, tr

    def fit(self, X, y):
        X = check_images(X)
        y = check_sequences(y, self.n_frames)
        check_consistent_length(X, y)
        if y.shape[2:] != X.shape[1:]:
            raise ValueError(f"frame shape {y.shape[2:]} does not match image shape {X.shape[1:]}")
        check_divisible(X, self.levels)
        net_cfg, train_cfg = self._configs(X.shape[1])
        data = FrameDataset(_to_chw(X), _to_chw(y), ids=list(range(len(X))))
        model = build_model(net_cfg, self.random_state)
        self.model_, self.run_log_ = train(data, model, train_cfg)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_images(X)
        check_divisible(X, self.levels)
        self.model_.eval()
        with torch.no_grad():
            out = self.model_(_to_chw(X)).frames().clamp(0.0, 1.0)
        return np.moveaxis(out.numpy().astype(np.float64), -3, -1)

    def score(self, X, y):
        check_is_fitted(self, "model_")
        X = check_images(X)
        y = check_sequences(y, self.n_frames)
        check_consistent_length(X, y)
        data = FrameDataset(_to_chw(X), _to_chw(y), ids=list(range(len(X))))
        return evaluate(data, self.model_, with_ssim=False).aggregate["psnr_mean"]
