"""Input checks for the array-facing API."""
import numpy as np


def check_images(X, name="X"):
    """Return ``X`` as float64 ``(N, H, W, 3)`` in [0, 1].

    uint8 input is rescaled by 1/255. A single ``(H, W, 3)`` image is promoted to a batch of one.
    """
    X = np.asarray(X)
    if X.dtype == np.uint8:
        X = X.astype(np.float64) / 255.0
    elif not np.issubdtype(X.dtype, np.number):
        raise ValueError(f"{name} must be numeric, got dtype {X.dtype}")
    X = X.astype(np.float64, copy=False)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (N, H, W, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got [{X.min():.4g}, {X.max():.4g}]")
    return X


def check_sequences(y, n_frames=None, name="y"):
    """Return ``y`` as float64 ``(N, n, H, W, 3)`` in [0, 1]."""
    y = np.asarray(y)
    if y.ndim != 5:
        raise ValueError(f"{name} must have shape (N, n, H, W, 3), got {y.shape}")
    n = y.shape[1]
    flat = check_images(y.reshape((-1,) + y.shape[2:]), name)
    if n_frames is not None and n != n_frames:
        raise ValueError(f"{name} has {n} frames per sample, expected {n_frames}")
    return flat.reshape(y.shape)


def check_consistent_length(*arrays):
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent numbers of samples: {sorted(lengths)}")


def check_divisible(X, levels):
    factor = 2 ** levels
    h, w = X.shape[1:3]
    if h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} must be divisible by {factor}")
