"""Spherical mapping, rotation algebra and virtual-camera rendering.

Conventions
-----------
Camera frame: x points right, y points down, z is the optical axis.
A viewing ray ``d`` maps to equirectangular longitude/latitude through::

    d = (cos(phi) sin(theta), sin(phi), cos(phi) cos(theta))

so that panorama row 0 (``phi = -pi/2``) is straight up.

Quaternions are stored as ``(w, x, y, z)`` numpy arrays. Euler angles are
composed as ``R = Rz(bz) @ Ry(by) @ Rx(bx)`` about the camera axes, which
makes ``bz`` a roll about the optical axis.
"""
from dataclasses import dataclass

import numpy as np

EULER_ORDER = "ZYX"


class DomainError(ValueError):
    """Raised for coordinates outside an operation's domain."""


@dataclass(frozen=True)
class VirtualCamera:
    fov: float = 60.0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if not 0.0 < self.fov < 180.0:
            raise ValueError(f"fov must be in (0, 180) degrees, got {self.fov}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera size must be positive, got {self.width}x{self.height}")

    @property
    def focal(self):
        return 0.5 * self.width / np.tan(np.deg2rad(self.fov) / 2.0)


def check_panorama(pano):
    pano = np.asarray(pano, dtype=np.float64)
    if pano.ndim != 3 or pano.shape[2] != 3:
        raise ValueError(f"panorama must be HxWx3, got shape {pano.shape}")
    h, w = pano.shape[:2]
    if w != 2 * h:
        raise ValueError(f"panorama must have a 2:1 aspect ratio, got {w}x{h}")
    if not np.all(np.isfinite(pano)) or pano.min() < 0.0 or pano.max() > 1.0:
        raise ValueError("panorama values must be finite and in [0, 1]")
    return pano


def equirect_to_sphere(x, y, width, height):
    """Map panorama pixel coordinates to (longitude, latitude) in radians."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any((x < 0) | (x >= width) | (y < 0) | (y >= height)):
        raise DomainError(f"pixel outside panorama of size {width}x{height}")
    theta = 2.0 * np.pi * x / width
    phi = np.pi * (y / height) - np.pi / 2.0
    return theta, phi


def sphere_to_equirect(theta, phi, width, height):
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    x = theta * width / (2.0 * np.pi)
    y = (phi + np.pi / 2.0) * height / np.pi
    return x, y


def sphere_to_ray(theta, phi):
    cp = np.cos(phi)
    return np.stack([cp * np.sin(theta), np.sin(phi), cp * np.cos(theta)], axis=-1)


def ray_to_sphere(d):
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    theta = np.mod(np.arctan2(d[..., 0], d[..., 2]), 2.0 * np.pi)
    phi = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    return theta, phi


# -- quaternion algebra -----------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_multiply(q1, q0):
    """Hamilton product; ``R(q1 * q0) == R(q1) @ R(q0)``."""
    w1, x1, y1, z1 = q1
    w0, x0, y0, z0 = q0
    return np.array([
        w1 * w0 - x1 * x0 - y1 * y0 - z1 * z0,
        w1 * x0 + x1 * w0 + y1 * z0 - z1 * y0,
        w1 * y0 - x1 * z0 + y1 * w0 + z1 * x0,
        w1 * z0 + x1 * y0 - y1 * x0 + z1 * w0,
    ])


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=np.float64)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_to_matrix(q):
    w, x, y, z = quat_normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_angle(q0, q1):
    """Rotation angle (radians) between two orientations."""
    d = abs(float(np.dot(quat_normalize(q0), quat_normalize(q1))))
    return 2.0 * np.arccos(min(d, 1.0))


def euler_to_quaternion(beta):
    """Convert Euler angles ``(bx, by, bz)`` in degrees to a unit quaternion.

    The composition is ``Rz(bz) @ Ry(by) @ Rx(bx)``.
    """
    bx, by, bz = np.deg2rad(np.asarray(beta, dtype=np.float64))
    if not np.all(np.isfinite([bx, by, bz])):
        raise ValueError("Euler angles must be finite")
    qx = quat_from_axis_angle([1.0, 0.0, 0.0], bx)
    qy = quat_from_axis_angle([0.0, 1.0, 0.0], by)
    qz = quat_from_axis_angle([0.0, 0.0, 1.0], bz)
    return quat_normalize(quat_multiply(qz, quat_multiply(qy, qx)))


def slerp(q0, q1, t):
    """Spherical linear interpolation along the shorter arc.

    Falls back to normalized linear interpolation when the inputs are
    nearly parallel.
    """
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    if np.array_equal(q0, q1):
        return q0.copy()
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-7:
        return quat_normalize((1.0 - t) * q0 + t * q1)
    omega = np.arccos(dot)
    so = np.sin(omega)
    return (np.sin((1.0 - t) * omega) / so) * q0 + (np.sin(t * omega) / so) * q1


def random_quaternion(rng):
    """Uniformly distributed random rotation."""
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


# -- rendering --------------------------------------------------------------

def sample_panorama(pano, x, y):
    """Bilinear lookup with longitude wrap-around and latitude clamping."""
    h, w = pano.shape[:2]
    x = np.mod(x, w)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 %= w
    x1 = (x0 + 1) % w
    y1 = np.minimum(y0 + 1, h - 1)
    top = pano[y0, x0] * (1.0 - fx) + pano[y0, x1] * fx
    bottom = pano[y1, x0] * (1.0 - fx) + pano[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def camera_rays(cam):
    u = np.arange(cam.width, dtype=np.float64) - (cam.width - 1) / 2.0
    v = np.arange(cam.height, dtype=np.float64) - (cam.height - 1) / 2.0
    uu, vv = np.meshgrid(u, v)
    rays = np.stack([uu, vv, np.full_like(uu, cam.focal)], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def render_view(pano, orientation, cam=VirtualCamera()):
    """Render a pinhole view of ``pano`` from a camera with the given orientation."""
    pano = np.asarray(pano, dtype=np.float64)
    h, w = pano.shape[:2]
    rot = quat_to_matrix(orientation)
    world = camera_rays(cam) @ rot.T
    theta, phi = ray_to_sphere(world)
    x, y = sphere_to_equirect(theta, phi, w, h)
    return sample_panorama(pano, x, y)


def rotate_panorama(pano, q):
    """Resample ``pano`` so that looking along ``d`` sees the original along ``R(q) d``."""
    pano = np.asarray(pano, dtype=np.float64)
    h, w = pano.shape[:2]
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    xx, yy = np.meshgrid(xs, ys)
    theta, phi = equirect_to_sphere(xx, yy, w, h)
    d = sphere_to_ray(theta, phi) @ quat_to_matrix(q).T
    t2, p2 = ray_to_sphere(d)
    x, y = sphere_to_equirect(t2, p2, w, h)
    return sample_panorama(pano, x, y)
