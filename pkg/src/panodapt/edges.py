"""Edge detection for boundary-patch discovery.

Classic Canny on the camera image: Gaussian blur (sigma 1.4, 5x5 kernel),
Sobel gradients, non-maximum suppression along the quantized gradient
direction, then double-threshold hysteresis on the max-normalized magnitude.
"""

import numpy as np
from scipy import ndimage

from .core import CameraImage

GAUSSIAN_SIGMA = 1.4
GAUSSIAN_SIZE = 5

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T


def _gaussian_kernel(size=GAUSSIAN_SIZE, sigma=GAUSSIAN_SIGMA):
    half = size // 2
    y, x = np.mgrid[-half : half + 1, -half : half + 1]
    kernel = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _to_gray(image):
    if isinstance(image, CameraImage):
        image = image.rgb
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        return image @ np.array([0.299, 0.587, 0.114])
    if image.ndim == 2:
        return image
    raise ValueError(f"expected a 2-D gray or (H,W,3) image, got shape {image.shape}")


def _nonmax_suppress(magnitude, gx, gy):
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    h, w = magnitude.shape
    padded = np.pad(magnitude, 1, mode="constant")

    def shifted(dy, dx):
        return padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    out = np.zeros_like(magnitude)
    # 0 deg: compare left/right, 45: diagonal, 90: up/down, 135: anti-diagonal
    sectors = [
        ((angle < 22.5) | (angle >= 157.5), (0, 1), (0, -1)),
        ((angle >= 22.5) & (angle < 67.5), (1, 1), (-1, -1)),
        ((angle >= 67.5) & (angle < 112.5), (1, 0), (-1, 0)),
        ((angle >= 112.5) & (angle < 157.5), (-1, 1), (1, -1)),
    ]
    for sel, (dy1, dx1), (dy2, dx2) in sectors:
        keep = sel & (magnitude >= shifted(dy1, dx1)) & (magnitude >= shifted(dy2, dx2))
        out[keep] = magnitude[keep]
    return out


def canny_edges(image, low=0.1, high=0.2):
    """Boolean edge map of the image.

    ``low`` and ``high`` are hysteresis thresholds on the gradient magnitude
    after max-normalization to [0, 1]; 0 <= low <= high is required.
    """
    low = float(low)
    high = float(high)
    if not 0.0 <= low <= high:
        raise ValueError(f"thresholds must satisfy 0 <= low <= high, got {low}, {high}")
    gray = _to_gray(image)
    blurred = ndimage.convolve(gray, _gaussian_kernel(), mode="reflect")
    gx = ndimage.convolve(blurred, SOBEL_X, mode="reflect")
    gy = ndimage.convolve(blurred, SOBEL_Y, mode="reflect")
    magnitude = np.hypot(gx, gy)
    peak = magnitude.max()
    # convolution round-off leaves ~1e-16 residue on constant images; such a
    # peak is noise, not signal, and must not be normalized up to 1.0
    if peak <= 1e-9:
        return np.zeros(gray.shape, dtype=bool)
    magnitude /= peak

    thin = _nonmax_suppress(magnitude, gx, gy)
    strong = thin >= high
    weak = thin >= low
    if not strong.any():
        return np.zeros(gray.shape, dtype=bool)
    # keep weak components that touch a strong pixel (8-connected)
    labels, _ = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    keep = np.unique(labels[strong])
    return np.isin(labels, keep[keep > 0])
