"""Small point classifier trained from scratch.

Per-point inputs (7): height z, range r, intensity, local density within
0.5 m, and the RGB sampled at the point's projected pixel (zero when the
projection is invalid).  One tanh hidden layer feeds a softmax over the
registry classes.  A separate per-pixel head classifies raw RGB and is
supervised by projected labels.  Parameters live in one flat float64 vector;
gradients are written out by hand and checked against finite differences in
the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import project_points
from .superpoints import neighbor_counts

N_FEATURES = 7
Z_SCALE = 3.0
R_SCALE = 50.0
DENSITY_RADIUS = 0.5
DENSITY_NORM = float(np.log1p(64.0))


@dataclass(frozen=True)
class ModelShape:
    hidden_units: int = 16
    n_classes: int = 5

    def __post_init__(self):
        if self.hidden_units < 1 or self.n_classes < 2:
            raise ValueError("need hidden_units >= 1 and n_classes >= 2")

    @property
    def n_parameters(self):
        h, c = self.hidden_units, self.n_classes
        return N_FEATURES * h + h + h * c + c + 3 * c + c


def unpack(shape, theta):
    """Split the flat vector into (W1, b1, W2, b2, Wp, bp) views."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (shape.n_parameters,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({shape.n_parameters},)")
    h, c = shape.hidden_units, shape.n_classes
    parts = []
    offset = 0
    for dims in ((N_FEATURES, h), (h,), (h, c), (c,), (3, c), (c,)):
        size = int(np.prod(dims))
        parts.append(theta[offset : offset + size].reshape(dims))
        offset += size
    return tuple(parts)


def init_parameters(shape, rng):
    return rng.normal(0.0, 0.1, size=shape.n_parameters)


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def extract_features(frame, density=None, projection=None):
    """Per-point feature matrix (N, 7); heavy parts can be precomputed."""
    pos = frame.points.positions
    if density is None:
        density = neighbor_counts(pos, DENSITY_RADIUS)
    if projection is None:
        projection = project_points(
            frame.points, frame.calibration, (frame.image.width, frame.image.height)
        )
    row, col = projection.pixel_indices()
    rgb = np.zeros((pos.shape[0], 3))
    rgb[projection.valid] = frame.image.rgb[row[projection.valid], col[projection.valid]]

    x = np.empty((pos.shape[0], N_FEATURES))
    x[:, 0] = pos[:, 2] / Z_SCALE
    x[:, 1] = np.hypot(pos[:, 0], pos[:, 1]) / R_SCALE
    x[:, 2] = frame.points.features[:, 0]
    x[:, 3] = np.log1p(density) / DENSITY_NORM
    x[:, 4:7] = rgb
    return x


def supervised_pixel_indices(frame, projection=None):
    """Pixels receiving at least one projected point, labeled by the nearest.

    Returns (rows (M,), cols (M,), class_ids (M,)); ties in depth go to the
    lower point index.  Requires ground-truth labels.
    """
    if frame.labels is None:
        raise ValueError("supervised pixels need ground-truth labels")
    w, h = frame.image.width, frame.image.height
    proj = projection
    if proj is None:
        proj = project_points(frame.points, frame.calibration, (w, h))
    row, col = proj.pixel_indices()
    valid = np.nonzero(proj.valid)[0]
    if valid.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    order = valid[np.argsort(proj.depth[valid], kind="stable")]
    keys = row[order] * w + col[order]
    _, first = np.unique(keys, return_index=True)
    nearest = order[first]
    return row[nearest], col[nearest], frame.labels.class_ids()[nearest]


def supervised_pixels(frame):
    """RGB and class id per supervised pixel (see supervised_pixel_indices)."""
    rows, cols, class_ids = supervised_pixel_indices(frame)
    if rows.size == 0:
        return np.zeros((0, 3)), class_ids
    return frame.image.rgb[rows, cols], class_ids


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(shape, theta, x):
    """Class probabilities and hidden activations for a feature matrix."""
    w1, b1, w2, b2, _, _ = unpack(shape, theta)
    hidden = np.tanh(x @ w1 + b1)
    probs = np.exp(_log_softmax(hidden @ w2 + b2))
    return probs, hidden


def pixel_probs(shape, theta, rgb):
    """Aux head probabilities for any (..., 3) RGB array."""
    _, _, _, _, wp, bp = unpack(shape, theta)
    rgb = np.asarray(rgb, dtype=np.float64)
    flat = rgb.reshape(-1, 3)
    probs = np.exp(_log_softmax(flat @ wp + bp))
    return probs.reshape(rgb.shape[:-1] + (shape.n_classes,))


# ---------------------------------------------------------------------------
# losses (evaluators on predictions)
# ---------------------------------------------------------------------------

def seg_loss(probs, targets, weights):
    """Weighted mean cross-entropy; 0 when every weight is 0."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total == 0:
        return 0.0
    ce = -np.log(probs[np.arange(probs.shape[0]), targets])
    return float((weights * ce).sum() / total)


def consistency_loss(f_student, f_teacher):
    """Mean over points of the squared L2 gap between feature rows."""
    f_student = np.asarray(f_student, dtype=np.float64)
    f_teacher = np.asarray(f_teacher, dtype=np.float64)
    if f_student.shape != f_teacher.shape:
        raise ValueError("feature shapes differ")
    return float(((f_student - f_teacher) ** 2).sum(axis=1).mean())


def aux_loss(pix_probs, targets):
    """Mean cross-entropy over supervised pixels; 0 without pixels."""
    if len(targets) == 0:
        return 0.0
    ce = -np.log(pix_probs[np.arange(len(targets)), targets])
    return float(ce.mean())


# ---------------------------------------------------------------------------
# loss terms with analytic gradients (flat theta in, flat gradient out)
# ---------------------------------------------------------------------------

def _seg_backprop(shape, theta, x, g2):
    w1, b1, w2, _, _, _ = unpack(shape, theta)
    hidden = np.tanh(x @ w1 + b1)
    grad = np.zeros(shape.n_parameters)
    gw1, gb1, gw2, gb2, _, _ = unpack(shape, grad)
    gw2 += hidden.T @ g2
    gb2 += g2.sum(axis=0)
    dz1 = (g2 @ w2.T) * (1.0 - hidden * hidden)
    gw1 += x.T @ dz1
    gb1 += dz1.sum(axis=0)
    return grad


def seg_term(shape, theta, x, targets, weights):
    """Weighted cross-entropy of the point head; returns (loss, grad)."""
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total == 0:
        return 0.0, np.zeros(shape.n_parameters)
    w1, b1, w2, b2, _, _ = unpack(shape, theta)
    hidden = np.tanh(x @ w1 + b1)
    logp = _log_softmax(hidden @ w2 + b2)
    rows = np.arange(x.shape[0])
    loss = float(-(weights * logp[rows, targets]).sum() / total)
    g2 = np.exp(logp)
    g2[rows, targets] -= 1.0
    g2 *= (weights / total)[:, None]
    return loss, _seg_backprop(shape, theta, x, g2)


def consistency_term(shape, theta, x, teacher_hidden):
    """Squared feature gap to a detached teacher; returns (loss, grad)."""
    w1, b1, _, _, _, _ = unpack(shape, theta)
    hidden = np.tanh(x @ w1 + b1)
    diff = hidden - teacher_hidden
    loss = float((diff * diff).sum(axis=1).mean())
    dz1 = (2.0 / x.shape[0]) * diff * (1.0 - hidden * hidden)
    grad = np.zeros(shape.n_parameters)
    gw1, gb1, _, _, _, _ = unpack(shape, grad)
    gw1 += x.T @ dz1
    gb1 += dz1.sum(axis=0)
    return loss, grad


def aux_term(shape, theta, pixel_rgb, pixel_targets):
    """Cross-entropy of the pixel head; returns (loss, grad)."""
    if len(pixel_targets) == 0:
        return 0.0, np.zeros(shape.n_parameters)
    _, _, _, _, wp, bp = unpack(shape, theta)
    rgb = np.asarray(pixel_rgb, dtype=np.float64)
    logp = _log_softmax(rgb @ wp + bp)
    rows = np.arange(rgb.shape[0])
    loss = float(-logp[rows, pixel_targets].mean())
    gp = np.exp(logp)
    gp[rows, pixel_targets] -= 1.0
    gp /= rgb.shape[0]
    grad = np.zeros(shape.n_parameters)
    _, _, _, _, gwp, gbp = unpack(shape, grad)
    gwp += rgb.T @ gp
    gbp += gp.sum(axis=0)
    return loss, grad


def ema_update(teacher, student, momentum):
    """Exponential moving average: m * teacher + (1 - m) * student."""
    teacher = np.asarray(teacher, dtype=np.float64)
    student = np.asarray(student, dtype=np.float64)
    if teacher.shape != student.shape:
        raise ValueError("teacher/student parameter shapes differ")
    momentum = float(momentum)
    if not 0.0 <= momentum <= 1.0:
        raise ValueError("momentum must lie in [0, 1]")
    return momentum * teacher + (1.0 - momentum) * student
