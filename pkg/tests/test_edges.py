"""Edge detector behavior on images with known structure.

A vertical step edge must produce a thin vertical response near the step and
nothing in flat regions; a constant image has no edges at all.  Hysteresis is
checked with a two-strength image: the weak segment survives only while it is
connected to the strong one.
"""

from __future__ import annotations

import numpy as np
import pytest

from panodapt.edges import canny_edges


def _step_image(h=32, w=32, column=16):
    img = np.zeros((h, w))
    img[:, column:] = 1.0
    return img


def test_constant_image_has_no_edges():
    assert not canny_edges(np.full((20, 20), 0.5)).any()
    assert not canny_edges(np.zeros((20, 20, 3))).any()


def test_step_edge_detected_near_step_only():
    img = _step_image()
    edges = canny_edges(img)
    cols = np.nonzero(edges.any(axis=0))[0]
    assert cols.size > 0
    assert cols.min() >= 13 and cols.max() <= 18  # localized at the step
    interior = edges[4:-4, :]
    assert interior[:, 13:19].any()
    assert not edges[:, :8].any() and not edges[:, 24:].any()


def test_horizontal_edge_detected():
    img = _step_image().T
    edges = canny_edges(img)
    rows = np.nonzero(edges.any(axis=1))[0]
    assert rows.size > 0
    assert rows.min() >= 13 and rows.max() <= 18


def test_hysteresis_keeps_connected_weak_edges():
    # magnitudes are max-normalized, so hysteresis only matters when a strong
    # and a weak edge share one image; the weak one survives iff connected
    connected = np.zeros((40, 48))
    connected[:20, 16:] = 1.0
    connected[20:, 16:] = 0.7  # contrast 0.3 continuation of the same edge
    edges = canny_edges(connected, low=0.1, high=0.6)
    assert edges[5:15, 14:19].any()
    assert edges[25:35, 14:19].any()  # weak part rides along

    separate = np.zeros((40, 48))
    separate[:, 16:32] = 1.0  # strong steps at cols ~16 and ~32
    separate[:, 32:] = 0.7    # second step has contrast 0.3: weak, isolated
    edges = canny_edges(separate, low=0.1, high=0.6)
    assert edges[:, 12:20].any()
    assert not edges[:, 28:38].any()  # weak and disconnected: dropped


def test_threshold_validation():
    with pytest.raises(ValueError):
        canny_edges(np.zeros((8, 8)), low=0.5, high=0.2)
    with pytest.raises(ValueError):
        canny_edges(np.zeros((8, 8)), low=-0.1, high=0.2)
    with pytest.raises(ValueError):
        canny_edges(np.zeros((2, 2, 2, 2)))
