"""Flat key=value run configuration shared by every CLI subcommand.

The file format is one ``key = value`` pair per line; ``#`` starts a comment
and blank lines are skipped.  Every key has a default below, values are
coerced to the default's type, and unknown keys are rejected so typos fail
loudly instead of silently running with defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .modaldrop import DropRatios
from .synth import SceneConfig, ShiftParams
from .trainer import DomainAdapter


@dataclass
class RunConfig:
    # dataset generation
    frames: int = 50
    seed: int = 0
    object_count_min: int = 2
    object_count_max: int = 6
    points_per_object_min: int = 60
    points_per_object_max: int = 240
    ground_points: int = 1200
    wall_points: int = 300
    extent: float = 20.0
    sensor_height: float = 1.7
    object_sector: float = 0.55
    image_width: int = 640
    image_height: int = 360
    focal: float = 350.0

    # target-domain shift
    shift_gamma: float = 2.2
    shift_noise_sigma: float = 0.02
    shift_drop_prob: float = 0.3
    shift_beam_keep: float = 0.5
    shift_feature_noise: float = 0.0

    # modality dropout
    drop_image_prob: float = 0.5
    drop_image_boundary: float = 0.5
    drop_lidar_boundary: float = 0.7
    drop_image_instance: float = 0.5
    drop_lidar_instance: float = 0.5
    drop_patch_size: int = 32
    drop_edge_fraction: float = 0.02
    drop_edge_low: float = 0.1
    drop_edge_high: float = 0.2
    drop_content_agnostic: bool = False

    # geometric superpoints
    cluster_eps: float = 0.5
    cluster_min_pts: int = 10
    ransac_iterations: int = 256
    ransac_threshold: float = 0.15

    # pseudo-label refinement
    thing_conf_threshold: float = 0.63
    stuff_keep_fraction: float = 0.8
    reassign_bound: float = 0.2
    overlap_min: float = 0.5
    min_mask_points: int = 5

    # stand-in 2D proposals
    proposal_flip_prob: float = 0.1
    proposal_erosion: int = 1
    proposal_conf_min: float = 0.7
    proposal_conf_max: float = 0.95

    # training
    hidden_units: int = 16
    learning_rate: float = 0.0004
    ema_momentum: float = 0.99
    pretrain_iterations: int = 500
    adapt_iterations: int = 1000
    eval_interval: int = 250
    use_modal_dropout: bool = True
    use_refinement: bool = True

    # -- builders ------------------------------------------------------------

    def to_scene_config(self, seed=None, registry=None):
        kwargs = {"seed": self.seed if seed is None else seed}
        if registry is not None:
            kwargs["registry"] = registry
        return SceneConfig(
            object_count=(self.object_count_min, self.object_count_max),
            points_per_object=(self.points_per_object_min, self.points_per_object_max),
            ground_points=self.ground_points,
            wall_points=self.wall_points,
            extent=self.extent,
            sensor_height=self.sensor_height,
            object_sector=self.object_sector,
            image_size=(self.image_width, self.image_height),
            focal=self.focal,
            **kwargs,
        )

    def to_shift_params(self):
        return ShiftParams(
            image_gamma=self.shift_gamma,
            image_noise_sigma=self.shift_noise_sigma,
            point_drop_prob=self.shift_drop_prob,
            beam_keep_fraction=self.shift_beam_keep,
            feature_noise_sigma=self.shift_feature_noise,
        )

    def to_drop_ratios(self):
        return DropRatios(
            image_boundary=self.drop_image_boundary,
            lidar_boundary=self.drop_lidar_boundary,
            image_instance=self.drop_image_instance,
            lidar_instance=self.drop_lidar_instance,
            image_prob=self.drop_image_prob,
            patch_size=self.drop_patch_size,
            edge_fraction_min=self.drop_edge_fraction,
            edge_low=self.drop_edge_low,
            edge_high=self.drop_edge_high,
            content_agnostic=self.drop_content_agnostic,
        )

    def to_adapter(self, seed=None):
        return DomainAdapter(
            hidden_units=self.hidden_units,
            learning_rate=self.learning_rate,
            ema_momentum=self.ema_momentum,
            pretrain_iterations=self.pretrain_iterations,
            adapt_iterations=self.adapt_iterations,
            eval_interval=self.eval_interval,
            use_modal_dropout=self.use_modal_dropout,
            use_refinement=self.use_refinement,
            cluster_eps=self.cluster_eps,
            cluster_min_pts=self.cluster_min_pts,
            ransac_iterations=self.ransac_iterations,
            ransac_threshold=self.ransac_threshold,
            thing_conf_threshold=self.thing_conf_threshold,
            stuff_keep_fraction=self.stuff_keep_fraction,
            reassign_bound=self.reassign_bound,
            overlap_min=self.overlap_min,
            min_mask_points=self.min_mask_points,
            drop_ratios=self.to_drop_ratios(),
            seed=self.seed if seed is None else seed,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key, text):
    if key not in _FIELDS:
        raise ValueError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key!r} expects a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        return float(text)
    except ValueError:
        raise ValueError(f"config key {key!r} expects {type(default).__name__}, got {text!r}")


def parse_config(text):
    """RunConfig from key = value lines; '#' comments, unknown keys rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"config line {lineno} is not 'key = value': {raw!r}")
        key = key.strip()
        values[key] = _coerce(key, value)
    return RunConfig(**values)


def read_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def apply_overrides(config, overrides):
    """New RunConfig with 'key=value' strings applied on top."""
    values = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override is not 'key=value': {item!r}")
        key = key.strip()
        values[key] = _coerce(key, value)
    return dataclasses.replace(config, **values)


def dump_config(config):
    """Canonical text form, keys sorted."""
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(config, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
