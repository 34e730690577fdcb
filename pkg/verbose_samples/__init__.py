"""
verbose-samples — Energy-latency attacks on vision-language captioners

Crafts imperceptible pixel perturbations that make an autoregressive
image/video captioner produce long outputs, and measures what that costs.

Includes:
- numerics: entropy, KL-to-uniform, SVD / nuclear norm, finite differences
- victim: toy shape-world captioners (image and video), training, checkpoints
- attack: delayed-EOS / uncertainty / diversity objectives, temporal
  weight schedule with momentum, L∞ PGD, baseline methods
- harness: latency/energy measurement, CHAIR, attention dispersion,
  saliency, statistics, ablation / transfer / sweep grids
"""

__version__ = "0.1.0"

from verbose_samples.attack import AttackResult, attack, run_method
from verbose_samples.core.config import AttackConfig, RunConfig, VictimConfig, WeightSchedule
from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError
from verbose_samples.victim import (
    DecodePolicy, PixelSample, ToyCaptioner, build_victim, generate, load_checkpoint, make_shape_world,
)

__all__ = [
    "AttackConfig", "AttackResult", "DecodePolicy", "FailCode", "PixelSample", "RunConfig",
    "ToyCaptioner", "VerboseSamplesError", "VictimConfig", "WeightSchedule",
    "attack", "build_victim", "generate", "load_checkpoint", "make_shape_world", "run_method",
]
