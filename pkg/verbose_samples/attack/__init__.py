"""Attack objectives, weight schedule, feasibility gate and the PGD loop."""

from verbose_samples.attack.gate import FeasibilityGate, GateResult
from verbose_samples.attack.objectives import (
    LossVector,
    composite_loss,
    compute_losses,
    delayed_eos_loss,
    frame_diversity_loss,
    nicg_objective,
    sponge_objective,
    token_diversity_loss,
    uncertainty_loss,
)
from verbose_samples.attack.pgd import AttackResult, attack, pgd_step, project, run_method
from verbose_samples.attack.schedule import (
    WeightState, compute_weights, momentum_update, temporal_decay,
)

__all__ = [
    "AttackResult", "FeasibilityGate", "GateResult", "LossVector", "WeightState",
    "attack", "composite_loss", "compute_losses", "compute_weights", "delayed_eos_loss",
    "frame_diversity_loss", "momentum_update", "nicg_objective", "pgd_step", "project",
    "run_method", "sponge_objective", "temporal_decay", "token_diversity_loss",
    "uncertainty_loss",
]
