"""Measurement, interpretation metrics, statistics, experiment grids and report writers."""

from verbose_samples.harness.experiments import (
    EvalSettings,
    SampleRecord,
    ablation_suite,
    craft_samples,
    diversity_variants,
    epsilon_sweep,
    evaluate_samples,
    summarize,
    task_comparison,
    transfer_eval,
)
from verbose_samples.harness.interpret import (
    attention_dispersion, chair_metrics, perceptibility, saliency_map,
)
from verbose_samples.harness.measure import (
    ExternalCommandMeter,
    NullMeter,
    PowerProxyMeter,
    fit_linearity,
    linearity_check,
    make_meter,
    measure_generation,
)
from verbose_samples.harness.reports import Table
from verbose_samples.harness.stats import length_histogram, mann_whitney, sign_test

__all__ = [
    "EvalSettings", "ExternalCommandMeter", "NullMeter", "PowerProxyMeter", "SampleRecord", "Table",
    "ablation_suite", "attention_dispersion", "chair_metrics", "craft_samples", "diversity_variants",
    "epsilon_sweep", "evaluate_samples", "fit_linearity", "length_histogram", "linearity_check",
    "make_meter", "mann_whitney", "measure_generation", "perceptibility", "saliency_map",
    "sign_test", "summarize", "task_comparison", "transfer_eval",
]
