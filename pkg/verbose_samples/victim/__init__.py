"""Differentiable toy captioner, shape-world corpus, training and checkpoints."""

from verbose_samples.victim.checkpoint import load_checkpoint, save_checkpoint
from verbose_samples.victim.model import (
    ToyCaptioner,
    backward_to_input,
    build_victim,
    encode_image,
    encode_video,
    generate,
    input_gradient,
    loss_value,
    sequence_log_prob,
    teacher_forced_forward,
)
from verbose_samples.victim.samples import (
    DecodePolicy, ForwardPass, GenerationTrace, PixelSample, SampleKind,
)
from verbose_samples.victim.shape_world import (
    ShapeWorld, ShapeWorldItem, export_dataset, load_dataset, make_shape_world,
)
from verbose_samples.victim.train import token_accuracy, train_toy
from verbose_samples.victim.vocab import VocabSpec

__all__ = [
    "DecodePolicy", "ForwardPass", "GenerationTrace", "PixelSample", "SampleKind",
    "ShapeWorld", "ShapeWorldItem", "ToyCaptioner", "VocabSpec",
    "backward_to_input", "build_victim", "encode_image", "encode_video",
    "export_dataset", "generate", "input_gradient", "load_checkpoint", "load_dataset",
    "loss_value", "make_shape_world", "save_checkpoint", "sequence_log_prob",
    "teacher_forced_forward", "token_accuracy", "train_toy",
]
