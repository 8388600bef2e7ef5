"""Causal diffusion policy: C++ core with chunk-wise autoregressive inference
and KV-cache sharing, exposed through a thin pybind11 layer."""

from ._core import (  # noqa: F401
    AttentionMask,
    DegradeSpec,
    Model,
    NoiseSchedule,
    PolicyGeometry,
    RolloutResult,
    ToyEnv,
    __version__,
    build_inference_mask,
    build_training_mask,
    denoise_step_x0,
    gen_demos,
    load_policy,
    make_schedule,
    q_sample,
    rollout_synthetic,
)

__all__ = [
    "AttentionMask",
    "DegradeSpec",
    "Model",
    "NoiseSchedule",
    "PolicyGeometry",
    "RolloutResult",
    "ToyEnv",
    "build_inference_mask",
    "build_training_mask",
    "denoise_step_x0",
    "gen_demos",
    "load_policy",
    "make_schedule",
    "q_sample",
    "rollout_synthetic",
]
