"""Deterministic scale-wise autoregressive text-to-image engine.

Seeded weights stand in for a pretrained checkpoint, so every mechanism
(residual accumulation, attention sharing, query blending, prompt and
feature injection) is reproducible bit for bit and testable end to end.
"""

from .analysis import (
    InfluenceCurve,
    SwapReport,
    image_distance,
    qkv_swap_study,
    stepwise_influence,
)
from .codec import FormatError, Image, decode, encode_style, read_ppm, resample_image, write_ppm
from .interventions import (
    InterventionPlan,
    QkvSwap,
    aqs,
    default_plan,
    feature_init,
    inject_prompt,
    ksas,
    neutral_plan,
    swap_qkv,
)
from .model import (
    DEFAULT_SCHEDULE,
    AttentionPacket,
    GenerationTrace,
    Model,
    ModelConfig,
    ScaleSchedule,
    cross_attention,
    generate,
    init_model,
    predict_residual,
    self_attention,
)
from .numerics import (
    FeatureMap,
    RngStream,
    bilinear_upsample,
    cosine_sim,
    matmul,
    rng_next,
    softmax_rows,
)
from .pipeline import (
    PersonalizationRequest,
    TraceBundle,
    baseline_generate,
    personalize,
    style_aligned_generate,
)
from .quantizer import BitGrid, QuantizerConfig, bits_to_map, logits_to_residual, quantize
from .textenc import TextEmbedding, build_gen_prompt, encode_prompt

__version__ = "0.1.0"
