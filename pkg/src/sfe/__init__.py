"""Semantic field editing on generative radiance manifolds.

A generator factored into geometry and appearance networks joined by a
differentiable semantic volume-masking layer, trained adversarially, with
pivotal inversion for mask-driven editing and per-semantic transfer. Exposed
as a library, a CLI (``sfe``) and an HTTP service.
"""

__version__ = "0.1.0"

from .config import TrainConfig, load_config, save_config  # noqa: F401
from .core import CameraPose, sample_latent, sample_pose  # noqa: F401
from .render import Generator, render_frame, render_semantic_only  # noqa: F401
