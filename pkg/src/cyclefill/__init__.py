"""Two-stage cyclic image inpainting with artifact-scored cycle selection.

Core surface: imaging (pixels, masks, fills, compositing), distortion
(scorer training data), models (the four networks + checkpoints), losses
(style/reconstruction/joint objectives), training (three pipelines), engine
(the cycle loop), service (HTTP jobs), cli (entry points).
"""

from .engine import InpaintRequest, InpaintResult, inpaint, run_cycles, select_best
from .imaging import (
    FillPolicy,
    Sketch,
    apply_fill,
    compose_cycle_input,
    compose_refined,
    gen_mask,
    load_image,
    load_mask,
    save_image,
    save_mask,
)
from .models import ArchConfig, ModelBundle, build_bundle, load_bundle, save_bundle

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "FillPolicy",
    "InpaintRequest",
    "InpaintResult",
    "ModelBundle",
    "Sketch",
    "apply_fill",
    "build_bundle",
    "compose_cycle_input",
    "compose_refined",
    "gen_mask",
    "inpaint",
    "load_bundle",
    "load_image",
    "load_mask",
    "run_cycles",
    "save_bundle",
    "save_image",
    "save_mask",
    "select_best",
    "__version__",
]
