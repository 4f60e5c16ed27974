"""Analytic surrogate backend: a known optimal action per terrain.

Each terrain kind owns a fixed 12-vector target a*; the per-step reward is
-(a - a*)^2 summed over dimensions, so 0 is the global per-step maximum and
the optimum is recoverable in one analytic gradient step. Observations carry
only the terrain's height signature (plus small noise), which is what lets a
policy tell terrains apart and what makes sequential training exhibit
forgetting.
"""

from __future__ import annotations

import numpy as np

from .rng import substream
from .terrain import TerrainKind, generate, height_at, sample_height_grid, terrain_label

# Fixed global seed: targets are a published constant of the artifact, never
# a function of the run seed.
SURROGATE_TARGET_SEED = 20260401


def surrogate_target(kind: TerrainKind, rough: bool = False) -> np.ndarray:
    """The optimal 12-D action for a terrain kind; entries in [-0.5, 0.5]."""
    rng = substream(SURROGATE_TARGET_SEED, "surrogate-target", terrain_label(kind, rough))
    return rng.uniform(-0.5, 0.5, size=12)


def patch_signature(patch, cfg) -> np.ndarray:
    """Canonical 187-value height signature of a patch.

    Sampled from the patch's noise-free field on the standard grid at the
    patch center, relative to the center height, with the standard clip.
    """
    clean = generate(patch.kind, patch.params, patch.seed, rough=False)
    center = height_at(clean, 0.0, 0.0)
    return sample_height_grid(
        clean,
        0.0,
        0.0,
        0.0,
        center,
        spacing_m=cfg.grid_spacing_m,
        clip_m=cfg.clip_height_m,
    )
