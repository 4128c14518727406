"""Seeded, platform-stable random streams.

One master seed deterministically spawns independent substreams through
numpy seed sequences feeding counter-based Philox generators. Each filter
step consumes its substreams in a fixed purpose order (resampling draws,
state innovations, drift innovations, parameter innovations), so particles
can be processed vectorized or in parallel without changing any result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Purpose codes, in the order draws are consumed within one filter step.
RESAMPLE_DRAWS = 0
STATE_INNOVATIONS = 1
DRIFT_INNOVATIONS = 2
PARAM_INNOVATIONS = 3

# Spawn-key domains keep initialization, stepping, and data corruption apart.
_INIT_DOMAIN = 0
_STEP_DOMAIN = 1
_DATA_DOMAIN = 2


@dataclass(frozen=True)
class RngStream:
    """Master seed from which every substream of one run is derived."""

    seed: int

    def _generator(self, path: tuple[int, ...]) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=path)
        return np.random.Generator(np.random.Philox(ss))

    def init_stream(self, purpose: int) -> np.random.Generator:
        """Substream for prior draws (states, parameters, drift constants)."""
        return self._generator((_INIT_DOMAIN, purpose))

    def step_stream(self, step: int, purpose: int) -> np.random.Generator:
        """Substream for one purpose within one observation-update step."""
        return self._generator((_STEP_DOMAIN, step, purpose))

    def data_stream(self) -> np.random.Generator:
        """Substream for observation-noise corruption."""
        return self._generator((_DATA_DOMAIN,))
