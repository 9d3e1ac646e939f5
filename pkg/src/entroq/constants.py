"""Physical constants shared by every model in the package.

Natural units throughout: the action unit ``hbar``, the gravitational
coupling ``grav`` and the lapse ``lapse`` are dimensionless knobs.  The
shift is identically zero in every implemented model (homogeneous
minisuperspace and flat-space lattices), so it is stored only to make
that gauge choice explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    grav: float = 1.0
    lapse: float = 1.0
    shift: float = 0.0
    alpha: float = 1.0  # relative-entropy order; 1 selects Kullback-Leibler

    def __post_init__(self):
        if not (self.hbar > 0 and math.isfinite(self.hbar)):
            raise ValueError("hbar must be positive and finite")
        if not (self.grav > 0 and math.isfinite(self.grav)):
            raise ValueError("grav must be positive and finite")
        if not (self.lapse > 0 and math.isfinite(self.lapse)):
            raise ValueError("lapse must be positive and finite")
        if self.shift != 0.0:
            raise ValueError("shift is fixed to zero in all implemented models")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive and finite")

    def with_(self, **kwargs) -> "PhysicalConstants":
        return replace(self, **kwargs)
