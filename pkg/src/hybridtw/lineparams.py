"""Per-class line quantities: surge impedance, propagation speed, MMC terminal.

All distributed parameters are per kilometre, so speeds come out in km/s and
delays are ``length_km / speed``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelError

LOSSLESS = "lossless"
LOW_LOSS = "low-loss"
OHL = "ohl"
CABLE = "cable"


@dataclass(frozen=True)
class DistributedParams:
    R: float  # ohm/km
    L: float  # H/km
    C: float  # F/km
    G: float = 0.0  # S/km, loaded but never used by the adopted approximations
    reference_frequency: float = 1e3

    def __post_init__(self):
        if not (self.L > 0 and self.C > 0):
            raise ModelError("bad-line-params", f"L and C must be > 0 (L={self.L}, C={self.C})")
        if self.R < 0:
            raise ModelError("bad-line-params", f"R must be >= 0 (R={self.R})")


@dataclass(frozen=True)
class MmcEquivalent:
    R: float  # ohm
    L: float  # H
    C: float  # F

    def __post_init__(self):
        vals = (self.R, self.L, self.C)
        if not all(np.isfinite(v) for v in vals):
            raise ModelError("bad-station", "MMC equivalent values must be finite")
        if not (self.L > 0 and self.C > 0):
            raise ModelError("bad-station", "MMC L and C must be > 0")


@dataclass(frozen=True)
class SegmentClass:
    """A catalog entry: line kind plus its distributed parameters.

    ``zs_mode`` defaults to low-loss for cables and lossless for overhead lines.
    """

    name: str
    kind: str
    params: DistributedParams
    zs_mode: str | None = None

    def __post_init__(self):
        if self.kind not in (OHL, CABLE):
            raise ModelError("bad-segment-class", f"kind must be '{OHL}' or '{CABLE}', got {self.kind!r}")
        if self.zs_mode is None:
            object.__setattr__(self, "zs_mode", LOW_LOSS if self.kind == CABLE else LOSSLESS)
        if self.zs_mode not in (LOSSLESS, LOW_LOSS):
            raise ModelError("bad-segment-class", f"unknown surge impedance mode {self.zs_mode!r}")

    @property
    def speed(self) -> float:
        return propagation_speed(self.params)

    @property
    def zs_lossless(self) -> float:
        return float(np.sqrt(self.params.L / self.params.C))


def surge_impedance(p: DistributedParams, mode: str, s=None):
    """Characteristic impedance in ohm.

    ``lossless`` gives the real constant ``sqrt(L/C)`` whatever ``s`` is.
    ``low-loss`` gives ``sqrt(L/C) * (1 + R / (2 s L))`` with G dropped; it
    has a pole at DC, so ``s == 0`` raises ``dc-pole``.
    """
    z0 = np.sqrt(p.L / p.C)
    if mode == LOSSLESS:
        if s is None or np.ndim(s) == 0:
            return float(z0)
        return np.full(np.shape(s), z0, dtype=float)
    if mode != LOW_LOSS:
        raise ModelError("bad-mode", f"unknown approximation mode {mode!r}")
    if s is None:
        raise ModelError("dc-pole", "low-loss surge impedance needs a complex frequency")
    s = np.asarray(s, dtype=complex)
    if np.any(s == 0):
        raise ModelError("dc-pole", "low-loss surge impedance is singular at s = 0")
    if p.R == 0:
        out = np.full(s.shape, z0 + 0j)
    else:
        out = z0 * (1.0 + p.R / (2.0 * s * p.L))
    return complex(out) if out.ndim == 0 else out


def propagation_speed(p: DistributedParams) -> float:
    """Lossless propagation speed ``1/sqrt(LC)`` in km/s."""
    return float(1.0 / np.sqrt(p.L * p.C))


def mmc_impedance(m: MmcEquivalent, s):
    """Series RLC terminal impedance ``R + sL + 1/(sC)``."""
    s = np.asarray(s, dtype=complex)
    if np.any(s == 0):
        raise ModelError("dc-pole", "MMC impedance is an open circuit at s = 0")
    out = m.R + s * m.L + 1.0 / (s * m.C)
    return complex(out) if out.ndim == 0 else out


def mmc_admittance(m: MmcEquivalent, s):
    """``1/Z_mmc`` with the DC bin set to its open-circuit limit (0)."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    out = np.zeros(s.shape, dtype=complex)
    nz = s != 0
    out[nz] = 1.0 / mmc_impedance(m, s[nz])
    return out


def line_admittance(cls: SegmentClass, s):
    """Characteristic admittance on a frequency grid.

    Lossless classes return a real scalar. Low-loss classes return an array
    whose DC bin uses the lossless value (the DC convention of the wave model).
    """
    if cls.zs_mode == LOSSLESS or cls.params.R == 0:
        return 1.0 / cls.zs_lossless
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    out = np.full(s.shape, 1.0 / cls.zs_lossless, dtype=complex)
    nz = s != 0
    out[nz] = 1.0 / surge_impedance(cls.params, LOW_LOSS, s[nz])
    return out
