"""Physical constants in the package unit system.

Units used throughout: time in ns, angular frequency in rad/ns, energy in
µeV, temperature in mK, voltage in units of Delta/e (so e*V is in units of the
superconducting gap).
"""
from dataclasses import dataclass
import math

from scipy import constants as _sc

_EV = _sc.electron_volt


@dataclass(frozen=True)
class PhysicalConstants:
    h: float = _sc.h / _EV * 1e6 * 1e9  # µeV·ns
    hbar: float = _sc.hbar / _EV * 1e6 * 1e9  # µeV·ns
    kB: float = _sc.k / _EV * 1e6 * 1e-3  # µeV/mK
    e_charge: float = _sc.e  # C, only used for nA <-> normalized current

    def __post_init__(self):
        for name in ("h", "hbar", "kB", "e_charge"):
            if not getattr(self, name) > 0:
                raise ValueError(f"physical constant {name} must be positive")
        if not math.isclose(self.hbar, self.h / (2 * math.pi), rel_tol=1e-14):
            raise ValueError("hbar must equal h / (2 pi)")


CONST = PhysicalConstants()
HBAR = CONST.hbar
H_PLANCK = CONST.h
KB = CONST.kB

TWO_PI = 2.0 * math.pi


def ghz(f: float) -> float:
    """Angular frequency in rad/ns for an ordinary frequency in GHz."""
    return TWO_PI * f


def mhz(f: float) -> float:
    return TWO_PI * f * 1e-3
