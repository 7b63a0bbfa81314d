"""AWGN and quasi-static Rayleigh wiretap channels.

Noise powers are normalised so that ``N_M = N_W = 1`` unless stated
otherwise; a fading coefficient with mean SNR ``g`` is then ``CN(0, g)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int], np.random.SeedSequence]


def rng_for(seed: Seed, *keys: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *keys)``.

    Streams that differ in any key are statistically independent, e.g.
    ``rng_for(seed, frame, BRANCH_EVE)`` vs ``rng_for(seed, frame, BRANCH_BOB)``.
    """
    if isinstance(seed, np.random.SeedSequence):
        base = [int(v) for v in seed.generate_state(4)]
    elif isinstance(seed, (int, np.integer)):
        base = [int(seed)]
    else:
        base = [int(s) for s in seed]
    if any(k < 0 for k in base + list(keys)):
        raise ValueError("seeds and stream keys must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(base + [int(k) for k in keys])))


# stream identifiers inside one frame
BRANCH_SOURCE = 0
BRANCH_BOB = 1
BRANCH_EVE = 2
BRANCH_FADING = 3
BRANCH_CSI = 4
BRANCH_HASH = 5


@dataclass(frozen=True)
class GaussianWiretapParams:
    noise_var_main: float
    noise_var_wiretap: float
    power: float = 1.0
    allow_stronger_eavesdropper: bool = False

    def __post_init__(self):
        if not (self.noise_var_main > 0 and self.noise_var_wiretap > 0):
            raise ValueError("noise variances must be positive")
        if not self.power > 0:
            raise ValueError("power must be positive")
        if not self.allow_stronger_eavesdropper and self.noise_var_wiretap <= self.noise_var_main:
            raise ValueError(
                "eavesdropper channel must be noisier than the main channel "
                "(set allow_stronger_eavesdropper to override)"
            )

    @property
    def capacity_main(self) -> float:
        return gaussian_capacity(self.noise_var_main / self.power)

    @property
    def capacity_wiretap(self) -> float:
        return gaussian_capacity(self.noise_var_wiretap / self.power)

    @property
    def secrecy_capacity(self) -> float:
        return max(0.0, self.capacity_main - self.capacity_wiretap)


@dataclass(frozen=True)
class CsiNoiseModel:
    """Estimation error on the eavesdropper's fading coefficient.

    ``variance`` is per real dimension; zero means perfect CSI.
    """

    variance: float = 0.0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("CSI estimation variance must be >= 0")


@dataclass(frozen=True)
class FadingDraw:
    """One quasi-static realisation, or a batch of them when fields are arrays."""

    h_main: complex | np.ndarray
    h_wiretap: complex | np.ndarray
    h_wiretap_est: complex | np.ndarray
    noise_var_main: float = 1.0
    noise_var_wiretap: float = 1.0

    @property
    def snr_main(self):
        return np.abs(self.h_main) ** 2 / self.noise_var_main

    @property
    def snr_wiretap(self):
        return np.abs(self.h_wiretap) ** 2 / self.noise_var_wiretap

    @property
    def snr_wiretap_est(self):
        return np.abs(self.h_wiretap_est) ** 2 / self.noise_var_wiretap

    def __len__(self):
        return int(np.size(self.h_main))


def transmit_awgn(symbols, noise_var: float, seed: Seed) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise of variance ``noise_var`` per real dimension."""
    x = np.asarray(symbols)
    if x.size == 0:
        raise ValueError("empty symbol sequence")
    if noise_var < 0:
        raise ValueError("noise variance must be >= 0")
    if noise_var == 0:
        return x.copy()
    rng = rng_for(seed)
    sd = np.sqrt(noise_var)
    if np.iscomplexobj(x):
        return x + sd * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return x + sd * rng.standard_normal(x.shape)


def transmit_fading(symbols, h: complex, noise_var: float, seed: Seed) -> np.ndarray:
    """Quasi-static channel ``y = h x + n``; every symbol of the frame sees ``h``.

    ``noise_var`` is the total complex noise power, split evenly across the
    two real dimensions.
    """
    x = np.asarray(symbols, dtype=complex)
    return transmit_awgn(h * x, noise_var / 2.0, seed)


def _cn(rng: np.random.Generator, var: float, size):
    # circularly-symmetric complex Gaussian with total variance var
    s = np.sqrt(var / 2.0)
    return s * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def draw_fading(
    mean_snr_main: float,
    mean_snr_wiretap: float,
    csi: CsiNoiseModel,
    seed: Seed,
    size: int | None = None,
    noise_var_main: float = 1.0,
    noise_var_wiretap: float = 1.0,
) -> FadingDraw:
    """Draw Rayleigh coefficients with exponential instantaneous SNRs.

    The estimate ``h_wiretap_est = h_wiretap + e`` with ``e`` complex Gaussian
    of variance ``csi.variance`` per dimension.
    """
    if not (mean_snr_main > 0 and mean_snr_wiretap > 0):
        raise ValueError("mean SNRs must be positive")
    rng = rng_for(seed)
    shape = () if size is None else (size,)
    h_m = _cn(rng, mean_snr_main * noise_var_main, shape)
    h_w = _cn(rng, mean_snr_wiretap * noise_var_wiretap, shape)
    if csi.variance > 0:
        h_w_est = h_w + _cn(rng, 2.0 * csi.variance, shape)
    else:
        h_w_est = h_w.copy() if size is not None else h_w
    if size is None:
        h_m, h_w, h_w_est = complex(h_m), complex(h_w), complex(h_w_est)
    return FadingDraw(h_m, h_w, h_w_est, noise_var_main, noise_var_wiretap)


def secrecy_capacity(snr_main, snr_wiretap):
    """``log2(1+g_M) - log2(1+g_W)`` where ``g_M > g_W``, zero elsewhere."""
    g_m = np.asarray(snr_main, dtype=float)
    g_w = np.asarray(snr_wiretap, dtype=float)
    cs = np.where(g_m > g_w, np.log2(1.0 + g_m) - np.log2(1.0 + g_w), 0.0)
    return cs if cs.ndim else float(cs)


def instantaneous_capacities(draw: FadingDraw):
    """Return ``(C_M, C_W, C_s)`` for the true channel state of ``draw``."""
    g_m, g_w = draw.snr_main, draw.snr_wiretap
    c_m = np.log2(1.0 + g_m)
    c_w = np.log2(1.0 + g_w)
    c_s = secrecy_capacity(g_m, g_w)
    if np.ndim(c_m) == 0:
        return float(c_m), float(c_w), float(c_s)
    return c_m, c_w, c_s


def gaussian_capacity(noise_var: float) -> float:
    """Capacity ``0.5 log2(1 + 1/N)`` of the real unit-power AWGN channel."""
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    if np.isinf(noise_var):
        return 0.0
    return 0.5 * float(np.log2(1.0 + 1.0 / noise_var))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)
