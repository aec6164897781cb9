"""Cooperative spectrum cartography as a distributed nonnegative regression.

Each node measures the power spectral density at ``N_f`` frequencies between
15 and 30 MHz. The spectrum of source ``s`` is expanded over ``N_b``
non-overlapping rectangular frequency bases, and its contribution at node
``i`` is attenuated by the path loss ``1 / (1 + d_is^2)``. The network
estimates the basis powers ``x`` by

    minimize  sum_i ||phi_i - B_i x||^2 + lam 1'x   over  [0, p_max]^(N_b N_s).
"""

from dataclasses import dataclass

import numpy as np

from .._validation import check_positive, check_positive_int, check_rng
from ..problem import Box, DistributedProblem, LeastSquaresCost, LinearRegularizer
from ..surrogate import KeepConvexSurrogate, LinearizedSurrogate
from .noise import noise_variance_for_snr

REFERENCE_SOURCES = np.array([[2.5, 2.5], [7.5, 7.5]])
# Occupied fraction of the scanned band and total power of each reference
# source. With N_b = 10 the bands select bases 2-4 and 6-9 (1-based).
REFERENCE_BANDS = ((0.1, 0.4), (0.5, 0.9))
REFERENCE_POWERS = (1.0, 0.5)
BAND_MHZ = (15.0, 30.0)
DEFAULT_TAU = 0.8


def path_loss(positions, sources):
    """``g[i, s] = 1 / (1 + d_is^2)``."""
    d2 = np.sum((positions[:, None, :] - sources[None, :, :]) ** 2, axis=2)
    return 1.0 / (1.0 + d2)


def rectangular_bases(N_b, N_f, band=BAND_MHZ):
    """``psi[k, b] = 1`` when channel ``k`` falls in the ``b``-th of ``N_b``
    equal, adjacent sub-bands. Returns the basis matrix and the channel
    frequencies in MHz."""
    lo, hi = band
    freqs = np.linspace(lo, hi, N_f)
    idx = np.minimum(((freqs - lo) / (hi - lo) * N_b).astype(int), N_b - 1)
    psi = np.zeros((N_f, N_b))
    psi[np.arange(N_f), idx] = 1.0
    return psi, freqs


def active_bases(N_b, fraction):
    """Bases whose center lies in ``[fraction[0], fraction[1])`` of the band."""
    centers = (np.arange(N_b) + 0.5) / N_b
    return np.flatnonzero((centers >= fraction[0]) & (centers < fraction[1]))


def power_profile(N_b, bands, powers):
    """Truth vector: each source spreads its power uniformly over its bases."""
    x = np.zeros((len(bands), N_b))
    for s, (band, power) in enumerate(zip(bands, powers)):
        act = active_bases(N_b, band)
        if act.size == 0:
            act = np.array([min(int(band[0] * N_b), N_b - 1)])
        x[s, act] = power / act.size
    return x.ravel()


@dataclass
class CartographyInstance:
    positions: np.ndarray
    sources: np.ndarray
    regressors: list
    measurements: np.ndarray
    truth: np.ndarray
    lam: float
    p_max: float
    noise_variance: float
    snr_db: float
    seed: int
    tau: float

    def manifest(self, stream):
        """Plain-text dump sufficient to rebuild the instance exactly."""
        stream.write("# cartography instance\n")
        stream.write(f"seed {self.seed}\nsnr_db {self.snr_db}\nlam {self.lam:.17g}\n")
        stream.write(f"p_max {self.p_max:.17g}\nnoise_variance {self.noise_variance:.17g}\n")
        stream.write(f"tau {self.tau:.17g}\n")
        for name, arr in (("positions", self.positions), ("sources", self.sources),
                          ("truth", self.truth), ("measurements", self.measurements)):
            arr = np.atleast_2d(arr)
            stream.write(f"{name} {arr.shape[0]}\n")
            for row in arr:
                stream.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def build_cartography(I=30, N_s=2, N_b=10, N_f=30, lam=1e-3, snr_db=3.0, seed=0,
                      tau=DEFAULT_TAU, p_max=5.0, area=10.0, positions=None,
                      sources=None, bands=None, powers=None):
    """Spectrum cartography problem and its true power vector.

    Nodes are uniform over the ``area x area`` square unless ``positions``
    is given. The first two sources default to the reference placement and
    spectra; further sources get a uniform position, a random contiguous
    band and 0.5 W. ``snr_db=None`` gives noiseless measurements.

    The registered ``"structured"`` surrogate keeps each local quadratic
    whole (plus the proximal term); ``"linearize"`` is also available.
    """
    I = check_positive_int(I, "I")
    N_s = check_positive_int(N_s, "N_s")
    N_b = check_positive_int(N_b, "N_b")
    N_f = check_positive_int(N_f, "N_f")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    check_positive(p_max, "p_max")
    if snr_db is not None and snr_db == -np.inf:
        raise ValueError("SNR of -inf dB means pure noise")
    rng = check_rng(seed)
    pos = (rng.uniform(0.0, area, size=(I, 2)) if positions is None
           else np.asarray(positions, dtype=float).reshape(I, -1))
    if sources is None:
        extra = rng.uniform(0.0, area, size=(max(N_s - 2, 0), 2))
        sources = np.vstack([REFERENCE_SOURCES[:N_s], extra])
    sources = np.asarray(sources, dtype=float).reshape(N_s, -1)
    if bands is None:
        bands = list(REFERENCE_BANDS[:N_s])
        for _ in range(N_s - len(bands)):
            a = rng.uniform(0.0, 0.8)
            bands.append((a, a + 0.2))
    if powers is None:
        powers = list(REFERENCE_POWERS[:N_s]) + [0.5] * max(N_s - 2, 0)
    truth = power_profile(N_b, bands, powers)

    psi, _ = rectangular_bases(N_b, N_f)
    gains = path_loss(pos, sources)
    regressors = [np.hstack([gains[i, s] * psi for s in range(N_s)]) for i in range(I)]
    clean = np.stack([B @ truth for B in regressors])
    if snr_db is None:
        var = 0.0
        meas = clean
    else:
        var = noise_variance_for_snr(clean, snr_db)
        meas = clean + np.sqrt(var) * rng.standard_normal(clean.shape)

    costs = [LeastSquaresCost(regressors[i], meas[i]) for i in range(I)]
    dim = N_b * N_s
    problem = DistributedProblem(
        costs,
        LinearRegularizer(np.full(dim, float(lam))),
        Box(0.0, p_max, dim=dim),
        surrogates={
            "structured": lambda i, t: KeepConvexSurrogate(costs[i], t),
            "linearize": lambda i, t: LinearizedSurrogate(costs[i], t),
        },
        truth=truth,
        name="cartography",
    )
    problem.instance = CartographyInstance(pos, sources, regressors, meas, truth, float(lam),
                                           float(p_max), var, snr_db, seed, tau)
    problem.default_tau = tau
    return problem, truth
