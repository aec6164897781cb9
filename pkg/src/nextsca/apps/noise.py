"""SNR convention shared by the application builders.

The SNR of node ``i`` is the mean squared noiseless measurement of that node
divided by the noise variance; one common variance is chosen so that the
smallest per-node SNR equals the requested value.
"""

import numpy as np


def noise_variance_for_snr(clean, snr_db):
    """Noise variance giving ``min_i SNR_i = snr_db`` for rows ``clean[i]``."""
    power = np.mean(np.atleast_2d(clean) ** 2, axis=1)
    return float(power.min() / 10.0 ** (snr_db / 10.0))


def min_snr_db(clean, variance):
    power = np.mean(np.atleast_2d(clean) ** 2, axis=1)
    return float(10.0 * np.log10(power.min() / variance))
