"""Real 3D FFT pairs for the (3, n, n, n) velocity layout.

Coefficients follow ``u(x) = sum_k c_k exp(i k.x)``: the forward transform
carries the 1/n^3 factor and the inverse is an unscaled sum.  pyFFTW is used
when importable (plans built with FFTW_ESTIMATE so the chosen algorithm, and
hence every rounding, is fixed); otherwise scipy.fft.  Set
``STOCHNS_FFT=scipy`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.fft as sfft

try:  # pragma: no cover - availability depends on the environment
    import pyfftw

    _HAVE_FFTW = True
except ImportError:  # pragma: no cover
    pyfftw = None
    _HAVE_FFTW = False

_AXES = (-3, -2, -1)


def backend_name() -> str:
    if _HAVE_FFTW and os.environ.get("STOCHNS_FFT", "").lower() != "scipy":
        return "pyfftw"
    return "scipy"


def to_physical_array(coeffs: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(coeffs, s=(n, n, n), axes=_AXES, norm="forward", workers=1)


def to_spectral_array(values: np.ndarray) -> np.ndarray:
    return sfft.rfftn(values, axes=_AXES, norm="forward", workers=1)


class TransformPair:
    """Fixed-shape inverse/forward transforms with private workspaces.

    One instance per trajectory; never shared between threads.
    """

    def __init__(self, n: int, n_inverse: int = 3, n_forward: int = 6):
        self.n = n
        self.backend = backend_name()
        self._scale = 1.0 / n**3
        nh = n // 2 + 1
        if self.backend == "pyfftw":
            self._inv_in = pyfftw.empty_aligned((n_inverse, n, n, nh), dtype="complex128")
            self._inv_out = pyfftw.empty_aligned((n_inverse, n, n, n), dtype="float64")
            self._fwd_in = pyfftw.empty_aligned((n_forward, n, n, n), dtype="float64")
            self._fwd_out = pyfftw.empty_aligned((n_forward, n, n, nh), dtype="complex128")
            self._inv = pyfftw.FFTW(
                self._inv_in, self._inv_out, axes=_AXES, direction="FFTW_BACKWARD",
                flags=("FFTW_ESTIMATE", "FFTW_DESTROY_INPUT"), threads=1,
            )
            self._fwd = pyfftw.FFTW(
                self._fwd_in, self._fwd_out, axes=_AXES, direction="FFTW_FORWARD",
                flags=("FFTW_ESTIMATE",), threads=1,
            )
            self.forward_buffer = self._fwd_in
        else:
            self.forward_buffer = np.empty((n_forward, n, n, n))

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        """Physical values on the collocation grid (returned array is reused)."""
        if self.backend == "pyfftw":
            self._inv_in[...] = coeffs
            self._inv.execute()
            return self._inv_out
        return to_physical_array(coeffs, self.n)

    def inverse_sparse(self, flat_index: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Inverse transform of coefficients nonzero only at ``flat_index``."""
        n = self.n
        if self.backend == "pyfftw":
            buf = self._inv_in
            buf.fill(0.0)
            flat = buf.reshape(-1)
            size = buf[0].size
            for c in range(values.shape[0]):
                flat[c * size + flat_index] = values[c]
            self._inv.execute()
            return self._inv_out
        dense = np.zeros((values.shape[0], n * n * (n // 2 + 1)), dtype=np.complex128)
        dense[:, flat_index] = values
        return to_physical_array(dense.reshape(values.shape[0], n, n, n // 2 + 1), n)

    def forward_gather(self, values: np.ndarray, flat_index: np.ndarray,
                       scaled: bool = True) -> np.ndarray:
        """Coefficients of ``values`` at ``flat_index`` only.

        With ``scaled=False`` the 1/n^3 factor is left to the caller.
        """
        if self.backend == "pyfftw":
            if values is not self._fwd_in:
                self._fwd_in[...] = values
            self._fwd.execute()
            out = self._fwd_out
            raw = np.take(out.reshape(out.shape[0], -1), flat_index, axis=1)
        else:
            out = sfft.rfftn(values, axes=_AXES, norm="backward", workers=1)
            raw = np.take(out.reshape(out.shape[0], -1), flat_index, axis=1)
        return raw * self._scale if scaled else raw

    def forward(self, values: np.ndarray) -> np.ndarray:
        """Coefficients of ``values``; pass :attr:`forward_buffer` to skip a copy."""
        if self.backend == "pyfftw":
            if values is not self._fwd_in:
                self._fwd_in[...] = values
            self._fwd.execute()
            return self._fwd_out * self._scale
        return to_spectral_array(values)
