"""Centred orthonormal FFTs, the single-coil acquisition model and helpers.

Complex grids are plain ``complex128`` numpy arrays of shape (H, W); images
are real (H, W) arrays. The DC coefficient sits at ``(H // 2, W // 2)``.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

LOG_SCALE = 1e5


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centred, orthonormal 2D DFT over the last two axes."""
    x = np.asarray(x)
    shifted = np.fft.ifftshift(x, axes=(-2, -1))
    return np.fft.fftshift(np.fft.fft2(shifted, norm="ortho"), axes=(-2, -1))


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    k = np.asarray(k)
    shifted = np.fft.ifftshift(k, axes=(-2, -1))
    return np.fft.fftshift(np.fft.ifft2(shifted, norm="ortho"), axes=(-2, -1))


def apply_forward_model(x: np.ndarray, mask, sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Simulate ``k_us = M * (F x + n)``.

    ``n`` is circular complex Gaussian noise with total variance ``sigma**2``
    (``sigma / sqrt(2)`` per real/imaginary part). Unsampled columns are
    exactly zero.
    """
    from .masks import apply_mask

    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    x = np.asarray(x)
    if mask.width != x.shape[-1]:
        raise ValueError(f"mask width {mask.width} does not match image width {x.shape[-1]}")
    k = fft2c(x)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        std = sigma / np.sqrt(2.0)
        k = k + rng.normal(0.0, std, k.shape) + 1j * rng.normal(0.0, std, k.shape)
    return apply_mask(k, mask)


def zero_fill_recon(k_us: np.ndarray) -> np.ndarray:
    """Magnitude of the inverse FFT, missing samples treated as zero."""
    return np.abs(ifft2c(k_us))


def _signed_log(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.log1p(np.abs(v)) * LOG_SCALE


def _signed_exp(t: np.ndarray) -> np.ndarray:
    return np.sign(t) * np.expm1(np.abs(t) / LOG_SCALE)


def log_transform(k: np.ndarray) -> np.ndarray:
    """Signed log compression applied separately to real and imaginary parts.

    ``t(v) = sign(v) * log(1 + |v|) * 1e5``; zero maps to zero.
    """
    k = np.asarray(k)
    if np.iscomplexobj(k):
        return _signed_log(k.real) + 1j * _signed_log(k.imag)
    return _signed_log(k)


def inverse_log_transform(k_t: np.ndarray) -> np.ndarray:
    k_t = np.asarray(k_t)
    if np.iscomplexobj(k_t):
        return _signed_exp(k_t.real) + 1j * _signed_exp(k_t.imag)
    return _signed_exp(k_t)


def pack_channels(k: np.ndarray, dtype=np.float32) -> Tensor:
    """(H, W) complex grid -> 1 x 2 x H x W tensor (real, imag)."""
    k = np.asarray(k)
    if k.ndim != 2:
        raise ValueError(f"expected an H x W grid, got shape {k.shape}")
    return Tensor(np.stack([k.real, k.imag])[None].astype(dtype))


def unpack_channels(t) -> np.ndarray:
    """1 x 2 x H x W (or 2 x H x W) tensor/array -> complex128 grid."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ValueError(f"unpack_channels expects a single sample, got batch {arr.shape[0]}")
        arr = arr[0]
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"expected 2 channels (real, imag), got shape {arr.shape}")
    return arr[0].astype(np.float64) + 1j * arr[1].astype(np.float64)
