"""Spectral features and kernel principal components.

A received waveform is reduced to a one-sided FFT magnitude vector,
optionally restricted to a frequency band, then embedded with kernel
PCA under a cosine (normalized dot product) kernel.  The embedding is
what the estimators in `learn` consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .container import PayloadKind, read_container, write_container
from .errors import DegenerateInputError, NumericalError, ParameterError
from .signal import Waveform

# A feature vector is just a 1-D float64 array; matrices stack them as rows.
FeatureVector = np.ndarray

KernelFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_EIG_TOL_FACTOR = 1e-10


@dataclass(frozen=True)
class Spectrum:
    """One-sided magnitude spectrum on a uniform frequency grid.

    Bin k (counting from `first_bin`) sits at (first_bin + k) * bin_hz;
    f_low and f_high record the band bounds the bins were selected
    under (lower edge inclusive, upper exclusive).  Magnitudes are raw
    |rfft| values: for a length-N signal the energy identity is
    sum(x^2) = (M_0^2 + 2*sum(M_mid^2) [+ M_nyq^2]) / N, the Nyquist
    term appearing only for even N.
    """

    magnitudes: np.ndarray
    bin_hz: float
    first_bin: int = 0
    f_low: float | None = None
    f_high: float | None = None

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if mags.ndim != 1 or mags.size == 0:
            raise ParameterError("spectrum must be a non-empty 1-D sequence")
        if not np.isfinite(mags).all():
            raise ParameterError("spectrum magnitudes must be finite")
        if (mags < 0).any():
            raise ParameterError("spectrum magnitudes must be non-negative")
        if not (self.bin_hz > 0):
            raise ParameterError("bin_hz must be positive")
        if self.first_bin < 0:
            raise ParameterError("first_bin must be non-negative")
        object.__setattr__(self, "magnitudes", mags)
        object.__setattr__(self, "bin_hz", float(self.bin_hz))
        object.__setattr__(self, "first_bin", int(self.first_bin))
        f_low = self.f_low if self.f_low is not None else self.first_bin * self.bin_hz
        f_high = (
            self.f_high
            if self.f_high is not None
            else (self.first_bin + mags.size) * self.bin_hz
        )
        if not (f_low < f_high):
            raise ParameterError(f"need f_low < f_high, got [{f_low}, {f_high})")
        object.__setattr__(self, "f_low", float(f_low))
        object.__setattr__(self, "f_high", float(f_high))

    def __len__(self) -> int:
        return self.magnitudes.size

    @property
    def frequencies(self) -> np.ndarray:
        return (self.first_bin + np.arange(self.magnitudes.size)) * self.bin_hz

    def peak_frequency(self) -> float:
        return float(self.frequencies[int(np.argmax(self.magnitudes))])


def fft_magnitude(w: Waveform) -> Spectrum:
    """One-sided magnitude spectrum of a waveform.

    Keeps DC through Nyquist (N//2 + 1 bins for even N), so no energy
    is dropped.
    """
    mags = np.abs(np.fft.rfft(w.samples))
    bin_hz = w.sample_rate / len(w)
    return Spectrum(mags, bin_hz=bin_hz, first_bin=0)


def band_select(s: Spectrum, f_low: float, f_high: float) -> Spectrum:
    """Restrict to bins with f_low <= bin frequency < f_high.

    The lower edge is inclusive and the upper exclusive, so adjacent
    bands partition the bins without overlap or double counting.  A bin
    sitting exactly at f_high (e.g. Nyquist for an even-length signal
    with f_high = fs/2) therefore lands in no band below it.
    """
    if f_low < 0:
        raise ParameterError("f_low must be non-negative")
    if not (f_low < f_high):
        raise ParameterError(f"need f_low < f_high, got [{f_low}, {f_high})")
    freqs = s.frequencies
    keep = (freqs >= f_low) & (freqs < f_high)
    if not keep.any():
        raise ParameterError(
            f"band [{f_low}, {f_high}) Hz selects no bins "
            f"(spectrum spans [{freqs[0]}, {freqs[-1]}] Hz)"
        )
    idx = np.flatnonzero(keep)
    return Spectrum(
        s.magnitudes[idx[0] : idx[-1] + 1],
        bin_hz=s.bin_hz,
        first_bin=s.first_bin + int(idx[0]),
        f_low=f_low,
        f_high=f_high,
    )


def _as_matrix(rows: np.ndarray, name: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] == 0:
        raise ParameterError(f"{name} must be a row vector or matrix of rows")
    if not np.isfinite(rows).all():
        raise ParameterError(f"{name} must be finite")
    return rows


def _unit_rows(rows: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1)
    if (norms == 0).any():
        raise DegenerateInputError(f"{name} contains an all-zero row")
    return rows / norms[:, None]


def cosine_kernel(a: np.ndarray, b: np.ndarray) -> float | np.ndarray:
    """Cosine similarity a.b / (|a||b|), in [-1, 1].

    Two 1-D rows give a scalar; matrix inputs give the pairwise Gram
    matrix between the rows of `a` and the rows of `b`.
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    scalar = a_arr.ndim == 1 and b_arr.ndim == 1
    a_m = _as_matrix(a_arr, "a")
    b_m = _as_matrix(b_arr, "b")
    if a_m.shape[1] != b_m.shape[1]:
        raise ParameterError(f"row length mismatch: {a_m.shape[1]} vs {b_m.shape[1]}")
    gram = _unit_rows(a_m, "a") @ _unit_rows(b_m, "b").T
    return float(gram[0, 0]) if scalar else gram


_KERNELS: dict[str, KernelFn] = {"cosine": cosine_kernel}


@dataclass(frozen=True)
class KernelPcaModel:
    """Fitted kernel-PCA projection.

    `coefficients` holds one column per retained component, scaled so
    the columns are orthonormal under the centered-Gram metric
    (eigenvector / sqrt(eigenvalue)); a centered kernel row against the
    training set times `coefficients` is the embedding.
    `kernel_row_means` and `kernel_grand_mean` are the training-Gram
    statistics used to center new kernel rows.
    """

    training_rows: np.ndarray
    coefficients: np.ndarray
    eigenvalues: np.ndarray
    explained_variance_ratio: np.ndarray
    kernel_row_means: np.ndarray
    kernel_grand_mean: float
    kernel_name: str
    kernel_fn: KernelFn = field(compare=False, repr=False, default=cosine_kernel)

    @property
    def n_components(self) -> int:
        return self.coefficients.shape[1]


def _kpca_fit_impl(
    rows: np.ndarray,
    n_components: int,
    kernel: KernelFn | None,
) -> tuple[KernelPcaModel, np.ndarray]:
    rows = _as_matrix(rows, "rows")
    n = rows.shape[0]
    if n < 2:
        raise ParameterError("kernel PCA needs at least two rows")
    if n_components < 1:
        raise ParameterError("n_components must be at least 1")
    kernel_fn = kernel if kernel is not None else cosine_kernel
    kernel_name = "cosine" if kernel is None else getattr(kernel, "__name__", "custom")

    gram = np.asarray(kernel_fn(rows, rows), dtype=np.float64)
    if gram.shape != (n, n):
        raise ParameterError(f"kernel returned shape {gram.shape}, expected {(n, n)}")
    if not np.isfinite(gram).all():
        raise NumericalError("kernel produced non-finite values")

    row_means = gram.mean(axis=1)
    grand = float(gram.mean())
    centered = gram - row_means[:, None] - row_means[None, :] + grand

    evals, evecs = np.linalg.eigh(centered)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]
    tol = _EIG_TOL_FACTOR * max(float(evals[0]), 0.0)
    n_pos = int(np.count_nonzero(evals > tol))
    if n_components > n_pos:
        raise ParameterError(
            f"n_components={n_components} exceeds the {n_pos} positive "
            "eigenvalues available"
        )

    kept_vals = np.ascontiguousarray(evals[:n_components])
    coef = evecs[:, :n_components] / np.sqrt(kept_vals)[None, :]
    # Canonical sign: the largest-magnitude coefficient of each column
    # is non-negative, so refits are reproducible.
    flip = np.sign(coef[np.argmax(np.abs(coef), axis=0), np.arange(n_components)])
    flip[flip == 0] = 1.0
    coef = coef * flip[None, :]

    evr = kept_vals / float(evals[evals > tol].sum())
    model = KernelPcaModel(
        training_rows=rows.copy(),
        coefficients=coef,
        eigenvalues=kept_vals,
        explained_variance_ratio=evr,
        kernel_row_means=row_means,
        kernel_grand_mean=grand,
        kernel_name=kernel_name,
        kernel_fn=kernel_fn,
    )
    return model, centered


def kpca_fit(
    rows: np.ndarray,
    n_components: int,
    kernel: KernelFn | None = None,
) -> KernelPcaModel:
    """Fit kernel PCA on the rows of a feature matrix.

    The Gram matrix is double-centered (mean removal in the kernel
    feature space), eigendecomposed, and the top `n_components`
    eigenpairs with eigenvalues above tolerance are retained.  Raises
    ParameterError reporting the attainable maximum when `n_components`
    exceeds the positive-eigenvalue count.
    """
    model, _ = _kpca_fit_impl(rows, n_components, kernel)
    return model


def kpca_transform(model: KernelPcaModel, rows: np.ndarray) -> np.ndarray:
    """Project one row (1-D) or a matrix of rows into component space.

    New kernel rows are centered with the stored training statistics:
    k - mean(k) - training row means + grand mean, then multiplied by
    the scaled eigenvector columns.
    """
    rows_arr = np.asarray(rows, dtype=np.float64)
    single = rows_arr.ndim == 1
    rows_m = _as_matrix(rows_arr, "rows")
    if rows_m.shape[1] != model.training_rows.shape[1]:
        raise ParameterError(
            f"row length {rows_m.shape[1]} does not match training "
            f"length {model.training_rows.shape[1]}"
        )
    k = np.asarray(model.kernel_fn(rows_m, model.training_rows), dtype=np.float64)
    k_centered = (
        k
        - k.mean(axis=1)[:, None]
        - model.kernel_row_means[None, :]
        + model.kernel_grand_mean
    )
    out = k_centered @ model.coefficients
    return out[0] if single else out


def kpca_fit_transform(
    rows: np.ndarray,
    n_components: int,
    kernel: KernelFn | None = None,
) -> tuple[KernelPcaModel, np.ndarray]:
    """Fit, then return (model, training-row embeddings).

    The embeddings come straight from the fitted eigensystem (centered
    Gram times the coefficient columns) rather than a second kernel
    evaluation; kpca_transform on the training rows agrees to
    rounding.
    """
    model, centered = _kpca_fit_impl(rows, n_components, kernel)
    return model, centered @ model.coefficients


def write_evr_csv(model: KernelPcaModel, path: str | Path) -> Path:
    """Component-wise eigenvalue / explained-variance table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cum = np.cumsum(model.explained_variance_ratio)
    with path.open("w") as fh:
        fh.write("component,eigenvalue,explained_variance_ratio,cumulative\n")
        for i in range(model.n_components):
            fh.write(
                f"{i + 1},{float(model.eigenvalues[i])!r},"
                f"{float(model.explained_variance_ratio[i])!r},{float(cum[i])!r}\n"
            )
    return path


def save_kpca(model: KernelPcaModel, path: str | Path) -> Path:
    if model.kernel_name not in _KERNELS:
        raise ParameterError(
            f"kernel {model.kernel_name!r} cannot be restored by name; "
            "only the built-in cosine kernel is serializable"
        )
    arrays = {
        "training_rows": model.training_rows,
        "coefficients": model.coefficients,
        "eigenvalues": model.eigenvalues,
        "explained_variance_ratio": model.explained_variance_ratio,
        "kernel_row_means": model.kernel_row_means,
    }
    meta = {"grand_mean": model.kernel_grand_mean, "kernel": model.kernel_name}
    return write_container(path, PayloadKind.KPCA_MODEL, arrays, meta)


def load_kpca(path: str | Path) -> KernelPcaModel:
    _, arrays, meta = read_container(path, expect_kind=PayloadKind.KPCA_MODEL)
    name = str(meta["kernel"])
    if name not in _KERNELS:
        raise ParameterError(f"unknown kernel {name!r} in model file")
    return KernelPcaModel(
        training_rows=arrays["training_rows"],
        coefficients=arrays["coefficients"],
        eigenvalues=arrays["eigenvalues"],
        explained_variance_ratio=arrays["explained_variance_ratio"],
        kernel_row_means=arrays["kernel_row_means"],
        kernel_grand_mean=float(meta["grand_mean"]),
        kernel_name=name,
        kernel_fn=_KERNELS[name],
    )
