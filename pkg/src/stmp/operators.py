"""Partial-orthogonal measurement operators and linear observation models.

An operator applies ``A = S W Theta`` matrix-free: a diagonal of random
signs ``Theta``, an orthonormal fast transform ``W`` (DCT-II or
Walsh-Hadamard), and a random row selection ``S``.  Row orthogonality
``A A^T = I`` holds exactly for these constructions, which is what the
fast LMMSE update in the message-passing engine relies on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct, idct

__all__ = [
    "MeasurementOperator",
    "LinearModel",
    "make_operator",
    "forward",
    "adjoint",
    "sample_model",
]

TRANSFORM_KINDS = ("dct", "hadamard")


def _fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform, Sylvester ordering."""
    n = a.shape[0]
    y = np.array(a, dtype=float, copy=True)
    h = 1
    while h < n:
        y = y.reshape(n // (2 * h), 2, h)
        top = y[:, 0, :] + y[:, 1, :]
        bot = y[:, 0, :] - y[:, 1, :]
        y = np.stack((top, bot), axis=1).reshape(n)
        h *= 2
    return y


@dataclass(frozen=True)
class MeasurementOperator:
    """Matrix-free partial-orthogonal operator A = S W Theta.

    Attributes
    ----------
    n_rows, n_cols : int
        Measurement count M and signal dimension N.
    transform_kind : str
        "dct" (orthonormal DCT-II) or "hadamard" (1/sqrt(N)-scaled WHT).
    selected_rows : np.ndarray
        M distinct row indices of W kept by S.
    signs : np.ndarray
        Length-N vector of +-1, the diagonal of Theta.
    seed : int
        Seed the operator was constructed from.
    """

    n_rows: int
    n_cols: int
    transform_kind: str
    selected_rows: np.ndarray = field(repr=False)
    signs: np.ndarray = field(repr=False)
    seed: int

    def __post_init__(self):
        if self.transform_kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.transform_kind!r}")
        if not (1 <= self.n_rows <= self.n_cols):
            raise ValueError(f"need 1 <= M <= N, got M={self.n_rows}, N={self.n_cols}")
        if self.transform_kind == "hadamard" and self.n_cols & (self.n_cols - 1):
            raise ValueError("hadamard transform requires N to be a power of two")
        rows = np.asarray(self.selected_rows)
        if rows.shape != (self.n_rows,) or len(np.unique(rows)) != self.n_rows:
            raise ValueError("selected_rows must hold M distinct indices")
        if rows.min() < 0 or rows.max() >= self.n_cols:
            raise ValueError("selected_rows out of range [0, N)")
        if not np.all(np.abs(self.signs) == 1) or self.signs.shape != (self.n_cols,):
            raise ValueError("signs must be a length-N vector of +-1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def descriptor(self) -> dict:
        """JSON-serializable descriptor sufficient to rebuild the operator."""
        return {
            "kind": self.transform_kind,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.descriptor())

    @staticmethod
    def from_descriptor(desc: dict) -> "MeasurementOperator":
        return make_operator(desc["n_rows"], desc["n_cols"], desc["kind"], desc["seed"])


@dataclass(frozen=True)
class LinearModel:
    """Observation model y = A x + n with n ~ N(0, noise_variance I)."""

    operator: MeasurementOperator
    observations: np.ndarray = field(repr=False)
    noise_variance: float

    def __post_init__(self):
        if self.observations.shape != (self.operator.n_rows,):
            raise ValueError(
                f"observations length {self.observations.shape} does not match "
                f"operator rows {self.operator.n_rows}"
            )
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")


def make_operator(n_rows: int, n_cols: int, transform_kind: str, seed: int) -> MeasurementOperator:
    """Construct a seeded partial-orthogonal operator.

    Row selection is a Fisher-Yates permutation truncated to M; signs are
    i.i.d. uniform +-1.  Identical seeds give identical operators.
    """
    if not (1 <= n_rows <= n_cols):
        raise ValueError(f"need 1 <= M <= N, got M={n_rows}, N={n_cols}")
    rng = np.random.default_rng(seed)
    selected = rng.permutation(n_cols)[:n_rows]
    signs = rng.integers(0, 2, size=n_cols) * 2.0 - 1.0
    return MeasurementOperator(
        n_rows=n_rows,
        n_cols=n_cols,
        transform_kind=transform_kind,
        selected_rows=selected,
        signs=signs,
        seed=seed,
    )


def forward(op: MeasurementOperator, x: np.ndarray) -> np.ndarray:
    """Apply A to a length-N vector, returning M measurements."""
    x = np.asarray(x, dtype=float)
    if x.shape != (op.n_cols,):
        raise ValueError(f"expected length-{op.n_cols} input, got shape {x.shape}")
    xs = op.signs * x
    if op.transform_kind == "dct":
        w = dct(xs, type=2, norm="ortho")
    else:
        w = _fwht(xs) / np.sqrt(op.n_cols)
    return w[op.selected_rows]


def adjoint(op: MeasurementOperator, u: np.ndarray) -> np.ndarray:
    """Apply A^T to a length-M vector, returning a length-N vector."""
    u = np.asarray(u, dtype=float)
    if u.shape != (op.n_rows,):
        raise ValueError(f"expected length-{op.n_rows} input, got shape {u.shape}")
    w = np.zeros(op.n_cols)
    w[op.selected_rows] = u
    if op.transform_kind == "dct":
        xs = idct(w, type=2, norm="ortho")
    else:
        # the normalized WHT is symmetric, so W^T = W
        xs = _fwht(w) / np.sqrt(op.n_cols)
    return op.signs * xs


def sample_model(
    op: MeasurementOperator,
    x_true: np.ndarray,
    noise_variance: float,
    seed: int,
) -> LinearModel:
    """Draw y = A x_true + n for a given noise variance, deterministically per seed."""
    if noise_variance < 0:
        raise ValueError("noise_variance must be >= 0")
    y = forward(op, x_true)
    if noise_variance > 0:
        rng = np.random.default_rng(seed)
        y = y + np.sqrt(noise_variance) * rng.standard_normal(op.n_rows)
    return LinearModel(operator=op, observations=y, noise_variance=float(noise_variance))


def dense_matrix(op: MeasurementOperator) -> np.ndarray:
    """Assemble A column-by-column. Test/diagnostic use only (O(N^2))."""
    cols = np.eye(op.n_cols)
    return np.stack([forward(op, cols[:, j]) for j in range(op.n_cols)], axis=1)
