"""Sequence-based probe affinity.

Affinity is an intercept plus, for each base A, C and G, a smooth function
of position (a cubic B-spline expansion) summed over the positions where
that base occurs. T is the reference base.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .core import PROBE_LENGTH, spline_basis_matrix, weighted_least_squares
from .errors import MalformedSequenceError, SingularDesignError

BASES = "ACG"
_COMPLEMENT = {"A": "T", "T": "A", "C": "G", "G": "C"}
_CODE = np.full(256, -1, dtype=np.int8)
for _k, _b in enumerate("ACGT"):
    _CODE[ord(_b)] = _k


def encode(sequences, length=PROBE_LENGTH):
    """Integer codes (A=0, C=1, G=2, T=3), shape ``(n, length)``."""
    if isinstance(sequences, str):
        sequences = [sequences]
    for r, s in enumerate(sequences):
        if len(s) != length:
            raise MalformedSequenceError(
                f"malformed sequence {r}: length {len(s)}, expected {length}")
    buf = "".join(sequences).encode("ascii", "replace")
    codes = _CODE[np.frombuffer(buf, dtype=np.uint8)].reshape(len(sequences), length)
    bad = np.argwhere(codes < 0)
    if bad.size:
        r, k = bad[0]
        raise MalformedSequenceError(
            f"malformed sequence {r}: invalid base {sequences[r][k]!r} at position {k + 1}")
    return codes


def mismatch_sequence(seq):
    """Complement the middle base, as on a GeneChip mismatch probe."""
    m = len(seq) // 2
    return seq[:m] + _COMPLEMENT[seq[m]] + seq[m + 1:]


def design_matrix(sequences, df=5, length=PROBE_LENGTH):
    """Rows ``[1, sum_k 1{s_k=b} B_d(k) for b in A,C,G for d in 1..df]``."""
    codes = encode(sequences, length)
    basis = spline_basis_matrix(df, length)
    cols = [np.ones(codes.shape[0])]
    for b in range(3):
        cols.append((codes == b).astype(float) @ basis)
    return np.column_stack([cols[0]] + cols[1:])


@dataclass(frozen=True)
class AffinityModel:
    intercept: float
    coefficients: np.ndarray  # (3, df): rows A, C, G
    df: int = 5
    length: int = PROBE_LENGTH
    residual_sd: float = float("nan")
    intercept_only: bool = False

    @property
    def n_parameters(self):
        return 1 if self.intercept_only else 1 + self.coefficients.size

    @property
    def parameter_vector(self):
        return np.concatenate([[self.intercept], np.ravel(self.coefficients)])

    def position_effects(self):
        """Per-position effect of each base, shape ``(3, length)``."""
        return self.coefficients @ spline_basis_matrix(self.df, self.length).T

    def predict(self, sequences):
        return design_matrix(sequences, self.df, self.length) @ self.parameter_vector

    def to_dict(self):
        return {
            "intercept": self.intercept,
            "df": self.df,
            "length": self.length,
            "residual_sd": self.residual_sd,
            "intercept_only": self.intercept_only,
            "coefficients": {b: [float(v) for v in self.coefficients[k]]
                             for k, b in enumerate(BASES)},
        }

    @classmethod
    def from_dict(cls, d):
        coef = np.array([d["coefficients"][b] for b in BASES], dtype=float)
        return cls(float(d["intercept"]), coef, int(d["df"]), int(d.get("length", PROBE_LENGTH)),
                   float(d.get("residual_sd", float("nan"))), bool(d.get("intercept_only", False)))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def fit_affinity(sequences, responses, df=5, length=PROBE_LENGTH):
    """Least-squares fit of ``responses`` on the sequence design.

    A rank-deficient design (for example identical sequences) falls back to
    an intercept-only model with ``intercept_only=True`` and a warning.
    """
    y = np.asarray(responses, dtype=float)
    if len(sequences) != y.size:
        raise ValueError("one response per sequence required")
    if y.size < 100:
        raise ValueError(f"need at least 100 probes to fit affinities, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("responses must be finite")
    X = design_matrix(sequences, df, length)
    try:
        beta = weighted_least_squares(X, y)
    except SingularDesignError as exc:
        warnings.warn(f"affinity design rank deficient ({exc}); using intercept only",
                      RuntimeWarning, stacklevel=2)
        mean = float(y.mean())
        return AffinityModel(mean, np.zeros((3, df)), df, length,
                             float(y.std(ddof=1)), intercept_only=True)
    resid = y - X @ beta
    sd = float(np.sqrt(resid @ resid / max(y.size - beta.size, 1)))
    return AffinityModel(float(beta[0]), beta[1:].reshape(3, df), df, length, sd)


def predict_affinity(model, sequence):
    """Affinity of one sequence as intercept plus per-position base effects."""
    codes = encode([sequence], model.length)[0]
    effects = model.position_effects()
    total = model.intercept
    for k, b in enumerate(codes):
        if b < 3:
            total += effects[b, k]
    return float(total)
