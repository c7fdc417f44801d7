"""Weight storage schemes: float32 passthrough, binary16 and symmetric int8.

Half16 conversion is delegated to numpy's float64 -> float16 cast, which is a
single correctly rounded (round-half-to-even) conversion including subnormals.
Inputs are clipped to the largest finite binary16 value first so overflow
saturates instead of producing infinities.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import Matrix, as_array

HALF_MAX = 65504.0
INT8_LEVELS = 127


class PrecisionScheme(enum.Enum):
    FULL32 = "full32"
    HALF16 = "half16"
    INT8SYM = "int8sym"

    @property
    def bits(self) -> int:
        return {"full32": 32, "half16": 16, "int8sym": 8}[self.value]

    def lower_than(self, other: "PrecisionScheme") -> bool:
        return self.bits < other.bits

    @classmethod
    def parse(cls, name) -> "PrecisionScheme":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "").replace("-", "")
        aliases = {"full32": cls.FULL32, "fp32": cls.FULL32, "float32": cls.FULL32,
                   "half16": cls.HALF16, "fp16": cls.HALF16, "float16": cls.HALF16,
                   "int8sym": cls.INT8SYM, "int8": cls.INT8SYM}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown precision scheme {name!r}") from None


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    """Stored expert weights.

    ``payload`` is float64 values for FULL32, uint16 binary16 codes for HALF16
    and int8 codes for INT8SYM. ``scales`` is only set for INT8SYM (one per row).
    """

    scheme: PrecisionScheme
    rows: int
    cols: int
    payload: np.ndarray
    scales: np.ndarray | None = None

    def __post_init__(self):
        if self.payload.shape != (self.rows, self.cols):
            raise ValueError("payload shape does not match rows x cols")
        if self.scheme is PrecisionScheme.INT8SYM:
            if self.scales is None or self.scales.shape != (self.rows,):
                raise ValueError("int8 payload needs one scale per row")
            if np.any(np.abs(self.payload.astype(np.int16)) > INT8_LEVELS):
                raise ValueError("int8 codes must lie in [-127, 127]")
            if np.any(self.scales < 0) or not np.all(np.isfinite(self.scales)):
                raise ValueError("int8 scales must be finite and non-negative")
            if np.any(self.payload[self.scales == 0] != 0):
                raise ValueError("rows with zero scale must have zero codes")
        self.payload.flags.writeable = False
        if self.scales is not None:
            self.scales.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def __eq__(self, other):
        if not isinstance(other, QuantizedMatrix):
            return NotImplemented
        if (self.scheme, self.rows, self.cols) != (other.scheme, other.rows, other.cols):
            return False
        if self.payload.dtype != other.payload.dtype or not np.array_equal(self.payload, other.payload):
            return False
        if self.scales is None or other.scales is None:
            return self.scales is None and other.scales is None
        return bool(np.array_equal(self.scales, other.scales))

    def __repr__(self):
        return f"QuantizedMatrix({self.scheme.value}, {self.rows}x{self.cols})"


def half_encode(values) -> np.ndarray:
    """float64 array -> uint16 binary16 codes with saturation at +-65504."""
    a = np.clip(np.asarray(values, dtype=np.float64), -HALF_MAX, HALF_MAX)
    return a.astype(np.float16).view(np.uint16)


def half_decode(codes) -> np.ndarray:
    return np.asarray(codes, dtype=np.uint16).view(np.float16).astype(np.float64)


def quantize(w, scheme) -> QuantizedMatrix:
    scheme = PrecisionScheme.parse(scheme)
    a = as_array(w)
    if a.ndim != 2:
        raise ValueError("quantize expects a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("cannot quantize non-finite values")
    rows, cols = a.shape
    if scheme is PrecisionScheme.FULL32:
        return QuantizedMatrix(scheme, rows, cols, a.copy())
    if scheme is PrecisionScheme.HALF16:
        return QuantizedMatrix(scheme, rows, cols, half_encode(a))

    amax = np.abs(a).max(axis=1) if cols else np.zeros(rows)
    scales = amax / INT8_LEVELS
    safe = np.where(scales > 0, scales, 1.0)
    codes = np.clip(np.rint(a / safe[:, None]), -INT8_LEVELS, INT8_LEVELS)
    codes[scales == 0] = 0
    return QuantizedMatrix(scheme, rows, cols, codes.astype(np.int8), scales)


def dequantize_array(q: QuantizedMatrix) -> np.ndarray:
    if q.scheme is PrecisionScheme.FULL32:
        return np.array(q.payload, dtype=np.float64)
    if q.scheme is PrecisionScheme.HALF16:
        return half_decode(q.payload)
    return q.payload.astype(np.float64) * q.scales[:, None]


def dequantize(q: QuantizedMatrix) -> Matrix:
    return Matrix(dequantize_array(q))


def storage_bytes(q: QuantizedMatrix) -> int:
    n = q.rows * q.cols
    if q.scheme is PrecisionScheme.FULL32:
        return 4 * n
    if q.scheme is PrecisionScheme.HALF16:
        return 2 * n
    return n + 4 * q.rows


def scale_overhead_bytes(q: QuantizedMatrix) -> int:
    return 4 * q.rows if q.scheme is PrecisionScheme.INT8SYM else 0
