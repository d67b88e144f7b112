"""Synthetic S11 ground truth, the 6561-sample geometry grid, splits and dataset I/O.

The ground truth is a coupled-mode (Lorentzian) reflection model standing in for
a full-wave solver:

    S11(lam) = 1 - sum_j K_j / (1 + i (lam - lam0_j) / Gamma_j)

with a geometry-dependent base resonance
``lam0 = 300 + 2.0 R + 0.5 P - 0.4 H + 0.3 T`` (all nm) and a per-metal mode table.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numcore import ContractError, DomainError, Rng

GENERATOR_VERSION = "cmt-1"
N_WAVELENGTHS = 64
LAMBDA_MIN = 500.0
LAMBDA_MAX = 850.0
WAVELENGTHS = LAMBDA_MIN + np.arange(N_WAVELENGTHS) * ((LAMBDA_MAX - LAMBDA_MIN) / (N_WAVELENGTHS - 1))
GRID_STEP_NM = (LAMBDA_MAX - LAMBDA_MIN) / (N_WAVELENGTHS - 1)
PARAM_NAMES = ("H", "P", "R", "T")

GRID_LEVELS = {
    "H": tuple(20.0 + 10.0 * i for i in range(9)),
    "P": tuple(200.0 + 25.0 * i for i in range(9)),
    "R": tuple(30.0 + 15.0 * i for i in range(9)),
    "T": tuple(60.0 + 5.0 * i for i in range(9)),
}
FULL_GRID_SIZE = 9**4
TEST_SIZE = 609


@dataclass(frozen=True)
class Mode:
    """One Lorentzian channel: center = scale * lam0 + offset."""

    offset: float
    K: float
    gamma: float
    scale: float = 1.0

    def center(self, lam0):
        return self.scale * lam0 + self.offset


class Metal(enum.Enum):
    AL = "Al"
    AU = "Au"
    AG = "Ag"

    @classmethod
    def parse(cls, name: str) -> Metal:
        for m in cls:
            if m.value.lower() == str(name).strip().lower():
                return m
        raise DomainError(f"unknown metal {name!r}; expected one of Al, Au, Ag")

    @property
    def modes(self) -> tuple[Mode, ...]:
        return MODE_TABLES[self]


MODE_TABLES: dict[Metal, tuple[Mode, ...]] = {
    Metal.AL: (Mode(0.0, 1.15, 60.0),),
    Metal.AU: (Mode(15.0, 0.95, 45.0),),
    # the second, narrower Ag channel gives Ag its extra resonance dips
    Metal.AG: (Mode(-10.0, 1.05, 30.0), Mode(180.0, 0.45, 18.0, scale=0.6)),
}


@dataclass(frozen=True)
class Geometry:
    H: float
    P: float
    R: float
    T: float

    def __post_init__(self):
        if not all(v > 0 for v in self.as_tuple()):
            raise DomainError(f"geometry values must be positive: {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.H, self.P, self.R, self.T)

    @property
    def plausible(self) -> bool:
        """Whether the disk fits inside its unit cell (R < P/2)."""
        return self.R < self.P / 2


def base_resonance(geoms) -> np.ndarray:
    g = np.asarray(geoms, dtype=np.float64)
    H, P, R, T = g[..., 0], g[..., 1], g[..., 2], g[..., 3]
    return 300.0 + 2.0 * R + 0.5 * P - 0.4 * H + 0.3 * T


def lorentzian_s11(wavelengths, modes) -> np.ndarray:
    """``1 - sum K/(1 + i (lam - center)/Gamma)`` for explicit ``(center, K, Gamma)`` modes."""
    lam = np.asarray(wavelengths, dtype=np.float64)
    s = np.ones(lam.shape, dtype=np.complex128)
    for center, K, gamma in modes:
        s = s - K / (1.0 + 1j * (lam - center) / gamma)
    return s


def oracle_s11(metal: Metal, geom: Geometry, wavelength) -> complex | np.ndarray:
    """Complex reflection of one geometry at one or more wavelengths in [500, 850] nm."""
    lam = np.asarray(wavelength, dtype=np.float64)
    if np.any(lam < LAMBDA_MIN) or np.any(lam > LAMBDA_MAX):
        raise DomainError(f"wavelength outside [{LAMBDA_MIN}, {LAMBDA_MAX}] nm")
    lam0 = float(base_resonance(geom.as_tuple()))
    s = lorentzian_s11(lam, [(m.center(lam0), m.K, m.gamma) for m in metal.modes])
    return complex(s) if s.ndim == 0 else s


def oracle_spectra(metal: Metal, geoms) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized oracle at the 64 canonical wavelengths; returns ``(re, im)`` of shape (n, 64)."""
    lam0 = base_resonance(np.atleast_2d(geoms))[:, None]
    s = np.ones((lam0.shape[0], N_WAVELENGTHS), dtype=np.complex128)
    for m in metal.modes:
        s = s - m.K / (1.0 + 1j * (WAVELENGTHS[None, :] - m.center(lam0)) / m.gamma)
    return s.real.copy(), s.imag.copy()


@dataclass
class Dataset:
    """Geometries (n, 4) with their spectra (n, 64) x 2, plus provenance."""

    metal: Metal
    geoms: np.ndarray
    re: np.ndarray
    im: np.ndarray
    ids: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.geoms = np.asarray(self.geoms, dtype=np.float64).reshape(-1, 4)
        n = self.geoms.shape[0]
        if self.re.shape != (n, N_WAVELENGTHS) or self.im.shape != (n, N_WAVELENGTHS):
            raise ContractError("spectra must be (n, 64) and match the geometry count")
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)

    def __len__(self) -> int:
        return self.geoms.shape[0]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.metal, self.geoms[idx], self.re[idx], self.im[idx], self.ids[idx], dict(self.provenance))

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.metal.value.encode())
        for arr in (self.geoms, self.re, self.im):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def equals(self, other: Dataset) -> bool:
        return (
            self.metal == other.metal
            and all(
                a.tobytes() == b.tobytes()
                for a, b in ((self.geoms, other.geoms), (self.re, other.re), (self.im, other.im))
            )
        )


def generate_grid(metal: Metal) -> Dataset:
    """All 9^4 combinations of the grid levels, H outermost and T innermost."""
    geoms = np.array(list(itertools.product(*(GRID_LEVELS[p] for p in PARAM_NAMES))), dtype=np.float64)
    re, im = oracle_spectra(metal, geoms)
    plausible = geoms[:, 2] < geoms[:, 1] / 2
    return Dataset(
        metal,
        geoms,
        re,
        im,
        provenance={
            "generator_version": GENERATOR_VERSION,
            "implausible_count": int((~plausible).sum()),
        },
    )


def split(dataset: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded Fisher-Yates shuffle; first 609 go to test, the other 5952 form the pool."""
    if len(dataset) != FULL_GRID_SIZE:
        raise ContractError(f"split expects {FULL_GRID_SIZE} samples, got {len(dataset)}")
    order = Rng(seed).permutation(len(dataset))
    return dataset.subset(order[TEST_SIZE:]), dataset.subset(order[:TEST_SIZE])


def fit_normalizer(geoms) -> np.ndarray:
    """Per-dimension ``(min, max)`` rows, shape (4, 2)."""
    g = np.asarray(geoms, dtype=np.float64).reshape(-1, 4)
    stats = np.stack([g.min(axis=0), g.max(axis=0)], axis=1)
    bad = [PARAM_NAMES[i] for i in range(4) if not stats[i, 0] < stats[i, 1]]
    if bad:
        raise DomainError(f"degenerate range in dimension(s) {', '.join(bad)}")
    return stats


def normalize(geoms, stats) -> np.ndarray:
    g = np.asarray(geoms, dtype=np.float64)
    return (g - stats[:, 0]) / (stats[:, 1] - stats[:, 0])


# --------------------------------------------------------------------------
# Dataset files
# --------------------------------------------------------------------------


class DatasetParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MalformedHeaderError(DatasetParseError):
    pass


class RowArityError(DatasetParseError):
    pass


class NonNumericFieldError(DatasetParseError):
    pass


HEADER = (
    ["metal", *PARAM_NAMES]
    + [f"re_{k}" for k in range(N_WAVELENGTHS)]
    + [f"im_{k}" for k in range(N_WAVELENGTHS)]
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dataset_to_text(dataset: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for i in range(len(dataset)):
        w.writerow(
            [dataset.metal.value]
            + [_fmt(v) for v in dataset.geoms[i]]
            + [_fmt(v) for v in dataset.re[i]]
            + [_fmt(v) for v in dataset.im[i]]
        )
    return buf.getvalue()


def metadata_for(dataset: Dataset, seed: int | None = None) -> dict:
    return {
        "generator_version": dataset.provenance.get("generator_version", GENERATOR_VERSION),
        "metal": dataset.metal.value,
        "seed": seed,
        "samples": len(dataset),
        "ranges": {p: list(GRID_LEVELS[p]) for p in PARAM_NAMES},
        "wavelengths_nm": {"start": LAMBDA_MIN, "stop": LAMBDA_MAX, "points": N_WAVELENGTHS},
        "oracle": {
            "base_resonance_nm": "300 + 2.0*R + 0.5*P - 0.4*H + 0.3*T",
            "modes": [
                {"center": f"{m.scale}*lam0 + {m.offset}", "K": m.K, "gamma": m.gamma}
                for m in dataset.metal.modes
            ],
        },
        "fingerprint": dataset.fingerprint(),
    }


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_dataset(dataset: Dataset, path, seed: int | None = None) -> None:
    path = Path(path)
    path.write_text(dataset_to_text(dataset), encoding="utf-8")
    sidecar_path(path).write_text(json.dumps(metadata_for(dataset, seed), indent=2) + "\n", encoding="utf-8")


def read_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or [h.strip() for h in header] != HEADER:
        raise MalformedHeaderError("missing or malformed header", line=1)
    metal = None
    geoms, re, im = [], [], []
    ncol = len(HEADER)
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise RowArityError(f"expected {ncol} columns, found {len(row)}", line=lineno)
        try:
            row_metal = Metal.parse(row[0])
        except DomainError:
            raise NonNumericFieldError(f"unknown metal {row[0]!r}", line=lineno) from None
        if metal is None:
            metal = row_metal
        elif row_metal != metal:
            raise DatasetParseError("mixed metals in one dataset file", line=lineno)
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise NonNumericFieldError(str(exc), line=lineno) from None
        geoms.append(vals[:4])
        re.append(vals[4 : 4 + N_WAVELENGTHS])
        im.append(vals[4 + N_WAVELENGTHS :])
    if metal is None:
        raise DatasetParseError("dataset file has no rows", line=2)
    provenance = {}
    side = sidecar_path(path)
    if side.exists():
        provenance = json.loads(side.read_text(encoding="utf-8"))
    return Dataset(metal, np.array(geoms), np.array(re), np.array(im), provenance=provenance)
