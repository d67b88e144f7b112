"""Single-parameter design sweeps over the oracle or a trained model.

Resonance means the dip of |S11| (the absorption maximum of an MIM cell).
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import (
    LAMBDA_MAX,
    LAMBDA_MIN,
    N_WAVELENGTHS,
    PARAM_NAMES,
    WAVELENGTHS,
    Geometry,
    Metal,
    oracle_spectra,
)
from .model import ModelParams, predict
from .numcore import ContractError, DomainError


class ExtrapolationWarning(UserWarning):
    pass


class OracleBackend:
    def __init__(self, metal: Metal):
        self.metal = metal

    def spectra(self, geoms: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        re, im = oracle_spectra(self.metal, geoms)
        return re, im, np.zeros(len(geoms), dtype=bool)

    def __repr__(self):
        return f"OracleBackend({self.metal.value})"


class ModelBackend:
    """A trained network; inputs outside its normalization range are extrapolation.

    By default extrapolated inputs are refused. With ``allow_extrapolation``
    they are evaluated, flagged per row, and an :class:`ExtrapolationWarning`
    is emitted.
    """

    def __init__(self, params: ModelParams, allow_extrapolation: bool = False):
        self.params = params
        self.allow_extrapolation = allow_extrapolation

    def outside_range(self, geoms: np.ndarray) -> np.ndarray:
        lo, hi = self.params.norm_stats[:, 0], self.params.norm_stats[:, 1]
        g = np.atleast_2d(geoms)
        return np.any((g < lo) | (g > hi), axis=1)

    def spectra(self, geoms: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        flags = self.outside_range(geoms)
        if flags.any():
            if not self.allow_extrapolation:
                raise DomainError(
                    f"{int(flags.sum())} sweep point(s) fall outside the model's training range; "
                    "pass allow_extrapolation=True to evaluate them anyway"
                )
            warnings.warn(
                f"{int(flags.sum())} sweep point(s) extrapolate beyond the training range",
                ExtrapolationWarning,
                stacklevel=3,
            )
        re, im = predict(self.params, geoms)
        return re, im, flags


@dataclass(frozen=True)
class SweepSpec:
    backend: object
    fixed: dict[str, float]
    vary: str
    start: float
    stop: float
    step: float
    probe: float | None = None

    def __post_init__(self):
        if self.vary not in PARAM_NAMES:
            raise ContractError(f"vary must be one of {PARAM_NAMES}, got {self.vary!r}")
        missing = set(PARAM_NAMES) - {self.vary} - set(self.fixed)
        extra = set(self.fixed) - set(PARAM_NAMES)
        if missing or extra or self.vary in self.fixed:
            raise ContractError(f"fixed must name exactly the three parameters other than {self.vary}")
        if not self.step > 0:
            raise ContractError("step must be positive")
        if not self.start < self.stop:
            raise ContractError("start must be below stop")
        if self.probe is not None:
            check_window(self.probe)

    def values(self) -> np.ndarray:
        # start + i*step rather than accumulation, so 30 + 173*0.25 is exactly 73.25
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(n)

    def geometries(self) -> np.ndarray:
        vals = self.values()
        g = np.empty((vals.size, 4))
        for j, name in enumerate(PARAM_NAMES):
            g[:, j] = vals if name == self.vary else self.fixed[name]
        for row in g:
            Geometry(*row)  # positivity check
        return g


@dataclass
class SweepRow:
    value: float
    re: np.ndarray
    im: np.ndarray
    extrapolated: bool = False


def check_window(wavelength: float) -> None:
    if not LAMBDA_MIN <= wavelength <= LAMBDA_MAX:
        raise DomainError(f"wavelength {wavelength} nm outside [{LAMBDA_MIN}, {LAMBDA_MAX}]")


def run_sweep(spec: SweepSpec) -> list[SweepRow]:
    geoms = spec.geometries()
    re, im, flags = spec.backend.spectra(geoms)
    return [SweepRow(float(v), re[i], im[i], bool(flags[i])) for i, v in enumerate(spec.values())]


def interpolate(re, im, wavelength: float) -> complex:
    """Linear interpolation of the complex spectrum between canonical wavelengths."""
    check_window(wavelength)
    return complex(np.interp(wavelength, WAVELENGTHS, re), np.interp(wavelength, WAVELENGTHS, im))


def phase_at(re, im, wavelength: float) -> float:
    """Phase in (-pi, pi] of the interpolated S11 at ``wavelength``."""
    s = interpolate(re, im, wavelength)
    phi = math.atan2(s.imag, s.real)
    return math.pi if phi == -math.pi else phi


def find_resonance(re, im) -> float:
    """Canonical wavelength of minimum |S11|; the first (shortest) wins ties."""
    mag = np.hypot(np.asarray(re), np.asarray(im))
    if mag.shape != (N_WAVELENGTHS,):
        raise ContractError("spectrum must have 64 points")
    return float(WAVELENGTHS[int(np.argmin(mag))])


def design_for_target(
    backend, fixed: dict[str, float], vary: str, target: float, start: float, stop: float, step: float
) -> float:
    """Parameter value whose resonance lands closest to ``target``.

    Resonances are snapped to the 64-point grid, so many neighbouring values
    can share the best snapped distance. Those are ranked by |S11| at the
    target wavelength (deepest dip wins), then by smaller parameter value.
    """
    check_window(target)
    rows = run_sweep(SweepSpec(backend, fixed, vary, start, stop, step))
    if not rows:
        raise ContractError("empty sweep")
    best = min(
        rows,
        key=lambda r: (abs(find_resonance(r.re, r.im) - target), abs(interpolate(r.re, r.im, target)), r.value),
    )
    return best.value


def sweep_table(
    rows: list[SweepRow],
    *,
    probe: float | None = None,
    with_resonance: bool = False,
    comments: list[str] | None = None,
) -> str:
    """CSV text for a sweep, preceded by ``#`` comment lines."""
    buf = io.StringIO()
    for line in comments or []:
        buf.write(f"# {line}\n")
    buf.write(f"# wavelengths_nm: {LAMBDA_MIN:g} + k*{LAMBDA_MAX - LAMBDA_MIN:g}/{N_WAVELENGTHS - 1}, k=0..{N_WAVELENGTHS - 1}\n")
    header = ["param_value"] + [f"re_{k}" for k in range(N_WAVELENGTHS)] + [f"im_{k}" for k in range(N_WAVELENGTHS)]
    if probe is not None:
        header.append("phase_at_probe")
    if with_resonance:
        header.append("resonance_nm")
    flagged = any(r.extrapolated for r in rows)
    if flagged:
        header.append("extrapolated")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    fmt = lambda x: format(float(x), ".17g")  # noqa: E731
    for r in rows:
        line = [fmt(r.value)] + [fmt(v) for v in r.re] + [fmt(v) for v in r.im]
        if probe is not None:
            line.append(fmt(phase_at(r.re, r.im, probe)))
        if with_resonance:
            line.append(fmt(find_resonance(r.re, r.im)))
        if flagged:
            line.append(int(r.extrapolated))
        w.writerow(line)
    return buf.getvalue()
