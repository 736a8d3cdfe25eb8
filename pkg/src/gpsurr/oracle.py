"""Analytic optical simulator used as ground truth at desk scale.

This stands in for a full TCAD optical solver. It is deliberately not a
physically accurate replacement; it reproduces the qualitative parameter
dependencies of a textured PERC-like cell so that every machine-learning
claim (feature relevance, confidence-interval behavior, back-prediction
consistency) can be tested against a known truth:

  * front reflectance: single-layer air/ARC/Si characteristic-matrix
    interference at normal incidence, scaled by a pyramid-texture factor
    (linear ramp 1.0 at 0 deg -> 0.25 at 54.74 deg, the double-bounce
    capture limit of upright <111> pyramids);
  * long-wavelength escape: light that crosses the wafer twice and leaves
    through the front, (1-R_front)^2 * back_reflectivity * exp(-2 a W f);
  * free-carrier absorption: alpha_fca = 5e-18 * N * (lambda/1000)^2 1/cm
    added to the tabulated silicon absorption;
  * depth-dependent generation: Beer-Lambert forward pass plus one
    back-reflected pass, summed over the tabulated spectrum;
  * rear contact thickness: no effect on anything, by construction.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .dataset import DESIGN_FEATURES, CellDesign, CurveKind, SimulationRun
from .errors import DataError

ORACLE_VERSION = "1.0"

# 18 points, 300-1150 nm in 50 nm steps
DEFAULT_WAVELENGTHS_NM = tuple(float(w) for w in range(300, 1151, 50))

FCA_COEFF_CM2 = 5e-18  # alpha_fca = coeff * doping * (lambda_nm / 1000)^2

TEXTURE_FULL_CAPTURE_DEG = 54.74
TEXTURE_MIN_FACTOR = 0.25


def _load_default_absorption() -> tuple[tuple[float, float], ...]:
    payload = json.loads(
        resources.files("gpsurr.data").joinpath("si_absorption.json").read_text()
    )
    return tuple((float(w), float(a)) for w, a in payload["table"])


@dataclass(frozen=True)
class OpticalConstants:
    """Material constants for the analytic oracle."""

    si_refractive_index: float = 3.8
    arc_refractive_index: float = 2.0
    absorption_table: tuple[tuple[float, float], ...] = field(
        default_factory=_load_default_absorption
    )
    photon_flux_scale: float = 1.0

    def __post_init__(self):
        table = tuple((float(w), float(a)) for w, a in self.absorption_table)
        object.__setattr__(self, "absorption_table", table)
        if len(table) < 2:
            raise DataError("absorption table needs at least two entries")
        wls = [w for w, _ in table]
        alphas = [a for _, a in table]
        if any(b <= a for a, b in zip(wls, wls[1:])):
            raise DataError("absorption table wavelengths must be strictly increasing")
        if any(b >= a for a, b in zip(alphas, alphas[1:])):
            raise DataError("absorption must be strictly decreasing with wavelength")
        if any(a <= 0 for a in alphas):
            raise DataError("absorption coefficients must be positive")
        if not self.photon_flux_scale > 0:
            raise DataError("photon_flux_scale must be positive")

    @property
    def wavelengths(self) -> np.ndarray:
        return np.array([w for w, _ in self.absorption_table])

    def absorption(self, wavelengths_nm) -> np.ndarray:
        """Silicon absorption coefficient, log-linear between table entries."""
        wl = np.atleast_1d(np.asarray(wavelengths_nm, dtype=float))
        table_wl = self.wavelengths
        if np.any(wl < table_wl[0]) or np.any(wl > table_wl[-1]):
            raise DataError(
                f"wavelength outside absorption table range "
                f"[{table_wl[0]}, {table_wl[-1]}] nm"
            )
        log_alpha = np.log([a for _, a in self.absorption_table])
        return np.exp(np.interp(wl, table_wl, log_alpha))

    def to_json(self) -> dict:
        return {
            "si_refractive_index": self.si_refractive_index,
            "arc_refractive_index": self.arc_refractive_index,
            "absorption_table": [list(pair) for pair in self.absorption_table],
            "photon_flux_scale": self.photon_flux_scale,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OpticalConstants":
        kwargs = {}
        for key in (
            "si_refractive_index",
            "arc_refractive_index",
            "photon_flux_scale",
        ):
            if key in obj:
                kwargs[key] = float(obj[key])
        if "absorption_table" in obj:
            kwargs["absorption_table"] = tuple(
                (float(w), float(a)) for w, a in obj["absorption_table"]
            )
        return cls(**kwargs)


def texture_factor(pyramid_angle_deg: float) -> float:
    """Linear front-capture ramp: 1.0 at 0 deg down to 0.25 at 54.74 deg."""
    slope = (1.0 - TEXTURE_MIN_FACTOR) / TEXTURE_FULL_CAPTURE_DEG
    return 1.0 - slope * pyramid_angle_deg


def _planar_arc_reflectance(
    wavelengths_nm: np.ndarray, arc_thickness_nm: float, constants: OpticalConstants
) -> np.ndarray:
    """Air/ARC/Si single-layer reflectance, normal incidence (characteristic matrix)."""
    n0, n1, n2 = 1.0, constants.arc_refractive_index, constants.si_refractive_index
    delta = 2.0 * math.pi * n1 * arc_thickness_nm / wavelengths_nm
    cos_d, sin_d = np.cos(delta), np.sin(delta)
    b = cos_d + 1j * (n2 / n1) * sin_d
    c = 1j * n1 * sin_d + n2 * cos_d
    r = (n0 * b - c) / (n0 * b + c)
    return np.abs(r) ** 2


def front_reflectance(
    design: CellDesign, wavelengths_nm, constants: OpticalConstants
) -> np.ndarray:
    """Textured front-surface reflectance (entry loss, no escape term)."""
    wl = np.atleast_1d(np.asarray(wavelengths_nm, dtype=float))
    planar = _planar_arc_reflectance(wl, design.arc_thickness_nm, constants)
    return np.clip(planar * texture_factor(design.pyramid_angle_deg), 0.0, 1.0)


def _effective_absorption(
    design: CellDesign, wavelengths_nm: np.ndarray, constants: OpticalConstants
) -> np.ndarray:
    alpha = constants.absorption(wavelengths_nm)
    fca = FCA_COEFF_CM2 * design.substrate_doping_cm3 * (wavelengths_nm / 1000.0) ** 2
    return alpha + fca


def simulate_reflectance(
    design: CellDesign, wavelengths_nm, constants: OpticalConstants | None = None
) -> SimulationRun:
    """Reflectance curve: front interference plus weakly-absorbed escape light."""
    constants = constants or OpticalConstants()
    wl = np.atleast_1d(np.asarray(wavelengths_nm, dtype=float))
    r_front = front_reflectance(design, wl, constants)
    alpha = _effective_absorption(design, wl, constants)
    f_path = 1.0 / math.cos(math.radians(design.pyramid_angle_deg))
    wafer_cm = design.wafer_thickness_um * 1e-4
    escape = (
        (1.0 - r_front) ** 2
        * design.back_reflectivity_frac
        * np.exp(-2.0 * alpha * wafer_cm * f_path)
    )
    values = np.clip(r_front + escape, 0.0, 1.0)
    return SimulationRun("r0", design, CurveKind.REFLECTANCE, wl, values)


def generation_at_depths(
    design: CellDesign, depths_um, constants: OpticalConstants | None = None
) -> np.ndarray:
    """Generation rate at arbitrary depths: two-pass Beer-Lambert spectrum sum."""
    constants = constants or OpticalConstants()
    depth_um = np.atleast_1d(np.asarray(depths_um, dtype=float))
    wl = constants.wavelengths
    r_front = front_reflectance(design, wl, constants)
    alpha = _effective_absorption(design, wl, constants)
    flux = constants.photon_flux_scale * (wl / 1000.0)
    f_path = 1.0 / math.cos(math.radians(design.pyramid_angle_deg))
    z_cm = depth_um[:, None] * 1e-4
    w_cm = design.wafer_thickness_um * 1e-4
    decay = alpha[None, :] * f_path
    forward = np.exp(-decay * z_cm)
    backward = design.back_reflectivity_frac * np.exp(-decay * (2.0 * w_cm - z_cm))
    return np.sum(flux * (1.0 - r_front) * alpha * f_path * (forward + backward), axis=1)


def simulate_generation(
    design: CellDesign, n_depth_points: int, constants: OpticalConstants | None = None
) -> SimulationRun:
    """Generation profile on a 0..wafer-thickness grid (last point exactly W)."""
    if n_depth_points < 2:
        raise DataError(f"n_depth_points must be >= 2, got {n_depth_points}")
    depth_um = np.linspace(0.0, design.wafer_thickness_um, n_depth_points)
    g = generation_at_depths(design, depth_um, constants)
    return SimulationRun("r0", design, CurveKind.GENERATION, depth_um, g)


@dataclass(frozen=True)
class GridSpec:
    """Per-parameter value lists; the database is their Cartesian product."""

    wafer_thickness_um: tuple[float, ...]
    substrate_doping_cm3: tuple[float, ...]
    pyramid_angle_deg: tuple[float, ...]
    rear_contact_thickness_um: tuple[float, ...]
    arc_thickness_nm: tuple[float, ...]
    back_reflectivity_frac: tuple[float, ...]
    wavelengths_nm: tuple[float, ...] = DEFAULT_WAVELENGTHS_NM
    n_depth_points: int = 25

    def __post_init__(self):
        for name in (*DESIGN_FEATURES, "wavelengths_nm"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise DataError(f"grid field {name} must not be empty")
            object.__setattr__(self, name, values)
        if self.n_depth_points < 2:
            raise DataError("n_depth_points must be >= 2")

    @property
    def n_runs(self) -> int:
        return math.prod(len(getattr(self, name)) for name in DESIGN_FEATURES)

    def designs(self):
        lists = [getattr(self, name) for name in DESIGN_FEATURES]
        for combo in itertools.product(*lists):
            yield CellDesign(*combo)

    def to_json(self) -> dict:
        out = {name: list(getattr(self, name)) for name in DESIGN_FEATURES}
        out["wavelengths_nm"] = list(self.wavelengths_nm)
        out["n_depth_points"] = self.n_depth_points
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "GridSpec":
        try:
            kwargs = {name: tuple(obj[name]) for name in DESIGN_FEATURES}
        except KeyError as exc:
            raise DataError(f"grid config is missing field {exc.args[0]!r}") from None
        if "wavelengths_nm" in obj:
            kwargs["wavelengths_nm"] = tuple(obj["wavelengths_nm"])
        if "n_depth_points" in obj:
            kwargs["n_depth_points"] = int(obj["n_depth_points"])
        return cls(**kwargs)


def default_grid() -> GridSpec:
    """The documented 4 x 2 x 4 x 2 x 4 x 3 = 768-run factorial grid."""
    return GridSpec(
        wafer_thickness_um=(120.0, 160.0, 200.0, 240.0),
        substrate_doping_cm3=(1e15, 1e17),
        pyramid_angle_deg=(42.0, 46.0, 50.0, 54.0),
        rear_contact_thickness_um=(0.5, 2.0),
        arc_thickness_nm=(60.0, 72.0, 85.0, 100.0),
        back_reflectivity_frac=(0.7, 0.85, 0.95),
    )


MAX_DATABASE_ROWS = 1_000_000


def config_hash(
    grid: GridSpec,
    constants: OpticalConstants,
    curve_kind: CurveKind,
    noise_sd: float,
    seed: int,
) -> str:
    payload = {
        "oracle_version": ORACLE_VERSION,
        "grid": grid.to_json(),
        "constants": constants.to_json(),
        "curve_kind": CurveKind(curve_kind).value,
        "noise_sd": noise_sd,
        "seed": seed,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def generate_database(
    grid: GridSpec,
    constants: OpticalConstants | None = None,
    curve_kind: CurveKind = CurveKind.REFLECTANCE,
    noise_sd: float = 0.0,
    seed: int = 0,
) -> list[SimulationRun]:
    """Simulate the full factorial grid, with optional additive Gaussian noise.

    Noise is drawn from a per-run seeded stream, so the database is
    deterministic for a given seed regardless of evaluation order. Noisy
    values are clamped back into the curve's physical domain ([0, 1] for
    reflectance, >= 0 for generation).
    """
    constants = constants or OpticalConstants()
    curve_kind = CurveKind(curve_kind)
    if noise_sd < 0:
        raise DataError(f"noise_sd must be >= 0, got {noise_sd}")
    sweep_len = (
        len(grid.wavelengths_nm)
        if curve_kind is CurveKind.REFLECTANCE
        else grid.n_depth_points
    )
    total_rows = grid.n_runs * sweep_len
    if total_rows > MAX_DATABASE_ROWS:
        raise DataError(
            f"grid would produce {total_rows} rows, over the {MAX_DATABASE_ROWS} guard"
        )
    width = max(4, len(str(grid.n_runs - 1)))
    runs = []
    for idx, design in enumerate(grid.designs()):
        if curve_kind is CurveKind.REFLECTANCE:
            run = simulate_reflectance(design, np.array(grid.wavelengths_nm), constants)
            lo, hi = 0.0, 1.0
        else:
            run = simulate_generation(design, grid.n_depth_points, constants)
            lo, hi = 0.0, np.inf
        values = run.values
        if noise_sd > 0:
            rng = np.random.default_rng([seed, idx])
            values = np.clip(values + rng.normal(0.0, noise_sd, values.shape), lo, hi)
        runs.append(
            SimulationRun(f"r{idx:0{width}d}", design, curve_kind, run.sweep, values)
        )
    return runs
