"""Cell geometry, solver settings and the finite-volume mesh."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .electrochem import (
    ChemistrySpec,
    ConfigurationError,
    ElectrolyteSpec,
    KineticsContext,
    specific_surface_area,
)


@dataclass(frozen=True)
class LayerSpec:
    """One region of the through-thickness domain.

    ``chemistry`` is None for the separator. ``c_s_init`` holds the particle
    concentration used when a run starts in the charge direction and in the
    discharge direction, in that order.
    """

    L: float
    eps_e: float
    b: float
    chemistry: ChemistrySpec | None = None
    eps_cbd: float = 0.0
    sigma_s: float = 5.0
    c_s_init: tuple[float, float] = (0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigurationError(f"layer {self.name!r}: thickness must be positive, got {self.L}")
        if not 0 < self.eps_e < 1:
            raise ConfigurationError(f"layer {self.name!r}: eps_e must lie in (0, 1), got {self.eps_e}")
        if self.b < 1:
            raise ConfigurationError(f"layer {self.name!r}: Bruggeman factor must be >= 1")
        if self.chemistry is not None:
            if self.eps_cbd < 0 or not self.eps_e + self.eps_cbd < 1:
                raise ConfigurationError(
                    f"layer {self.name!r}: eps_e + eps_cbd must be < 1 (got {self.eps_e} + {self.eps_cbd})"
                )
            cmax = self.chemistry.c_s_max
            for c in self.c_s_init:
                if not 0 <= c <= cmax:
                    raise ConfigurationError(f"layer {self.name!r}: c_s_init {c} outside [0, {cmax}]")

    @property
    def is_electrode(self) -> bool:
        return self.chemistry is not None

    @property
    def eps_solid(self) -> float:
        return 1.0 - self.eps_e - self.eps_cbd

    @property
    def surface_area(self) -> float:
        return specific_surface_area(self.eps_e, self.eps_cbd, self.chemistry.R_p)

    @property
    def eps_active(self) -> float:
        """Volume fraction holding exchangeable lithium."""
        share = self.chemistry.capacity_share
        if share is None:
            return self.eps_solid
        return (1.0 - self.eps_e) * share

    def theoretical_capacity(self) -> float:
        """Areal capacity (mAh/cm^2) between the two initial states."""
        dc = abs(self.c_s_init[0] - self.c_s_init[1])
        return self.eps_active * self.L * dc * 96485.33 / 36000.0


@dataclass(frozen=True)
class CellDesign:
    """Separator followed by one or more electrode sub-layers toward the CC."""

    layers: tuple[LayerSpec, ...]
    electrolyte: ElectrolyteSpec = field(default_factory=ElectrolyteSpec)
    area: float = 1.54e-4
    R_contact: float = 1.5e-3
    i0_counter: float = 10.0
    cutoff_upper: float = 4.2
    cutoff_lower: float = 2.7
    kinetics: KineticsContext = field(default_factory=KineticsContext)
    cbd_density: float = 1800.0
    name: str = ""

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers or layers[0].is_electrode:
            raise ConfigurationError("first layer must be the separator")
        if any(not layer.is_electrode for layer in layers[1:]):
            raise ConfigurationError("exactly one separator, adjacent to the counter electrode")
        if len(layers) < 2:
            raise ConfigurationError("design needs at least one electrode layer")
        if not self.area > 0:
            raise ConfigurationError("area must be positive")
        if not self.cutoff_lower < self.cutoff_upper:
            raise ConfigurationError("cutoff_lower must be below cutoff_upper")
        if not self.i0_counter > 0:
            raise ConfigurationError("counter-electrode exchange current must be positive")

    @property
    def separator(self) -> LayerSpec:
        return self.layers[0]

    @property
    def electrodes(self) -> tuple[LayerSpec, ...]:
        return self.layers[1:]

    @property
    def electrode_thickness(self) -> float:
        return sum(layer.L for layer in self.electrodes)

    def theoretical_capacity(self) -> float:
        return sum(layer.theoretical_capacity() for layer in self.electrodes)

    def cathode_mass(self) -> float:
        """Cathode coating mass in grams (active material plus CBD)."""
        kg = 0.0
        for layer in self.electrodes:
            rho = layer.eps_solid * layer.chemistry.density + layer.eps_cbd * self.cbd_density
            kg += rho * layer.L * self.area
        return kg * 1000.0

    def with_layer(self, index: int, **changes) -> "CellDesign":
        """Copy with electrode layer ``index`` (0 = next to separator) modified."""
        layers = list(self.layers)
        layers[index + 1] = replace(layers[index + 1], **changes)
        return replace(self, layers=tuple(layers))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(design_to_dict(self), sort_keys=True).encode()).hexdigest()[:16]


def design_to_dict(design: CellDesign) -> dict:
    """Plain-data view of a design (chemistries by value, electrolyte by name)."""
    def layer_dict(layer):
        d = {k: v for k, v in asdict(layer).items() if k != "chemistry"}
        d["c_s_init"] = list(layer.c_s_init)
        if layer.chemistry is not None:
            chem = layer.chemistry
            d["chemistry"] = {
                "name": chem.name, "c_s_max": chem.c_s_max, "D_s": chem.D_s, "k_rate": chem.k_rate,
                "R_p": chem.R_p, "capacity_share": chem.capacity_share, "density": chem.density,
                "ocp": {"variant": chem.ocp.variant, "coefficients": list(chem.ocp.coefficients),
                        "window": list(chem.ocp.window)},
            }
        return d

    return {
        "name": design.name,
        "layers": [layer_dict(layer) for layer in design.layers],
        "electrolyte": {"name": design.electrolyte.name, "c_e0": design.electrolyte.c_e0,
                        "t_plus": design.electrolyte.t_plus, "D_scale": design.electrolyte.D_scale,
                        "kappa_scale": design.electrolyte.kappa_scale},
        "area": design.area,
        "R_contact": design.R_contact,
        "i0_counter": design.i0_counter,
        "cutoff_upper": design.cutoff_upper,
        "cutoff_lower": design.cutoff_lower,
        "T": design.kinetics.T,
        "cbd_density": design.cbd_density,
    }


@dataclass(frozen=True)
class SolverConfig:
    nodes_per_region: int = 30
    radial_shells: int = 20
    newton_tol: float = 1e-9
    max_newton: int = 25
    dt_initial: float = 0.1
    dt_min: float = 1e-4
    dt_max: float = 30.0
    cutoff_tol: float = 1e-4
    max_dv: float = 0.01
    max_dc: float = 0.1
    depletion_floor: float = 5.0

    def __post_init__(self):
        if self.nodes_per_region < 2 or self.radial_shells < 2:
            raise ConfigurationError("need at least 2 nodes per region and 2 radial shells")
        for name in ("newton_tol", "cutoff_tol", "max_dv", "max_dc", "dt_min"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not self.dt_min <= self.dt_initial <= self.dt_max:
            raise ConfigurationError("need dt_min <= dt_initial <= dt_max")


@dataclass(frozen=True)
class Mesh:
    x: np.ndarray          # cell centres (m)
    dx: np.ndarray         # cell widths (m)
    region: np.ndarray     # region index per cell, 0 = separator
    boundaries: np.ndarray  # region boundary positions (m), len = n_regions + 1
    radial_shells: int

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def electrode(self) -> np.ndarray:
        return self.region > 0

    def region_slice(self, k: int) -> slice:
        idx = np.flatnonzero(self.region == k)
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def probe_nodes(self, k: int) -> dict[str, int]:
        """Indices next to the region's separator side, at its midpoint and at its CC side."""
        s = self.region_slice(k)
        return {"Sep": s.start, "Mid": (s.start + s.stop - 1) // 2, "CC": s.stop - 1}


def build_mesh(design: CellDesign, config: SolverConfig = SolverConfig()) -> Mesh:
    """Uniform cell-centred mesh per region; region interfaces sit on cell faces."""
    n = config.nodes_per_region
    xs, dxs, regions, bounds = [], [], [], [0.0]
    for k, layer in enumerate(design.layers):
        h = layer.L / n
        if h < 1e-9:
            raise ConfigurationError(f"layer {k} thinner than one node spacing ({layer.L} m)")
        start = bounds[-1]
        xs.append(start + h * (np.arange(n) + 0.5))
        dxs.append(np.full(n, h))
        regions.append(np.full(n, k, dtype=np.int64))
        bounds.append(start + layer.L)
    return Mesh(
        x=np.concatenate(xs),
        dx=np.concatenate(dxs),
        region=np.concatenate(regions),
        boundaries=np.asarray(bounds),
        radial_shells=config.radial_shells,
    )
