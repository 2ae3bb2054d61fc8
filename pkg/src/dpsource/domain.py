"""Shared domain types, pixel grids, hyperparameters and plain-text I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

EVENT_HEADER = ("x_deg", "y_deg", "energy_gev")


class ValidationError(ValueError):
    """Raised when an input file or value violates a domain contract."""


@dataclass(frozen=True)
class MapBounds:
    """Rectangular sky patch (degrees) and energy range (GeV)."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    e_min: float
    e_max: float

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValidationError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        if not self.y_min < self.y_max:
            raise ValidationError(f"y_min={self.y_min} must be < y_max={self.y_max}")
        if not 0 < self.e_min < self.e_max:
            raise ValidationError(
                f"need 0 < e_min < e_max, got e_min={self.e_min}, e_max={self.e_max}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def rect(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def contains(self, x, y):
        """Closed-rectangle membership; works elementwise on arrays."""
        return ((x >= self.x_min) & (x <= self.x_max)
                & (y >= self.y_min) & (y <= self.y_max))

    @classmethod
    def square(cls, half_width: float, e_min: float = 1.0, e_max: float = 10 ** 2.5,
               center: tuple[float, float] = (0.0, 0.0)) -> "MapBounds":
        cx, cy = center
        return cls(cx - half_width, cx + half_width, cy - half_width, cy + half_width,
                   e_min, e_max)


class PhotonEvent(NamedTuple):
    x: float
    y: float
    energy: float


def validate_event(event: PhotonEvent, bounds: MapBounds, index: int) -> None:
    if not bounds.contains(event.x, event.y):
        raise ValidationError(
            f"event {index} at ({event.x}, {event.y}) lies outside the map")
    if not event.energy >= bounds.e_min:
        raise ValidationError(
            f"event {index} has energy {event.energy} below e_min={bounds.e_min}")


def events_to_arrays(events: Sequence[PhotonEvent]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(xy, energy)`` with ``xy`` of shape (n, 2)."""
    if len(events) == 0:
        return np.zeros((0, 2)), np.zeros(0)
    arr = np.asarray(events, dtype=float).reshape(len(events), 3)
    return np.ascontiguousarray(arr[:, :2]), np.ascontiguousarray(arr[:, 2])


def arrays_to_events(xy, energy) -> list[PhotonEvent]:
    return [PhotonEvent(float(a), float(b), float(e)) for (a, b), e in zip(xy, energy)]


def read_event_list(path, bounds: MapBounds) -> list[PhotonEvent]:
    """Read an event CSV with header ``x_deg,y_deg,energy_gev``.

    Every event is checked against ``bounds``; malformed rows raise a
    :class:`ValidationError` naming the (1-based) file line, out-of-bounds
    events name the (0-based) event index.
    """
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != EVENT_HEADER:
            raise ValidationError(
                f"{path}: line 1: expected header {','.join(EVENT_HEADER)}, got {header}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                x, y, e = (float(c) for c in row)
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: non-numeric field in {row}") from None
            if not all(math.isfinite(v) for v in (x, y, e)):
                raise ValidationError(f"{path}: line {lineno}: non-finite value in {row}")
            event = PhotonEvent(x, y, e)
            validate_event(event, bounds, len(events))
            events.append(event)
    return events


def write_event_list(path, events: Iterable[PhotonEvent]) -> None:
    # repr() round-trips doubles exactly
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EVENT_HEADER)
        for ev in events:
            writer.writerow((repr(float(ev.x)), repr(float(ev.y)), repr(float(ev.energy))))


@dataclass(frozen=True)
class GridSpec:
    """Pixelisation of a map: ``n_x`` by ``n_y`` square pixels."""

    bounds: MapBounds
    pixel_size: float

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise ValidationError("pixel_size must be positive")

    @property
    def n_x(self) -> int:
        return int(round(self.bounds.width / self.pixel_size))

    @property
    def n_y(self) -> int:
        return int(round(self.bounds.height / self.pixel_size))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    def x_edges(self) -> np.ndarray:
        return np.linspace(self.bounds.x_min, self.bounds.x_max, self.n_x + 1)

    def y_edges(self) -> np.ndarray:
        return np.linspace(self.bounds.y_min, self.bounds.y_max, self.n_y + 1)

    def x_centers(self) -> np.ndarray:
        e = self.x_edges()
        return 0.5 * (e[:-1] + e[1:])

    def y_centers(self) -> np.ndarray:
        e = self.y_edges()
        return 0.5 * (e[:-1] + e[1:])

    def pixel_area(self) -> float:
        return (self.bounds.width / self.n_x) * (self.bounds.height / self.n_y)

    def pixel_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Half-open pixel lookup ``[lo, hi)``; the top/right map edge is closed."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        u = np.floor((x - self.bounds.x_min) / self.bounds.width * self.n_x).astype(np.int64)
        v = np.floor((y - self.bounds.y_min) / self.bounds.height * self.n_y).astype(np.int64)
        # guard against floating-point drift relative to the explicit edges
        xe, ye = self.x_edges(), self.y_edges()
        u = np.clip(u, 0, self.n_x - 1)
        v = np.clip(v, 0, self.n_y - 1)
        u = np.where((u + 1 < self.n_x) & (x >= xe[np.minimum(u + 1, self.n_x)]), u + 1, u)
        u = np.where((u > 0) & (x < xe[u]), u - 1, u)
        v = np.where((v + 1 < self.n_y) & (y >= ye[np.minimum(v + 1, self.n_y)]), v + 1, v)
        v = np.where((v > 0) & (y < ye[v]), v - 1, v)
        return u, v


@dataclass
class PixelGrid:
    """Counts (or expected counts) on a :class:`GridSpec`, indexed ``[u, v]``."""

    spec: GridSpec
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.shape != self.spec.shape:
            raise ValidationError(
                f"counts shape {self.counts.shape} does not match grid {self.spec.shape}")

    @property
    def bounds(self) -> MapBounds:
        return self.spec.bounds

    @property
    def pixel_size(self) -> float:
        return self.spec.pixel_size

    def total(self):
        return self.counts.sum()


def bin_events(events: Sequence[PhotonEvent], spec: GridSpec) -> PixelGrid:
    xy, _ = events_to_arrays(events)
    return bin_points(xy, spec)


def bin_points(xy: np.ndarray, spec: GridSpec) -> PixelGrid:
    counts = np.zeros(spec.shape, dtype=np.int64)
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if len(xy):
        inside = spec.bounds.contains(xy[:, 0], xy[:, 1])
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise ValidationError(f"point {bad} lies outside the map")
        u, v = spec.pixel_index(xy[:, 0], xy[:, 1])
        np.add.at(counts, (u, v), 1)
    return PixelGrid(spec, counts)


def write_grid(path, grid: PixelGrid) -> None:
    """Grid text format: header ``nx ny x_min x_max y_min y_max`` then
    ``n_y`` rows of ``n_x`` values, starting at ``y_min``."""
    b = grid.bounds
    nx, ny = grid.spec.shape
    is_int = np.issubdtype(grid.counts.dtype, np.integer)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{nx} {ny} {b.x_min!r} {b.x_max!r} {b.y_min!r} {b.y_max!r}\n")
        for v in range(ny):
            row = grid.counts[:, v]
            fh.write(" ".join(str(int(c)) if is_int else repr(float(c)) for c in row))
            fh.write("\n")


def read_grid(path, e_min: float = 1.0, e_max: float = 10 ** 2.5) -> PixelGrid:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty grid file")
    head = lines[0].split()
    if len(head) != 6:
        raise ValidationError(f"{path}: line 1: expected 'nx ny x_min x_max y_min y_max'")
    nx, ny = int(head[0]), int(head[1])
    x0, x1, y0, y1 = (float(h) for h in head[2:])
    if len(lines) - 1 != ny:
        raise ValidationError(f"{path}: expected {ny} data rows, found {len(lines) - 1}")
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        vals = ln.split()
        if len(vals) != nx:
            raise ValidationError(f"{path}: line {k}: expected {nx} values, got {len(vals)}")
        rows.append([float(s) for s in vals])
    counts = np.array(rows).T
    if np.all(counts == np.round(counts)):
        counts = counts.astype(np.int64)
    spec = GridSpec(MapBounds(x0, x1, y0, y1, e_min, e_max), (x1 - x0) / nx)
    if spec.shape != (nx, ny):
        raise ValidationError(f"{path}: non-square pixels are not supported")
    return PixelGrid(spec, counts)


@dataclass(frozen=True)
class Hyperparameters:
    lam: float = 1.0
    alpha_s: float = 2.0
    alpha_b: float = 1.5
    a_eta_s: float = 3.196
    b_eta_s: float = 2.196
    a_eta_b: float = 1.79
    b_eta_b: float = 0.714
    c_ell: float = 1.0
    c_b: float = 1.0
    h_s: int = 5
    h_b: int = 5
    prop_sd2: float = 0.001

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in ("c_ell", "c_b"):
                if not val >= 0:
                    raise ValidationError(f"{f.name} must be non-negative, got {val}")
            elif not val > 0:
                raise ValidationError(f"{f.name} must be positive, got {val}")
        if int(self.h_s) != self.h_s or int(self.h_b) != self.h_b:
            raise ValidationError("h_s and h_b must be integers")


def parse_keyvalue(text: str, source: str = "<config>") -> tuple[dict, list[dict]]:
    """Parse ``key = value`` lines; ``[[name]]`` opens a repeated block.

    Returns the top-level mapping and a list of blocks, each a dict carrying
    its block name under ``"__block__"``. ``#`` starts a comment.
    """
    top: dict = {}
    blocks: list[dict] = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[[") and line.endswith("]]"):
            current = {"__block__": line[2:-2].strip()}
            blocks.append(current)
            continue
        if "=" not in line:
            raise ValidationError(f"{source}: line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(f"{source}: line {lineno}: empty key")
        current[key] = val.strip("\"'")
    return top, blocks


def coerce(value: str, kind: type, key: str):
    try:
        if kind is bool:
            low = str(value).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind is int:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        return kind(value)
    except (TypeError, ValueError):
        raise ValidationError(f"config key '{key}': cannot interpret {value!r} as {kind.__name__}") from None


@dataclass
class RunConfig:
    """Everything ``fit`` needs besides the events: model, MCMC and PSF settings."""

    model: str = "spatial"
    iterations: int = 1000
    burn_in_fraction: float = 0.75
    chains: int = 4
    seed: int = 0
    thin: int = 1
    record_background: bool = True
    aux_mode: str = "event"
    scan: str = "fixed"
    x_min: float = -5.0
    x_max: float = 5.0
    y_min: float = -5.0
    y_max: float = 5.0
    e_min: float = 1.0
    e_max: float = 10 ** 2.5
    psf_sigma_ref: float = 0.6
    psf_e_ref: float = 1.0
    psf_index: float = 0.8
    psf_sigma_floor: float = 0.07
    psf_table: str = ""
    pixel_size: float = 0.05
    p_star: float = 0.95
    d_r: int = 3
    hyper: Hyperparameters = field(default_factory=Hyperparameters)

    def __post_init__(self):
        if self.model not in ("spatial", "joint", "background"):
            raise ValidationError(f"config key 'model': unknown model {self.model!r}")
        if self.aux_mode not in ("event", "sweep"):
            raise ValidationError(f"config key 'aux_mode': expected 'event' or 'sweep'")
        if self.scan not in ("fixed", "random"):
            raise ValidationError(f"config key 'scan': expected 'fixed' or 'random'")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValidationError("config key 'burn_in_fraction': must lie in [0, 1)")
        if self.iterations < 0 or self.chains < 1 or self.thin < 1:
            raise ValidationError("iterations >= 0, chains >= 1 and thin >= 1 are required")
        if self.d_r < 1 or self.d_r % 2 == 0:
            raise ValidationError("config key 'd_r': must be an odd positive integer")

    @property
    def bounds(self) -> MapBounds:
        return MapBounds(self.x_min, self.x_max, self.y_min, self.y_max, self.e_min, self.e_max)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        own = {f.name: f for f in fields(cls) if f.name != "hyper"}
        hyper_fields = {f.name: f for f in fields(Hyperparameters)}
        kw, hkw = {}, {}
        for key, val in mapping.items():
            name = "lam" if key == "lambda" else key
            if name in own:
                kind = {"str": str, "int": int, "float": float, "bool": bool}[str(own[name].type)]
                kw[name] = coerce(val, kind, key)
            elif name in hyper_fields:
                kind = int if name in ("h_s", "h_b") else float
                hkw[name] = coerce(val, kind, key)
            else:
                raise ValidationError(f"unknown config key '{key}'")
        return cls(hyper=Hyperparameters(**hkw), **kw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        top, blocks = parse_keyvalue(Path(path).read_text(encoding="utf-8"), str(path))
        if blocks:
            raise ValidationError(f"{path}: repeated blocks are not allowed in a run config")
        return cls.from_mapping(top)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "hyper":
                continue
            lines.append(f"{f.name} = {getattr(self, f.name)!r}".replace("'", ""))
        for f in fields(self.hyper):
            key = "lambda" if f.name == "lam" else f.name
            lines.append(f"{key} = {getattr(self.hyper, f.name)!r}")
        return "\n".join(lines) + "\n"
