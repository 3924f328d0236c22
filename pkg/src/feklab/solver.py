"""Configured wave solves: run loop, forcing, config and snapshot files.

Snapshots are a self-describing format: a magic line, a JSON header naming
the arrays with shapes and byte offsets, then the raw little-endian FP64
payload.  Configs are flat JSON objects; unknown keys are rejected so typos
fail loudly, and any key can be overridden on the command line.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .mesh import Mesh, build_mesh, h1_node_coords
from .operator import BlockOperator, State, acoustic_energy, rk4_step

SNAP_MAGIC = "feklab-snapshot v1"


class ConfigError(ValueError):
    """Bad or unknown solver configuration."""


@dataclass
class RunConfig:
    nx: int = 2
    ny: int = 2
    nz: int = 2
    extents: tuple[float, float, float] = (1.0, 1.0, 1.0)
    order_p: int = 4
    order_u: int = 3
    num_quad_1d: int = 5
    strategy: str = "PA"
    backend: str = "scalar"
    rho: float = 1.0
    bulk_modulus: float = 1.0
    dt: float = 0.01
    num_steps: int = 100
    initial: str = "zero"  # zero | standing_wave
    forcing: str = "none"  # none | bottom_piston
    forcing_amplitude: float = 1.0
    forcing_frequency: float = 1.0
    absorbing: bool = False
    surface_gravity: float | None = None
    energy_every: int = 1
    seed: int = 0
    snapshot_out: str | None = None
    deterministic: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = set(cls().__dict__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in doc.items()})
        if isinstance(cfg.extents, list):
            cfg.extents = tuple(cfg.extents)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.initial not in ("zero", "standing_wave"):
            raise ConfigError(f"initial must be zero|standing_wave, got {self.initial!r}")
        if self.forcing not in ("none", "bottom_piston"):
            raise ConfigError(f"forcing must be none|bottom_piston, got {self.forcing!r}")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.num_steps < 0:
            raise ConfigError("num_steps must be non-negative")


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """key=value overrides with JSON-style values."""
    doc = asdict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        if key not in doc:
            raise ConfigError(f"unknown config keys: ['{key}']")
        try:
            doc[key] = json.loads(value)
        except json.JSONDecodeError:
            doc[key] = value
    return RunConfig.from_dict(doc)


@dataclass
class SolveResult:
    config: RunConfig
    times: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    final_state: State | None = None

    def report(self) -> dict:
        return {
            "num_steps": self.config.num_steps,
            "dt": self.config.dt,
            "times": self.times,
            "energies": self.energies,
            "final_energy": self.energies[-1] if self.energies else 0.0,
            "max_abs_p": float(np.max(np.abs(self.final_state.p))),
            "max_abs_u": float(np.max(np.abs(self.final_state.u))),
        }


def build_operator(cfg: RunConfig) -> tuple[Mesh, BlockOperator]:
    mesh = build_mesh(cfg.nx, cfg.ny, cfg.nz, cfg.extents)
    op = BlockOperator(
        mesh,
        order_p=cfg.order_p,
        order_u=cfg.order_u,
        num_quad_1d=cfg.num_quad_1d,
        strategy=cfg.strategy,
        backend=cfg.backend,
        rho=cfg.rho,
        bulk_modulus=cfg.bulk_modulus,
        absorbing=cfg.absorbing,
        surface_gravity=cfg.surface_gravity,
    )
    return mesh, op


def initial_state(cfg: RunConfig, mesh: Mesh, op: BlockOperator) -> State:
    s = op.zero_state()
    if cfg.initial == "standing_wave":
        coords = h1_node_coords(mesh, op.basis_p.nodes)
        s.p[:] = np.cos(np.pi * coords[:, 0] / cfg.extents[0])
    return s


def make_forcing(cfg: RunConfig, op: BlockOperator):
    if cfg.forcing == "none":
        return None
    load = op.bottom_face_load(lambda x, y: np.ones_like(x))
    omega = 2.0 * np.pi * cfg.forcing_frequency

    def forcing(t: float) -> State:
        f = op.zero_state()
        f.p[:] = cfg.forcing_amplitude * np.sin(omega * t) * load
        return f

    return forcing


def run_solve(cfg: RunConfig) -> SolveResult:
    mesh, op = build_operator(cfg)
    state = initial_state(cfg, mesh, op)
    forcing = make_forcing(cfg, op)
    result = SolveResult(config=cfg)
    result.times.append(0.0)
    result.energies.append(acoustic_energy(state, op.quad))
    for i in range(cfg.num_steps):
        state = rk4_step(state, cfg.dt, op, forcing=forcing, t=i * cfg.dt, step_index=i)
        if (i + 1) % cfg.energy_every == 0 or i + 1 == cfg.num_steps:
            result.times.append((i + 1) * cfg.dt)
            result.energies.append(acoustic_energy(state, op.quad))
    if cfg.surface_gravity is not None:
        state.eta = op.surface_height(state)
    result.final_state = state
    if cfg.snapshot_out:
        save_snapshot(cfg.snapshot_out, state, mesh)
    return result


# ---------------------------------------------------------------------------
# Snapshot files
# ---------------------------------------------------------------------------


def save_snapshot(path, state: State, mesh: Mesh | None = None) -> None:
    arrays = {"u": state.u, "p": state.p}
    if state.eta is not None:
        arrays["eta"] = state.eta
    if mesh is not None:
        arrays["vertices"] = mesh.vertices
    header: dict = {"arrays": {}, "dtype": "<f8"}
    if mesh is not None:
        header["mesh"] = {"nx": mesh.nx, "ny": mesh.ny, "nz": mesh.nz, "extents": mesh.extents}
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        header["arrays"][name] = {"shape": list(a.shape), "offset": offset}
        blobs.append(a.tobytes())
        offset += len(blobs[-1])
    with open(path, "wb") as fh:
        fh.write(SNAP_MAGIC.encode() + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_snapshot(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != SNAP_MAGIC:
            raise ValueError(f"not a snapshot file (magic {magic!r})")
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    out = {}
    for name, meta in header["arrays"].items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(payload, dtype=header["dtype"], count=count, offset=start)
        out[name] = arr.reshape(shape).copy()
    if "mesh" in header:
        out["mesh_meta"] = header["mesh"]
    return out
