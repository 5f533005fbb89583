"""Run configuration documents: parsing, validation and the content hash."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .controller import MODES, ControllerConfig
from .errors import ConfigError, DgsmpcError
from .model import PlantModel
from .selection import POLICIES, TIE_RTOL
from .simulation import DEFAULT_VIOLATION_HORIZON, DISTRIBUTIONS
from .synthesis import DEFAULT_GRID_SIZE, DEFAULT_MU_MIN

PRESETS = {"coupled_tank": "coupled_tank.json"}
SPACINGS = ("log", "quadratic", "linear")
# keys that only say where files go; they never change file contents
OUTPUT_KEYS = ("output", "library_out")


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; known: {sorted(PRESETS)}")
    text = resources.files("dgsmpc").joinpath("data", PRESETS[name]).read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class GridSpec:
    count: int = DEFAULT_GRID_SIZE
    mu_min: float = DEFAULT_MU_MIN
    spacing: str = "log"


@dataclass(frozen=True)
class RunConfig:
    model: PlantModel
    modes: tuple = ("method1",)
    grid: GridSpec = field(default_factory=GridSpec)
    library: str | None = None
    x0: tuple = ()
    epsilon0: float | None = None
    initial_policy: object = "largest"
    tie_rtol: float = TIE_RTOL
    T: int = 200
    runs: int = 100
    violation_horizon: int = DEFAULT_VIOLATION_HORIZON
    seed: int = 0
    distribution: str = "laplace"
    mu_values: tuple = (1e-15, 1e-4, 2.5e-4)
    directions: int = 64
    property_instances: int = 100
    draws: int = 100_000
    output: str | None = None
    library_out: str | None = None
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def controller_config(self, mode: str) -> ControllerConfig:
        return ControllerConfig(mode=mode, epsilon0=self.epsilon0, initial_policy=self.initial_policy,
                                tie_rtol=self.tie_rtol)

    def canonical(self) -> dict:
        """Everything that affects results, with defaults filled in."""
        d = {
            "model": self.model.to_dict(),
            "modes": list(self.modes),
            "grid": asdict(self.grid),
            "library": _file_digest(self.library) if self.library else None,
            "x0": list(self.x0),
            "epsilon0": self.epsilon0,
            "initial_policy": self.initial_policy,
            "tie_rtol": self.tie_rtol,
            "T": self.T,
            "runs": self.runs,
            "violation_horizon": self.violation_horizon,
            "seed": self.seed,
            "distribution": self.distribution,
            "mu_values": list(self.mu_values),
            "directions": self.directions,
            "property_instances": self.property_instances,
            "draws": self.draws,
        }
        return d

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _file_digest(path) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise ConfigError(f"cannot read library {path}: {exc}") from exc


_KNOWN = {
    "model", "preset", "model_file", "mode", "modes", "grid", "library", "x0", "epsilon0",
    "initial_policy", "tie_rtol", "T", "runs", "violation_horizon", "seed", "distribution",
    "mu_values", "directions", "property_instances", "draws", "output", "library_out",
}


def _int(doc, key, default, minimum):
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer, got {v!r}")
    if v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {v}")
    return v


def _float(doc, key, default):
    v = doc.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    return float(v)


def parse_config(doc: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - _KNOWN)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    base_dir = base_dir or Path.cwd()

    sources = [k for k in ("model", "preset", "model_file") if k in doc]
    if len(sources) != 1:
        raise ConfigError("exactly one of model, preset, model_file is required")
    if "model" in doc:
        mdoc = doc["model"]
    elif "preset" in doc:
        mdoc = load_preset(doc["preset"])
    else:
        try:
            mdoc = json.loads((base_dir / doc["model_file"]).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read model_file: {exc}") from exc
    try:
        model = PlantModel.from_dict(mdoc)
    except DgsmpcError as exc:
        raise ConfigError(f"invalid model: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc

    if "mode" in doc and "modes" in doc:
        raise ConfigError("give either mode or modes, not both")
    modes = doc.get("modes", [doc.get("mode", "method1")])
    if isinstance(modes, str):
        modes = [modes]
    if not modes or any(m not in MODES for m in modes):
        raise ConfigError(f"modes must be a non-empty list drawn from {MODES}, got {modes!r}")

    g = doc.get("grid", {})
    if not isinstance(g, dict) or set(g) - {"count", "mu_min", "spacing"}:
        raise ConfigError("grid must be an object with keys count, mu_min, spacing")
    grid = GridSpec(count=_int(g, "count", DEFAULT_GRID_SIZE, 1), mu_min=_float(g, "mu_min", DEFAULT_MU_MIN),
                    spacing=g.get("spacing", "log"))
    if not 0.0 < grid.mu_min <= 1.0:
        raise ConfigError("grid.mu_min must lie in (0, 1]")
    if grid.spacing not in SPACINGS:
        raise ConfigError(f"grid.spacing must be one of {SPACINGS}")

    library = doc.get("library")
    if library is not None:
        library = str(base_dir / library)

    x0 = doc.get("x0", [0.0] * model.nx)
    if not isinstance(x0, list) or len(x0) != model.nx:
        raise ConfigError(f"x0 must be a list of {model.nx} numbers")
    x0 = tuple(_float({"x0": v}, "x0", 0.0) for v in x0)

    eps0 = doc.get("epsilon0")
    if eps0 is not None:
        eps0 = _float(doc, "epsilon0", None)
        if eps0 < 0.0:
            raise ConfigError("epsilon0 must be nonnegative")

    policy = doc.get("initial_policy", "largest")
    if isinstance(policy, str):
        if policy not in POLICIES:
            raise ConfigError(f"initial_policy must be one of {POLICIES} or a grid weight")
    else:
        policy = _float(doc, "initial_policy", None)
        if not 0.0 < policy <= 1.0:
            raise ConfigError("an explicit initial_policy weight must lie in (0, 1]")

    distribution = doc.get("distribution", "laplace")
    if distribution not in DISTRIBUTIONS:
        raise ConfigError(f"distribution must be one of {DISTRIBUTIONS}")

    mu_values = doc.get("mu_values", [1e-15, 1e-4, 2.5e-4])
    if not isinstance(mu_values, list) or not mu_values:
        raise ConfigError("mu_values must be a non-empty list")
    mu_values = tuple(_float({"m": v}, "m", 0.0) for v in mu_values)
    if any(not 0.0 < v <= 1.0 for v in mu_values):
        raise ConfigError("mu_values must lie in (0, 1]")

    tie = _float(doc, "tie_rtol", TIE_RTOL)
    if tie < 0.0:
        raise ConfigError("tie_rtol must be nonnegative")

    return RunConfig(
        model=model,
        modes=tuple(modes),
        grid=grid,
        library=library,
        x0=x0,
        epsilon0=eps0,
        initial_policy=policy,
        tie_rtol=tie,
        T=_int(doc, "T", 200, 1),
        runs=_int(doc, "runs", 100, 1),
        violation_horizon=_int(doc, "violation_horizon", DEFAULT_VIOLATION_HORIZON, 0),
        seed=_int(doc, "seed", 0, 0),
        distribution=distribution,
        mu_values=mu_values,
        directions=_int(doc, "directions", 64, 1),
        property_instances=_int(doc, "property_instances", 100, 0),
        draws=_int(doc, "draws", 100_000, 0),
        output=doc.get("output"),
        library_out=doc.get("library_out"),
        source=doc,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc, path.parent)


def output_path(name: str | None, default: str) -> Path:
    """Resolve an output file; relative paths land in ``DGSMPC_OUTPUT_DIR`` when it is set."""
    p = Path(name or default)
    if p.is_absolute():
        return p
    root = os.environ.get("DGSMPC_OUTPUT_DIR", "").strip()
    base = Path(root) if root else Path.cwd()
    base.mkdir(parents=True, exist_ok=True)
    return base / p
