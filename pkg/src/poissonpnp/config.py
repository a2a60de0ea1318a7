"""Experiment configuration: INI sections mapped onto dataclasses.

Each section of the file corresponds to one dataclass; every field can also
be overridden from the command line as ``--<section>-<field>``.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    # image path, "synthetic:blocks:<size>", "synthetic:spots:<size>[:<lo>:<hi>]" or "synthetic:constant:<value>:<size>"
    image: str = "synthetic:blocks:32"
    # kernel path, "delta", "gaussian:<size>:<sigma>" or "uniform:<size>"
    kernel: str = "gaussian:9:1.6"
    alpha: float = 20.0
    # "auto" applies the 1%-of-mean rule
    beta: str = "auto"
    seed: int = 0
    # where simulate wrote its files; empty means outputs.directory
    data_dir: str = ""


@dataclass
class PriorConfig:
    # gaussian | gmm | bridge | none
    kind: str = "gmm"
    mean: float = 0.5
    var: float = 0.1
    weights: str = "0.5,0.5"
    means: str = "0.2,0.8"
    variances: str = "0.003,0.003"
    epsilon: float = 0.01
    gamma: float = 0.0
    rho: float = 1.0
    equivariant: bool = False
    bridge_command: str = ""
    bridge_timeout: float = 60.0
    # Lipschitz constant used in the step-size bound; 0 takes the denoiser's own
    denoiser_lipschitz: float = 0.0


@dataclass
class SamplerConfig:
    kernel: str = "rpnp-skrock"
    # exactly one of delta (absolute) or c (multiplier of the bound) may be set
    delta: float = 0.0
    c: float = 0.0
    n_iter: int = 2000
    burn_in: int = 200
    thin: int = 1
    s: int = 10
    eta: float = 0.05
    seed: int = 0
    box_lower: float = 0.0
    box_upper: float = 1.0
    mla_beta: float = 1e-8
    dual_floor: float = 1e-8
    literal_box_signs: bool = False


@dataclass
class OutputConfig:
    directory: str = "run"
    scales: str = "1,2,4,8"
    metric_points: int = 40
    acf_max_lag: int = 50
    trace_capacity: int = 20000


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    SECTIONS = ("problem", "prior", "sampler", "outputs")

    def section(self, name):
        return getattr(self, name)

    def set(self, section: str, key: str, raw: str) -> None:
        obj = self.section(section)
        types = {f.name: f.type for f in fields(obj)}
        if key not in types:
            raise ConfigError(f"unknown option {section}.{key}")
        setattr(obj, key, _coerce(types[key], raw, f"{section}.{key}"))

    def validate(self, need_files=True) -> None:
        s = self.sampler
        if s.delta and s.c:
            raise ConfigError("sampler.delta and sampler.c are mutually exclusive")
        if s.delta < 0 or s.c < 0:
            raise ConfigError("step size parameters must be non-negative")
        if s.kernel not in ("rpnp-ula", "ppnp-ula", "rpnp-skrock", "pnp-mla"):
            raise ConfigError(f"unknown sampler.kernel {s.kernel!r}")
        if self.prior.kind not in ("gaussian", "gmm", "bridge", "none"):
            raise ConfigError(f"unknown prior.kind {self.prior.kind!r}")
        if self.prior.kind == "bridge" and not self.prior.bridge_command:
            raise ConfigError("prior.kind = bridge needs prior.bridge_command")
        if self.problem.beta != "auto":
            try:
                float(self.problem.beta)
            except ValueError:
                raise ConfigError(f"problem.beta must be 'auto' or a number, got {self.problem.beta!r}") from None
        if need_files:
            for name in ("image", "kernel"):
                val = getattr(self.problem, name)
                if _is_path_spec(val) and not Path(val).is_file():
                    raise ConfigError(f"problem.{name} file not found: {val}")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name in self.SECTIONS:
            cp[name] = {k: _fmt(v) for k, v in asdict(self.section(name)).items()}
        lines = []
        for name in self.SECTIONS:
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in cp[name].items()]
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, path) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
        cfg = cls()
        for name in cp.sections():
            if name not in cls.SECTIONS:
                raise ConfigError(f"unknown config section [{name}]")
            for key, raw in cp[name].items():
                cfg.set(name, key, raw)
        return cfg


def _is_path_spec(val: str) -> bool:
    return not (val.startswith("synthetic:") or val in ("delta",) or val.split(":")[0] in ("gaussian", "uniform"))


def _fmt(v) -> str:
    return str(v).lower() if isinstance(v, bool) else str(v)


def _coerce(typ, raw, name):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = str(raw).strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def float_list(raw: str) -> list[float]:
    return [float(v) for v in raw.split(",") if v.strip()]
