"""Run manifests: a human-readable INI snapshot of everything needed to replay a run.

Sections are ``[tool]``, ``[spectrum]``, ``[grid]``, ``[experiment]``,
``[coincidence]``, ``[scan]`` and ``[files]``.  All quantities are SI
(seconds, rad/s).  Floats are written with ``repr`` so they round-trip
exactly.  The same layout, minus ``[tool]`` and ``[files]``, is accepted
as a configuration file.
"""

import configparser
import io
import os
from dataclasses import dataclass, field, fields

from . import __version__
from .coincidence import CoincidenceConfig
from .errors import ConfigurationError
from .model import PixelGrid, SourceKind, SpectralModel
from .simulate import ExperimentConfig


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _pairs(text):
    if text.strip().lower() == "default":
        return None
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        i, _, j = item.partition("-")
        out.append((int(i), int(j)))
    return frozenset(out)


def format_pairs(pairs):
    if pairs is None:
        return "default"
    return ",".join(f"{i}-{j}" for i, j in sorted(pairs))


@dataclass
class RunManifest:
    model: SpectralModel
    grid: PixelGrid
    experiment: ExperimentConfig
    coincidence: CoincidenceConfig = CoincidenceConfig()
    delays: tuple = ()
    detector: str = "array"
    version: str = __version__
    files: list = field(default_factory=list)

    @property
    def seed(self):
        return self.experiment.rng_seed

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp["tool"] = {"name": "frhom", "version": self.version}
        cp["spectrum"] = {
            "center_frequency": repr(self.model.center_frequency),
            "sigma": repr(self.model.sigma),
            "visibility": repr(self.model.visibility),
            "source_kind": self.model.source_kind.value,
            "allow_high_visibility": str(self.model.allow_high_visibility).lower(),
        }
        cp["grid"] = {
            "detector": self.detector,
            "bin_width": repr(self.grid.bin_width),
            "bin_centers": ",".join(repr(c) for c in self.grid.bin_centers),
        }
        cp["experiment"] = {f.name: repr(getattr(self.experiment, f.name))
                            for f in fields(ExperimentConfig)}
        cc = self.coincidence
        cp["coincidence"] = {
            "window": repr(cc.window),
            "antibunch_center": repr(cc.antibunch_center),
            "excluded_bunching": format_pairs(cc.excluded_bunching),
            "excluded_antibunching": format_pairs(cc.excluded_antibunching),
            "strict_fidelity": str(cc.strict_fidelity).lower(),
        }
        cp["scan"] = {"delays": ",".join(repr(float(d)) for d in self.delays)}
        if self.files:
            cp["files"] = {name: f"{di},{rep}" for name, di, rep in self.files}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path):
        tmp = f"{path}.tmp{os.getpid()}"
        with open(tmp, "w") as fh:
            fh.write(self.to_ini())
        os.replace(tmp, path)

    @classmethod
    def read(cls, path):
        cp = configparser.ConfigParser(interpolation=None)
        if not cp.read(path):
            raise FileNotFoundError(path)
        return cls.from_parser(cp)

    @classmethod
    def from_parser(cls, cp):
        try:
            sp = cp["spectrum"]
            model = SpectralModel(
                float(sp["center_frequency"]), float(sp["sigma"]), float(sp["visibility"]),
                SourceKind(sp.get("source_kind", "coherent")),
                sp.getboolean("allow_high_visibility", False),
            )
            gp = cp["grid"]
            grid = PixelGrid(_floats(gp["bin_centers"]), float(gp["bin_width"]))
            kwargs = {}
            for f in fields(ExperimentConfig):
                if f.name in cp["experiment"]:
                    raw = cp["experiment"][f.name]
                    kwargs[f.name] = int(raw) if f.type in (int, "int") else float(raw)
            experiment = ExperimentConfig(**kwargs)
            cc = CoincidenceConfig()
            if cp.has_section("coincidence"):
                c = cp["coincidence"]
                cc = CoincidenceConfig(
                    float(c.get("window", cc.window)),
                    float(c.get("antibunch_center", cc.antibunch_center)),
                    _pairs(c.get("excluded_bunching", "default")),
                    _pairs(c.get("excluded_antibunching", "default")),
                    c.getboolean("strict_fidelity", False),
                )
            delays = _floats(cp["scan"]["delays"]) if cp.has_section("scan") else ()
            files = []
            if cp.has_section("files"):
                for name, val in cp["files"].items():
                    di, rep = val.split(",")
                    files.append((name, int(di), int(rep)))
            version = cp["tool"]["version"] if cp.has_section("tool") else __version__
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"invalid manifest: {exc}") from exc
        return cls(model, grid, experiment, cc, delays, gp.get("detector", "array"), version,
                   sorted(files, key=lambda f: (f[1], f[2])))
