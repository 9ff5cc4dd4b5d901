"""Run manifest: config hash, version, tolerances in effect, wall-clock per phase."""
from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from . import __version__
from .tolerances import DEFAULT, Tolerances


@dataclass
class RunManifest:
    config_hash: str
    version: str = __version__
    tolerances: dict = field(default_factory=DEFAULT.as_dict)
    phases: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, cfg) -> "RunManifest":
        tol: Tolerances = getattr(cfg, "tolerances", DEFAULT)
        return cls(cfg.digest(), tolerances=tol.as_dict())

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0

    def to_json(self) -> str:
        return json.dumps(dict(config_hash=self.config_hash, version=self.version,
                               tolerances=self.tolerances, phases=self.phases),
                          indent=2, sort_keys=True)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
