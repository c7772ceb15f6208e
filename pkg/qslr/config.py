# This file is part of qslr
#
# qslr is free software: you can redistribute it and/or modify
# it under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.
#
#
# Copyright 2024 The qslr authors

"""
Experiment configuration: JSON files, presets and command-line overrides merged
into one validated :class:`ExperimentConfig`.
"""

import dataclasses
import json
import os
import tempfile
import unittest
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from .exceptions import ConfigError, FileFormatError
from .nss import NssConfig
from .presets import get_preset
from .solvers import DeltaSchedule, SolverConfig
from .surrogates import SurrogateSpec


class Command(str, Enum):
    DENOISE = "denoise"
    INPAINT = "inpaint"
    CHECK = "check"


class Representation(str, Enum):
    QUATERNION = "quaternion"
    RGB = "rgb"


@dataclass(frozen=True)
class ExperimentConfig:
    """
    :param command: Task the run performs.
    :param input: Clean reference image (PNG or PPM).
    :param output_dir: Directory receiving the image, metrics, trace and
        manifest.
    :param noisy_input: Degraded image to restore instead of a synthesized one.
    :param mask: Observation mask file for inpainting, sampled when None.
    :param tau: Noise level on the 0-255 scale.
    :param chi: Missing rate used when sampling a mask.
    :param seed: Seed of the noise and mask generators.
    :param representation: Quaternion or channelwise RGB restoration.
    :param use_nss: Restore patch groups instead of the whole image.
    :param solver: Solver parameters, its tau is derived from ``tau``.
    :param nss: Patch group parameters.
    """

    command: Command = Command.DENOISE
    input: Optional[str] = None
    output_dir: str = "."
    noisy_input: Optional[str] = None
    mask: Optional[str] = None
    tau: float = 30.0
    chi: float = 0.5
    seed: int = 0
    representation: Representation = Representation.QUATERNION
    use_nss: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    nss: NssConfig = field(default_factory=NssConfig)

    def __post_init__(self):
        try:
            object.__setattr__(self, "command", Command(self.command))
            object.__setattr__(self, "representation", Representation(self.representation))
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.tau < 0:
            raise ConfigError(f"Noise level tau must be >= 0, got {self.tau}")
        if not 0 <= self.chi <= 1:
            raise ConfigError(f"Missing rate chi must be in [0, 1], got {self.chi}")
        object.__setattr__(self, "solver", self.solver.replace(tau=self.tau / 255.0))

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "ExperimentConfig":
        """
        :raises ConfigError: On unknown keys or invalid values.
        """
        values = dict(values)
        _check_keys(values, cls, "experiment")
        if "solver" in values:
            values["solver"] = _solver_from_dict(values["solver"])
        if "nss" in values:
            values["nss"] = _build(NssConfig, values["nss"], "nss")
        return _build(cls, values, "experiment")

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready echo of the configuration."""
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _check_keys(values: Mapping[str, Any], cls, section: str):
    if not isinstance(values, Mapping):
        raise ConfigError(f"Section {section!r} must be an object, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {section}: {', '.join(unknown)}")


def _build(cls, values: Mapping[str, Any], section: str):
    _check_keys(values, cls, section)
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid {section} section: {e}") from e


def _solver_from_dict(values: Mapping[str, Any]) -> SolverConfig:
    _check_keys(values, SolverConfig, "solver")
    values = dict(values)
    if "surrogate" in values:
        surrogate = dict(_mapping(values["surrogate"], "surrogate"))
        if surrogate.get("weights") is not None:
            surrogate["weights"] = tuple(surrogate["weights"])
        values["surrogate"] = _build(SurrogateSpec, surrogate, "surrogate")
    if "delta_schedule" in values:
        schedule = dict(_mapping(values["delta_schedule"], "delta_schedule"))
        if "tiers" in schedule:
            schedule["tiers"] = tuple(tuple(t) for t in schedule["tiers"])
        values["delta_schedule"] = _build(DeltaSchedule, schedule, "delta_schedule")
    return _build(SolverConfig, values, "solver")


def _mapping(value, section: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError(f"Section {section!r} must be an object, got {type(value).__name__}")
    return value


def merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Deep merge of two nested dicts, override wins. Sub-dicts are merged, other
    values replaced.
    """
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def parse_json(text: str, source: str = "<string>") -> Dict[str, Any]:
    """
    :raises ConfigError: With line and column on malformed JSON, or if the
        document is not an object.
    """
    try:
        values = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: {e.msg}", line=e.lineno, column=e.colno) from e
    if not isinstance(values, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return values


def load_json(path: Union[str, Path]) -> Dict[str, Any]:
    """
    :raises FileFormatError: If the file cannot be read.
    :raises ConfigError: If it is not a valid JSON object.
    """
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise FileFormatError(path, f"cannot read config: {e.strerror}") from e
    return parse_json(text, str(path))


def build_config(
    preset: Optional[str] = None,
    config_file: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    Layer defaults < preset < config file < overrides.

    :raises ConfigError: On an unknown preset, unknown keys or invalid values.
    """
    values: Dict[str, Any] = {}
    if preset is not None:
        values = merge(values, get_preset(preset).default_value)
    if config_file is not None:
        values = merge(values, load_json(config_file))
    if overrides:
        values = merge(values, overrides)
    return ExperimentConfig.from_dict(values)


class TestExperimentConfig(unittest.TestCase):
    def test_defaults(self):
        cfg = ExperimentConfig()
        self.assertEqual(cfg.command, Command.DENOISE)
        self.assertAlmostEqual(cfg.solver.tau, 30 / 255)
        self.assertEqual(cfg.solver.mu, 1.1)

    def test_unknown_keys(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"sigma": 3})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"solver": {"rho": 1}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"solver": {"surrogate": {"kind": "schatten", "p": 0.5}}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"nss": {"patch": 10}})

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"command": "deblur"})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"solver": {"mu": 2.5}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({"solver": "fast"})

    def test_nested_sections(self):
        cfg = ExperimentConfig.from_dict(
            {
                "command": "inpaint",
                "solver": {
                    "beta1": 20.0,
                    "surrogate": {"kind": "weighted-schatten", "gamma": 0.7, "weight_constant": 10.0},
                    "delta_schedule": {"mode": "fixed", "value": 0.5},
                },
                "nss": {"patch_side": 8, "search_window": 20},
            }
        )
        self.assertEqual(cfg.solver.beta_1, 20.0)
        self.assertTrue(cfg.solver.surrogate.is_weighted)
        self.assertEqual(cfg.solver.delta_schedule.initial, 0.5)
        self.assertEqual(cfg.nss.step, 4)

    def test_layering(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "cfg.json")
            with open(path, "w") as f:
                json.dump({"tau": 50, "solver": {"lam": 0.2}}, f)
            cfg = build_config("denoise-tau30", path, {"solver": {"beta": 12.0}})
        self.assertEqual(cfg.tau, 50)
        self.assertEqual(cfg.solver.lam, 0.2)
        self.assertEqual(cfg.solver.beta, 12.0)
        self.assertEqual(cfg.solver.surrogate.gamma, 0.5)
        self.assertAlmostEqual(cfg.solver.tau, 50 / 255)

    def test_malformed_json(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_json('{\n  "tau": 30,\n  "seed": \n}')
        self.assertEqual(ctx.exception.line, 4)
        self.assertEqual(ctx.exception.column, 1)
        with self.assertRaises(ConfigError):
            parse_json("[1, 2]")
        with self.assertRaises(FileFormatError):
            load_json("/nonexistent/qslr.json")

    def test_round_trip(self):
        cfg = build_config("inpaint-nf3")
        echo = cfg.to_dict()
        self.assertEqual(echo["solver"]["surrogate"]["kind"], "weighted-schatten")
        self.assertEqual(ExperimentConfig.from_dict(echo), cfg)

    def test_merge(self):
        merged = merge({"a": {"b": 1, "c": 2}, "d": 3}, {"a": {"b": 5}, "d": {"e": 1}})
        self.assertEqual(merged, {"a": {"b": 5, "c": 2}, "d": {"e": 1}})


if __name__ == "__main__":
    unittest.main()
