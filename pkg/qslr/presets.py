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

import copy
import unittest
from enum import Enum

from .exceptions import ConfigError

# Parameters shared by every preset, in the layout of an experiment config.
_BASE_SOLVER = {
    "mu": 1.1,
    "beta": 10.0,
    "L1": 1.0,
    "L2": 1.0,
    "eta": 1e-4,
    "eta_ccp": 1e-10,
    "delta_schedule": {"mode": "tiered", "value": 1.0},
}

_MODELS = {
    "": "schatten",
    "-laplace": "laplace",
    "-weighted": "weighted-schatten",
}


def _surrogate(kind: str, gamma: float, weight_constant: float) -> dict:
    values = {"kind": kind, "gamma": gamma, "epsilon": 1e-2}
    if kind == "weighted-schatten":
        values["weight_constant"] = weight_constant
    return values


def _denoise(tau: float, lam: float, kind: str) -> dict:
    return {
        "command": "denoise",
        "tau": tau,
        "solver": {**_BASE_SOLVER, "lam": lam, "surrogate": _surrogate(kind, 0.5, 20.0)},
    }


def _nss(tau: float, lam: float, kind: str, patch: int, neighbors: int) -> dict:
    gamma = {"schatten": 0.3, "laplace": 0.8, "weighted-schatten": 0.3}[kind]
    return {
        "command": "denoise",
        "tau": tau,
        "use_nss": True,
        "solver": {**_BASE_SOLVER, "lam": lam, "surrogate": _surrogate(kind, gamma, 10.0)},
        "nss": {"patch_side": patch, "num_neighbors": neighbors, "search_window": 30, "relaxation": 0.1},
    }


def _inpaint(kind: str, gamma: float) -> dict:
    return {
        "command": "inpaint",
        "solver": {**_BASE_SOLVER, "lam": 0.01, "surrogate": _surrogate(kind, gamma, 10.0)},
    }


def _desk(use_nss: bool) -> dict:
    # Normalized intensities on 64 x 64 crops: the noise singular values reach
    # about 3.3 at tau=30, far above what the tables below shrink. A rank-like
    # weighted penalty (gamma=1, w_i = c / sigma_i) thresholds near 2·sqrt(c·tau²).
    values = {
        "command": "denoise",
        "tau": 30,
        "solver": {**_BASE_SOLVER, "lam": 0.001, "surrogate": _surrogate("weighted-schatten", 1.0, 920.0)},
    }
    if use_nss:
        values["use_nss"] = True
        values["solver"]["max_outer"] = 30
        values["solver"]["surrogate"]["weight_constant"] = 830.0
        values["nss"] = {
            "patch_side": 10,
            "num_neighbors": 30,
            "search_window": 31,
            "stride": 5,
            "relaxation": 0.1,
            "outer_passes": 2,
        }
    return values


class Preset(str, Enum):
    """
    Named parameter tables. A preset is a partial experiment config, applied
    over the defaults and under any config file or command-line flag.
    """

    DENOISE_TAU10 = "denoise-tau10"
    DENOISE_TAU30 = "denoise-tau30"
    DENOISE_TAU50 = "denoise-tau50"
    DENOISE_TAU10_LAPLACE = "denoise-tau10-laplace"
    DENOISE_TAU30_LAPLACE = "denoise-tau30-laplace"
    DENOISE_TAU50_LAPLACE = "denoise-tau50-laplace"
    DENOISE_TAU10_WEIGHTED = "denoise-tau10-weighted"
    DENOISE_TAU30_WEIGHTED = "denoise-tau30-weighted"
    DENOISE_TAU50_WEIGHTED = "denoise-tau50-weighted"
    NSS_TAU10 = "nss-tau10"
    NSS_TAU30 = "nss-tau30"
    NSS_TAU50 = "nss-tau50"
    NSS_TAU10_LAPLACE = "nss-tau10-laplace"
    NSS_TAU30_LAPLACE = "nss-tau30-laplace"
    NSS_TAU50_LAPLACE = "nss-tau50-laplace"
    NSS_TAU10_WEIGHTED = "nss-tau10-weighted"
    NSS_TAU30_WEIGHTED = "nss-tau30-weighted"
    NSS_TAU50_WEIGHTED = "nss-tau50-weighted"
    INPAINT_NF1 = "inpaint-nf1"
    INPAINT_NF2 = "inpaint-nf2"
    INPAINT_NF3 = "inpaint-nf3"
    DESK_DENOISE_TAU30 = "desk-denoise-tau30"
    DESK_NSS_TAU30 = "desk-nss-tau30"

    @property
    def default_value(self) -> dict:
        """
        Gives the parameters of the preset, as a fresh nested dict
        """
        return copy.deepcopy(self._description[0])

    @property
    def description(self) -> str:
        return self._description[1]

    @property
    def command(self) -> str:
        return self._description[0]["command"]

    @property
    def _description(self) -> tuple:
        # (parameters, description)
        table = {}
        for suffix, kind in _MODELS.items():
            for tau, lam in ((10, 0.01), (30, 0.3), (50, 0.5)):
                table[f"denoise-tau{tau}{suffix}"] = (
                    _denoise(tau, lam, kind),
                    f"Denoising, tau={tau}, {kind} model",
                )
            for tau, lam, patch, neighbors in ((10, 0.001, 10, 70), (30, 0.01, 12, 80), (50, 0.01, 14, 90)):
                table[f"nss-tau{tau}{suffix}"] = (
                    _nss(tau, lam, kind, patch, neighbors),
                    f"Denoising with patch groups, tau={tau}, {kind} model",
                )
        table["inpaint-nf1"] = (_inpaint("schatten", 0.7), "Inpainting, Schatten model")
        table["inpaint-nf2"] = (_inpaint("laplace", 1.0), "Inpainting, Laplace model")
        table["inpaint-nf3"] = (_inpaint("weighted-schatten", 0.7), "Inpainting, weighted Schatten model")
        table["desk-denoise-tau30"] = (_desk(False), "Denoising of small normalized crops, tau=30")
        table["desk-nss-tau30"] = (_desk(True), "Denoising of small normalized crops with patch groups, tau=30")
        return table[self.value]

    def __str__(self):
        return f"{self.value}: {self.description}"


def get_preset(name: str) -> Preset:
    """
    :raises ConfigError: If no preset has that name.
    """
    try:
        return Preset(name)
    except ValueError as e:
        names = ", ".join(p.value for p in Preset)
        raise ConfigError(f"Unknown preset {name!r}, expected one of: {names}") from e


class TestPresets(unittest.TestCase):
    def test_all_members_described(self):
        for preset in Preset:
            values = preset.default_value
            self.assertIn(values["command"], ("denoise", "inpaint"))
            self.assertEqual(values["solver"]["mu"], 1.1)
            self.assertEqual(values["solver"]["surrogate"]["epsilon"], 1e-2)
            self.assertTrue(str(preset).startswith(preset.value))

    def test_table_values(self):
        p = Preset.DENOISE_TAU30.default_value
        self.assertEqual(p["tau"], 30)
        self.assertEqual(p["solver"]["lam"], 0.3)
        self.assertEqual(p["solver"]["surrogate"], {"kind": "schatten", "gamma": 0.5, "epsilon": 1e-2})
        n = Preset.NSS_TAU50_LAPLACE.default_value
        self.assertEqual((n["nss"]["patch_side"], n["nss"]["num_neighbors"]), (14, 90))
        self.assertEqual(n["solver"]["surrogate"]["gamma"], 0.8)
        w = Preset.INPAINT_NF3.default_value["solver"]["surrogate"]
        self.assertEqual((w["kind"], w["gamma"], w["weight_constant"]), ("weighted-schatten", 0.7, 10.0))
        self.assertEqual(Preset.INPAINT_NF2.command, "inpaint")

    def test_desk_presets_build(self):
        from .config import build_config

        flat = build_config("desk-denoise-tau30")
        self.assertFalse(flat.use_nss)
        self.assertEqual(flat.solver.surrogate.weight_constant, 920.0)
        self.assertAlmostEqual(flat.solver.tau, 30 / 255)
        grouped = build_config("desk-nss-tau30")
        self.assertTrue(grouped.use_nss)
        self.assertEqual(grouped.solver.surrogate.weight_constant, 830.0)
        self.assertEqual(grouped.solver.max_outer, 30)
        self.assertEqual((grouped.nss.stride, grouped.nss.outer_passes), (5, 2))
        self.assertIsNone(Preset.DESK_DENOISE_TAU30.default_value["solver"].get("max_outer"))

    def test_copies_are_independent(self):
        a = Preset.DENOISE_TAU10.default_value
        a["solver"]["lam"] = 5.0
        self.assertEqual(Preset.DENOISE_TAU10.default_value["solver"]["lam"], 0.01)

    def test_lookup(self):
        self.assertIs(get_preset("nss-tau30-weighted"), Preset.NSS_TAU30_WEIGHTED)
        with self.assertRaises(ConfigError):
            get_preset("denoise-tau20")


if __name__ == "__main__":
    unittest.main()
