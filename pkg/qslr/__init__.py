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

__version__ = "1.0"

from .exceptions import (
    ConfigError,
    DivergenceError,
    DomainError,
    FileFormatError,
    NumericalError,
    QslrError,
    ShapeError,
    SingularityError,
)
from .quaternion import Quaternion, QMatrix
from .qsvd import QSVDResult, qsvd
from .transforms import QDCT, Identity, OrthoTransform, TransformKind, make_transform
from .surrogates import SurrogateKind, SurrogateSpec
from .prox import ProxProblem, spectral_prox
from .solvers import DeltaMode, DeltaSchedule, SolverConfig, SolverResult, pl_admm_denoise, pl_admm_nf_inpaint
from .trace import IterationRecord, IterationTrace
from .assumptions import AssumptionReport, check_assumption_1, check_assumption_2
from .imaging import ColorImage, ObservationMask, decode, encode, load_image, psnr, save_image, ssim
from .nss import NssConfig, nss_denoise
from .presets import Preset
from .config import ExperimentConfig, build_config

__all__ = [
    "ConfigError",
    "DivergenceError",
    "DomainError",
    "FileFormatError",
    "NumericalError",
    "QslrError",
    "ShapeError",
    "SingularityError",
    "Quaternion",
    "QMatrix",
    "QSVDResult",
    "qsvd",
    "QDCT",
    "Identity",
    "OrthoTransform",
    "TransformKind",
    "make_transform",
    "SurrogateKind",
    "SurrogateSpec",
    "ProxProblem",
    "spectral_prox",
    "DeltaMode",
    "DeltaSchedule",
    "SolverConfig",
    "SolverResult",
    "pl_admm_denoise",
    "pl_admm_nf_inpaint",
    "IterationRecord",
    "IterationTrace",
    "AssumptionReport",
    "check_assumption_1",
    "check_assumption_2",
    "ColorImage",
    "ObservationMask",
    "decode",
    "encode",
    "load_image",
    "psnr",
    "save_image",
    "ssim",
    "NssConfig",
    "nss_denoise",
    "Preset",
    "ExperimentConfig",
    "build_config",
]
