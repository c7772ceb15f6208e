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
Command line front-end:

    qslr denoise|inpaint|check|plotdata [--config FILE] [--preset NAME] [flags]

Exit codes: 0 success, 1 solver failure, 2 configuration error, 3 I/O error.
"""

import argparse
import contextlib
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import unittest
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .assumptions import check_assumption_1, check_assumption_2
from .config import Command, ExperimentConfig, Representation, build_config
from .exceptions import ConfigError, DivergenceError, DomainError, FileFormatError, NumericalError, ShapeError
from .imaging import (
    ColorImage,
    ObservationMask,
    add_gaussian_noise,
    decode,
    encode,
    load_image,
    load_mask,
    masked_psnr,
    merge_channels,
    psnr,
    sample_mask,
    save_image,
    save_mask,
    split_channels,
    ssim,
    synthetic_low_rank_image,
)
from .nss import nss_denoise
from .quaternion import QMatrix
from .solvers import pl_admm_denoise, pl_admm_nf_inpaint
from .surrogates import SurrogateKind
from .trace import IterationTrace, write_plotdata

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2
EXIT_IO = 3

LOG_LEVEL_ENV = "QSLR_LOG_LEVEL"
# PSNR of identical images in written reports.
PSNR_CAP = 99.0
CHANNEL_NAMES = ("r", "g", "b")


@dataclass
class RunOutcome:
    """Result of a denoise or inpaint run, before anything is written."""

    degraded: QMatrix
    restored: ColorImage
    traces: List[IterationTrace]
    metrics: Dict[str, object]
    mask: Optional[ObservationMask] = None
    outputs: List[str] = field(default_factory=list)


def capped(value: float) -> float:
    return min(value, PSNR_CAP)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _restore_channels(y: QMatrix, cfg: ExperimentConfig, solve):
    """
    Run ``solve`` on the whole quaternion matrix, or on each color channel in
    the channelwise representation.
    """
    if cfg.representation == Representation.QUATERNION:
        x, trace = solve(y)
        return x, [trace] if trace is not None else []
    outputs, traces = [], []
    for channel in split_channels(y):
        x, trace = solve(channel)
        outputs.append(x)
        if trace is not None:
            traces.append(trace)
    return merge_channels(outputs), traces


def _summary(traces: Sequence[IterationTrace]) -> Dict[str, object]:
    return {
        "iters": sum(len(t) for t in traces),
        "wall_ms": sum(sum(t.column("wall_ms")) for t in traces),
    }


def _load_clean(cfg: ExperimentConfig) -> ColorImage:
    if cfg.input is None:
        raise ConfigError("An input image is required")
    return load_image(cfg.input)


def run_denoise(cfg: ExperimentConfig, clean: ColorImage) -> RunOutcome:
    """
    Degrade (or load) the noisy image, restore it and measure the result
    against ``clean``.
    """
    if cfg.noisy_input is not None:
        y = encode(load_image(cfg.noisy_input))
        if y.shape != clean.dims:
            raise ShapeError(f"Noisy input is {y.shape}, reference is {clean.dims}")
    else:
        y = add_gaussian_noise(encode(clean), cfg.tau, cfg.seed)

    def solve(m: QMatrix):
        if cfg.use_nss:
            return nss_denoise(m, cfg.solver, cfg.nss), None
        result = pl_admm_denoise(m, cfg.solver)
        return result.x, result.trace

    x, traces = _restore_channels(y, cfg, solve)
    restored = decode(x)
    reference = clean.pixels
    metrics = {
        "psnr": capped(psnr(restored, reference)),
        "ssim": ssim(restored, reference),
        "psnr_input": capped(psnr(decode(y), reference)),
        "converged": all(_converged(t, cfg) for t in traces),
        **_summary(traces),
    }
    return RunOutcome(y, restored, traces, metrics)


def run_inpaint(cfg: ExperimentConfig, clean: ColorImage) -> RunOutcome:
    """
    Sample (or load) the mask, restore the missing pixels and measure the
    result over the whole image and over the missing pixels.
    """
    mask = load_mask(cfg.mask) if cfg.mask is not None else sample_mask(clean.dims, cfg.chi, cfg.seed)
    if mask.dims != clean.dims:
        raise ShapeError(f"Mask is {mask.dims}, reference is {clean.dims}")
    y = mask.apply(encode(clean))
    gaps = []

    def solve(m: QMatrix):
        result = pl_admm_nf_inpaint(m, mask, cfg.solver)
        gaps.append(result.trace.last.gap2)
        return result.x, result.trace

    x, traces = _restore_channels(y, cfg, solve)
    restored = decode(x)
    reference = clean.pixels
    metrics = {
        "psnr": capped(psnr(restored, reference)),
        "ssim": ssim(restored, reference),
        "psnr_missing": capped(masked_psnr(restored, reference, mask)),
        "psnr_zero_fill": capped(psnr(decode(y), reference)),
        "gap": max(gaps),
        "observed_fraction": mask.fraction,
        "converged": all(_converged(t, cfg) for t in traces),
        **_summary(traces),
    }
    return RunOutcome(y, restored, traces, metrics, mask)


def _converged(trace: IterationTrace, cfg: ExperimentConfig) -> bool:
    return len(trace) > 0 and trace.last.eps_k < cfg.solver.eta


def write_outputs(outcome: RunOutcome, cfg: ExperimentConfig, preset: Optional[str]):
    """
    Write the restored and degraded images, metrics, traces and the manifest
    to ``cfg.output_dir``.
    """
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FileFormatError(out, f"cannot create output directory: {e.strerror}") from e
    written = []
    save_image(out / "restored.png", outcome.restored)
    written.append("restored.png")
    save_image(out / "degraded.png", decode(outcome.degraded))
    written.append("degraded.png")
    if outcome.mask is not None and cfg.mask is None:
        save_mask(out / "mask.png", outcome.mask)
        written.append("mask.png")
    if len(outcome.traces) == 1:
        outcome.traces[0].save(out / "trace.csv")
        written.append("trace.csv")
    else:
        for name, trace in zip(CHANNEL_NAMES, outcome.traces):
            trace.save(out / f"trace-{name}.csv")
            written.append(f"trace-{name}.csv")
    _write_json(out / "metrics.json", outcome.metrics)
    written.append("metrics.json")
    inputs = {}
    for path in (cfg.input, cfg.noisy_input, cfg.mask):
        if path is not None:
            inputs[str(path)] = sha256_file(path)
    manifest = {
        "qslr_version": __version__,
        "preset": preset,
        "config": cfg.to_dict(),
        "inputs": inputs,
        "outputs": written,
    }
    _write_json(out / "manifest.json", manifest)
    outcome.outputs = written + ["manifest.json"]


def _write_json(path: Path, values):
    try:
        path.write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise FileFormatError(path, f"cannot write: {e.strerror}") from e


def cmd_denoise(cfg: ExperimentConfig, preset: Optional[str] = None) -> int:
    outcome = run_denoise(cfg, _load_clean(cfg))
    write_outputs(outcome, cfg, preset)
    logger.info("Denoised: PSNR %.2f dB, SSIM %.4f", outcome.metrics["psnr"], outcome.metrics["ssim"])
    print(json.dumps(outcome.metrics, sort_keys=True))
    return EXIT_OK


def cmd_inpaint(cfg: ExperimentConfig, preset: Optional[str] = None) -> int:
    outcome = run_inpaint(cfg, _load_clean(cfg))
    write_outputs(outcome, cfg, preset)
    logger.info("Inpainted: PSNR %.2f dB, SSIM %.4f", outcome.metrics["psnr"], outcome.metrics["ssim"])
    print(json.dumps(outcome.metrics, sort_keys=True))
    return EXIT_OK


def cmd_check(cfg: ExperimentConfig, family: Optional[str] = None, observed_fraction: Optional[float] = None) -> int:
    """
    Print the parameter conditions of the solver family and their margins.

    :return: 0 if every condition holds, 1 otherwise.
    """
    if family is None:
        family = "B" if cfg.command == Command.INPAINT else "A"
    if family == "A":
        report = check_assumption_1(cfg.solver, r=cfg.solver.r, kappa=cfg.solver.kappa)
    else:
        report = check_assumption_2(
            cfg.solver, r=cfg.solver.r, kappa=cfg.solver.kappa, observed_fraction=observed_fraction
        )
    print(report.format())
    if not report.passed:
        logger.warning("Failed conditions: %s", ", ".join(report.failures()))
    return EXIT_OK if report.passed else EXIT_SOLVER


def cmd_trace_plotdata(trace_path, output=None) -> int:
    trace = IterationTrace.load(trace_path)
    if output is None:
        write_plotdata(trace, sys.stdout)
    else:
        try:
            with open(output, "w", newline="") as f:
                write_plotdata(trace, f)
        except OSError as e:
            raise FileFormatError(output, f"cannot write: {e.strerror}") from e
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--preset", help="named parameter table, see 'qslr presets'")
    p.add_argument("--input", help="clean reference image (PNG or PPM)")
    p.add_argument("-o", "--output-dir", dest="output_dir", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="sparsity weight")
    p.add_argument("--beta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--L1", type=float)
    p.add_argument("--L2", type=float)
    p.add_argument("--eta", type=float, help="outer stopping tolerance")
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--transform", choices=("qdct", "identity"))
    p.add_argument("--surrogate", choices=[k.value for k in SurrogateKind])
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--weight-constant", dest="weight_constant", type=float)
    p.add_argument("--delta", type=float, help="fixed Huber threshold instead of the tiered rule")
    p.add_argument("--representation", choices=[r.value for r in Representation])
    p.add_argument("--no-timing", dest="record_timing", action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qslr", description="Quaternion sparse low-rank color image restoration")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    denoise = sub.add_parser("denoise", help="remove Gaussian noise")
    _add_common(denoise)
    denoise.add_argument("--tau", type=float, help="noise level, 0-255 scale")
    denoise.add_argument("--noisy-input", dest="noisy_input", help="noisy image instead of synthesized noise")
    denoise.add_argument("--nss", dest="use_nss", action="store_true", default=None, help="restore patch groups")
    denoise.add_argument("--patch-side", dest="patch_side", type=int)
    denoise.add_argument("--num-neighbors", dest="num_neighbors", type=int)
    denoise.add_argument("--search-window", dest="search_window", type=int)
    denoise.add_argument("--stride", type=int)
    denoise.add_argument("--outer-passes", dest="outer_passes", type=int)

    inpaint = sub.add_parser("inpaint", help="fill missing pixels")
    _add_common(inpaint)
    inpaint.add_argument("--chi", type=float, help="missing rate of the sampled mask")
    inpaint.add_argument("--mask", help="mask file, PNG (255 = observed) or run-length text")
    inpaint.add_argument("--beta1", type=float)
    inpaint.add_argument("--beta2", type=float)

    check = sub.add_parser("check", help="check the solver parameter conditions")
    _add_common(check)
    check.add_argument("--family", choices=("A", "B"))
    check.add_argument("--observed-fraction", dest="observed_fraction", type=float)
    check.add_argument("--beta1", type=float)
    check.add_argument("--beta2", type=float)

    plot = sub.add_parser("plotdata", help="per-iteration step sizes of a trace")
    plot.add_argument("trace", help="trace CSV written by denoise or inpaint")
    plot.add_argument("--output", help="CSV file, standard output when omitted")

    sub.add_parser("presets", help="list the parameter presets")
    return parser


_SOLVER_FLAGS = ("lam", "beta", "mu", "L1", "L2", "eta", "max_outer", "transform", "beta1", "beta2", "record_timing")
_SURROGATE_FLAGS = {"surrogate": "kind", "gamma": "gamma", "epsilon": "epsilon", "weight_constant": "weight_constant"}
_NSS_FLAGS = ("patch_side", "num_neighbors", "search_window", "stride", "outer_passes")
_TOP_FLAGS = ("input", "output_dir", "seed", "tau", "noisy_input", "use_nss", "chi", "mask", "representation")


def overrides_from_args(args: argparse.Namespace) -> Dict[str, object]:
    """Nested config values for every flag given on the command line."""
    given = {k: v for k, v in vars(args).items() if v is not None}
    values: Dict[str, object] = {k: given[k] for k in _TOP_FLAGS if k in given}
    solver = {k: given[k] for k in _SOLVER_FLAGS if k in given}
    surrogate = {dst: given[src] for src, dst in _SURROGATE_FLAGS.items() if src in given}
    if surrogate:
        solver["surrogate"] = surrogate
    if "delta" in given:
        solver["delta_schedule"] = {"mode": "fixed", "value": given["delta"]}
    if solver:
        values["solver"] = solver
    nss = {k: given[k] for k in _NSS_FLAGS if k in given}
    if nss:
        values["nss"] = nss
    if args.command in (Command.DENOISE.value, Command.INPAINT.value):
        values["command"] = args.command
    return values


def configure_logging(verbosity: int):
    level = os.environ.get(LOG_LEVEL_ENV, "WARNING").upper()
    if verbosity == 1:
        level = "INFO"
    elif verbosity >= 2:
        level = "DEBUG"
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "plotdata":
        return cmd_trace_plotdata(args.trace, args.output)
    if args.command == "presets":
        from .presets import Preset

        for preset in Preset:
            print(preset)
        return EXIT_OK
    cfg = build_config(args.preset, args.config, overrides_from_args(args))
    if args.command == "check":
        return cmd_check(cfg, args.family, args.observed_fraction)
    if args.command == "denoise":
        return cmd_denoise(cfg, args.preset)
    return cmd_inpaint(cfg, args.preset)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return _dispatch(args)
    except (ConfigError, ShapeError) as e:
        print(f"qslr: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DivergenceError, DomainError) as e:
        print(f"qslr: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"qslr: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


def _run(argv) -> tuple:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


class TestCommandLine(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.image = self.dir / "clean.png"
        save_image(self.image, synthetic_low_rank_image(16, 16, 2, seed=1))

    def tearDown(self):
        self.tmp.cleanup()

    def test_denoise_without_noise(self):
        out = self.dir / "run"
        code, stdout, _ = _run(["denoise", "--input", str(self.image), "-o", str(out), "--tau", "0", "--lambda", "0", "--max-outer", "5"])
        self.assertEqual(code, EXIT_OK)
        metrics = json.loads((out / "metrics.json").read_text())
        self.assertGreaterEqual(metrics["psnr"], PSNR_CAP)
        self.assertEqual(json.loads(stdout), metrics)
        for name in ("restored.png", "degraded.png", "trace.csv", "manifest.json"):
            self.assertTrue((out / name).exists(), name)
        manifest = json.loads((out / "manifest.json").read_text())
        self.assertEqual(manifest["inputs"][str(self.image)], sha256_file(self.image))
        self.assertEqual(manifest["config"]["tau"], 0.0)

    def test_deterministic_replay(self):
        runs = []
        for name in ("a", "b"):
            out = self.dir / name
            argv = ["denoise", "--input", str(self.image), "-o", str(out), "--tau", "20", "--seed", "3", "--max-outer", "15", "--no-timing"]
            self.assertEqual(_run(argv)[0], EXIT_OK)
            runs.append(((out / "metrics.json").read_bytes(), (out / "trace.csv").read_bytes()))
        self.assertEqual(runs[0], runs[1])

    def test_preset_and_overrides(self):
        out = self.dir / "preset"
        argv = ["denoise", "--preset", "denoise-tau30", "--input", str(self.image), "-o", str(out), "--max-outer", "3"]
        self.assertEqual(_run(argv)[0], EXIT_OK)
        config = json.loads((out / "manifest.json").read_text())["config"]
        self.assertEqual(config["solver"]["lam"], 0.3)
        self.assertEqual(config["solver"]["surrogate"]["gamma"], 0.5)
        self.assertEqual(config["solver"]["max_outer"], 3)

    def test_rgb_representation(self):
        out = self.dir / "rgb"
        argv = ["denoise", "--input", str(self.image), "-o", str(out), "--representation", "rgb", "--max-outer", "4"]
        self.assertEqual(_run(argv)[0], EXIT_OK)
        for name in CHANNEL_NAMES:
            self.assertEqual(len(IterationTrace.load(out / f"trace-{name}.csv")), 4)

    def test_inpaint_full_observation(self):
        out = self.dir / "inpaint"
        argv = ["inpaint", "--input", str(self.image), "-o", str(out), "--chi", "0", "--lambda", "0"]
        self.assertEqual(_run(argv)[0], EXIT_OK)
        metrics = json.loads((out / "metrics.json").read_text())
        self.assertLessEqual(metrics["gap"], 1e-4)
        self.assertEqual(metrics["psnr_missing"], PSNR_CAP)
        self.assertTrue((out / "mask.png").exists())

    def test_inpaint_reports_missing_region(self):
        out = self.dir / "holes"
        argv = ["inpaint", "--input", str(self.image), "-o", str(out), "--chi", "0.3", "--max-outer", "20"]
        self.assertEqual(_run(argv)[0], EXIT_OK)
        metrics = json.loads((out / "metrics.json").read_text())
        self.assertIn("psnr_missing", metrics)
        self.assertGreater(metrics["psnr_missing"], 0.0)
        self.assertLess(abs(metrics["observed_fraction"] - 0.7), 0.2)

    def test_error_codes(self):
        bad = self.dir / "bad.json"
        bad.write_text('{"tau": 30,\n "seed": }')
        code, _, err = _run(["denoise", "--config", str(bad), "--input", str(self.image)])
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("line 2", err)
        code, _, _ = _run(["denoise", "--input", str(self.dir / "missing.png")])
        self.assertEqual(code, EXIT_IO)
        code, _, _ = _run(["denoise", "--preset", "nope", "--input", str(self.image)])
        self.assertEqual(code, EXIT_CONFIG)
        code, _, _ = _run(["denoise", "--input", str(self.image), "--mu", "3"])
        self.assertEqual(code, EXIT_CONFIG)

    def test_check(self):
        code, stdout, _ = _run(["check"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("A5", stdout)
        self.assertIn("PASS", stdout)
        code, stdout, _ = _run(["check", "--family", "B", "--beta1", "0.01", "--beta2", "0.01"])
        self.assertEqual(code, EXIT_SOLVER)
        self.assertIn("FAIL", stdout)

    def test_plotdata(self):
        trace_path = self.dir / "trace.csv"
        trace_path.write_text(_three_rows())
        code, stdout, _ = _run(["plotdata", str(trace_path)])
        self.assertEqual(code, EXIT_OK)
        lines = stdout.strip().splitlines()
        self.assertEqual(lines[0], "k,delta_sum")
        self.assertEqual(len(lines), 4)

    def test_presets_listing(self):
        code, stdout, _ = _run(["presets"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("inpaint-nf3", stdout)


def _three_rows() -> str:
    from .trace import CSV_COLUMNS

    rows = [",".join(CSV_COLUMNS)]
    for k in (1, 2, 3):
        rows.append(",".join([str(k)] + ["0.5"] * (len(CSV_COLUMNS) - 1)))
    return "\n".join(rows) + "\n"


class TestRestorationQuality(unittest.TestCase):
    """Restoration of 64 x 64 rank-limited color images from shipped presets."""

    def _denoise_config(self, representation: Representation, seed: int) -> ExperimentConfig:
        overrides = {"seed": seed, "representation": representation.value, "solver": {"record_timing": False}}
        return build_config("desk-denoise-tau30", overrides=overrides)

    def test_denoising_gain_and_representation(self):
        wins = 0
        for seed in (1, 2, 3):
            clean = synthetic_low_rank_image(64, 64, 3, seed=seed)
            quaternion = run_denoise(self._denoise_config(Representation.QUATERNION, seed), clean)
            self.assertGreaterEqual(quaternion.metrics["psnr"], quaternion.metrics["psnr_input"] + 3.0)
            rgb = run_denoise(self._denoise_config(Representation.RGB, seed), clean)
            if quaternion.metrics["psnr"] >= rgb.metrics["psnr"]:
                wins += 1
        self.assertGreaterEqual(wins, 2)

    def test_inpainting_half_missing(self):
        # Fixed delta keeps lam/delta below L2.
        overrides = {
            "chi": 0.5,
            "seed": 4,
            "solver": {"record_timing": False, "delta_schedule": {"mode": "fixed", "value": 1.0}},
        }
        cfg = build_config("inpaint-nf3", overrides=overrides)
        self.assertEqual(cfg.solver.surrogate.kind, SurrogateKind.WEIGHTED_SCHATTEN)
        outcome = run_inpaint(cfg, synthetic_low_rank_image(64, 64, 3, seed=4))
        metrics = outcome.metrics
        self.assertTrue(metrics["converged"])
        self.assertLessEqual(metrics["gap"], cfg.solver.eta)
        self.assertGreaterEqual(metrics["psnr"], metrics["psnr_zero_fill"] + 5.0)
        self.assertLess(abs(metrics["observed_fraction"] - 0.5), 0.05)


if __name__ == "__main__":
    unittest.main()
