"""Command-line experiment runner.

Subcommands: ``simulate``, ``train``, ``eval``, ``ablate`` and ``verify``.
Each is a pure function of the spec file and the master seed; every random
stream is derived from the master seed with :func:`derive_seed`.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import tomli
import tomli_w

from . import metrics, objective, recon, sampling, tensor, theory
from .objective import EarlyStop, TrainConfig, TrainingError
from .sampling import ABLATION_VARIANTS, PRESET_LOSS, SamplingPlan

# --------------------------------------------------------------------------- #
# seeds


def derive_seed(master: int, label: str, counter: int = 0) -> int:
    """64-bit sub-seed from ``sha256("master/label/counter")``.

    Streams are keyed by label, so adding a consumer never shifts the seeds
    of existing ones.
    """
    h = hashlib.sha256(f"{int(master)}/{label}/{int(counter)}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


def stream(master: int, label: str, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, label, counter))


# --------------------------------------------------------------------------- #
# experiment spec


@dataclass
class DataSpec:
    nx: int = 32
    ny: int = 32
    nt: int = 8
    nc: int = 2
    train_subjects: int = 4
    test_subjects: int = 4
    mask_family: str = "lines"
    acs_lines: int = 4

    @property
    def shape(self):
        return (self.nx, self.ny, self.nt)


@dataclass
class ModelSpec:
    unrolls: int = 6
    channels: int = 4
    out_gain: float = 0.1


@dataclass
class TrainSpec:
    preset: str = "units-base"
    loss: str = ""  # empty: the preset's loss
    norm: str = "l1"
    steps: int = 300
    lr: float = 2e-3
    patience: int = 10
    every: int = 25


@dataclass
class EvalSpec:
    points: List[Tuple[str, int]] = field(default_factory=lambda: [("OOD", 8), ("OOD", 12), ("ID", 8)])
    ratio: float = 0.4

    def __post_init__(self):
        pts = []
        for sc, R in self.points:
            sc = str(sc).upper()
            if sc not in ("ID", "OOD"):
                raise ValueError(f"eval scenario must be ID or OOD, got {sc!r}")
            if int(R) < 1:
                raise ValueError(f"eval acceleration must be >= 1, got {R}")
            pts.append((sc, int(R)))
        self.points = pts


@dataclass
class AblateSpec:
    variants: List[str] = field(default_factory=lambda: list(ABLATION_VARIANTS))
    steps: int = 0  # 0: use train.steps
    conditions: List[Tuple[str, int]] = field(default_factory=lambda: [("ID", 8), ("OOD", 8), ("OOD", 12)])


@dataclass
class VerifySpec:
    k_trials: int = 1_000_000
    k_grid: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    var_trials: int = 100_000
    sigmas: List[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    theorem_steps: int = 200_000
    probe_draws: int = 256
    min_key_prob: float = 0.02
    unbiased_trials: int = 100_000
    bias: float = 0.1

    def __post_init__(self):
        for name in ("k_trials", "var_trials", "unbiased_trials"):
            if getattr(self, name) < theory.MIN_TRIALS:
                raise theory.InsufficientTrialsError(
                    f"insufficient trials: {name} = {getattr(self, name)} < {theory.MIN_TRIALS}")


@dataclass
class ExperimentSpec:
    seed: int = 0
    out: str = "runs/default"
    data: DataSpec = field(default_factory=DataSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    ablate: AblateSpec = field(default_factory=AblateSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)

    def __post_init__(self):
        sampling.preset(self.train.preset)  # validates the name
        for v in self.ablate.variants:
            sampling.preset(v)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval"]["points"] = [list(p) for p in self.eval.points]
        d["ablate"]["conditions"] = [list(p) for p in self.ablate.conditions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        sections = dict(data=DataSpec, model=ModelSpec, train=TrainSpec, eval=EvalSpec,
                        ablate=AblateSpec, verify=VerifySpec)
        for name, kind in sections.items():
            if name in d:
                sub = dict(d[name])
                for k in ("points", "conditions"):
                    if k in sub:
                        sub[k] = [tuple(p) for p in sub[k]]
                d[name] = kind(**sub)
        return cls(**d)


def load_spec(path: Optional[str]) -> ExperimentSpec:
    if path is None:
        return ExperimentSpec()
    with open(path, "rb") as fh:
        return ExperimentSpec.from_dict(tomli.load(fh))


def dump_spec(spec: ExperimentSpec, path) -> None:
    Path(path).write_text(tomli_w.dumps(spec.to_dict()), encoding="utf-8")


# --------------------------------------------------------------------------- #
# shared building blocks


def train_subjects(spec: ExperimentSpec) -> tensor.SubjectSet:
    d = spec.data
    seeds = [derive_seed(spec.seed, "train-subject", i) % 2**31 for i in range(d.train_subjects)]
    return tensor.SubjectSet(seeds, d.nx, d.ny, d.nt, d.nc)


def test_subjects(spec: ExperimentSpec) -> tensor.SubjectSet:
    d = spec.data
    seeds = [derive_seed(spec.seed, "test-subject", i) % 2**31 for i in range(d.test_subjects)]
    return tensor.SubjectSet(seeds, d.nx, d.ny, d.nt, d.nc)


def resolve_plan(spec: ExperimentSpec, name: str) -> SamplingPlan:
    plan = replace(sampling.preset(name), mask_family=spec.data.mask_family,
                   acs_lines=spec.data.acs_lines)
    if plan.initial_seed_mode == "fixed":
        plan = sampling.with_seed(plan, derive_seed(spec.seed, "initial-mask") % 2**31)
    return plan


def train_config(spec: ExperimentSpec, name: str, steps: Optional[int] = None) -> TrainConfig:
    plan = resolve_plan(spec, name)
    t = spec.train
    loss = t.loss or PRESET_LOSS.get(name, "single")
    es = EarlyStop(enabled=plan.holdout_validation, patience=t.patience, every=t.every)
    return TrainConfig(plan=plan, loss_kind=loss, norm=t.norm,
                       steps=t.steps if steps is None else steps, lr=t.lr,
                       seed=derive_seed(spec.seed, "train") % 2**31, early_stop=es)


def initial_params(spec: ExperimentSpec) -> recon.ModelParams:
    m = spec.model
    return recon.init_params(m.unrolls, m.channels, seed=derive_seed(spec.seed, "init") % 2**31,
                             out_gain=m.out_gain)


def eval_mask(spec: ExperimentSpec, R: int, label: str, j: int) -> sampling.SamplingMask:
    plan = SamplingPlan(initial_seed_mode="random", acceleration=int(R),
                        mask_family=spec.data.mask_family, acs_lines=spec.data.acs_lines)
    return sampling.draw_initial_mask(plan, spec.data.shape, stream(spec.seed, label, j))


def evaluate(spec: ExperimentSpec, params: recon.ModelParams, points: Sequence[Tuple[str, int]],
             subjects: tensor.SubjectSet, ratio: float, tag: str = ""):
    """Per-subject metric records and one aggregate row per (scenario, R)."""
    records: List[metrics.MetricRecord] = []
    per_point: Dict[Tuple[str, int], List[metrics.MetricRecord]] = {}
    for sc, R in points:
        vols = []
        for j, (image, y0, coils) in enumerate(subjects):
            my = eval_mask(spec, R, f"eval-mask/{R}", j)
            rng = stream(spec.seed, f"eval-split/{sc}/{R}", j)
            k = objective.infer(params, y0, my, coils, sc, ratio, rng)
            rec = np.abs(recon.image_from_kspace(k, coils))
            ref = np.abs(image)
            run_id = f"{tag}{sc}-R{R}-s{j}"
            records.extend(metrics.frame_records(rec, ref, run_id))
            vols.append(metrics.volume_record(rec, ref, run_id))
        records.extend(vols)
        per_point[(sc, R)] = vols
    rows = []
    for (sc, R), vols in per_point.items():
        row = {"scenario": sc, "R": R, "n": len(vols)}
        for key in ("mse", "psnr", "ssim"):
            m, s = metrics.mean_std([getattr(v, key) for v in vols])
            row[f"{key}_mean"], row[f"{key}_std"] = m, s
        rows.append(row)
    return records, rows


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_rows(path, rows: List[dict], header: Optional[Sequence[str]] = None) -> None:
    header = list(header or (rows[0].keys() if rows else []))
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[h]) for h in header])


def write_manifest(out: Path, command: str, spec: ExperimentSpec, files: List[dict]) -> None:
    manifest = {"command": command, "seed": spec.seed, "spec": spec.to_dict(), "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def _outdir(spec: ExperimentSpec) -> Path:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- #
# commands


def cmd_simulate(spec: ExperimentSpec) -> Path:
    out = _outdir(spec)
    files = []
    subjects = train_subjects(spec)
    for i, (image, _, coils) in enumerate(subjects):
        tensor.write_grid(out / f"phantom_{i}.grid", image)
        tensor.write_grid(out / f"coils_{i}.grid", coils)
        files.append({"file": f"phantom_{i}.grid", "kind": "phantom", "shape": list(image.shape),
                      "dtype": "complex64", "seed": subjects.seeds[i]})
        files.append({"file": f"coils_{i}.grid", "kind": "coils", "shape": list(coils.shape),
                      "dtype": "complex64", "seed": subjects.seeds[i] + 7919})
    accels = sorted({8} | {R for _, R in spec.eval.points})
    for R in accels:
        m = eval_mask(spec, R, "simulate-mask", 0)
        tensor.write_grid(out / f"mask_R{R}.grid", m.bits)
        files.append({"file": f"mask_R{R}.grid", "kind": "mask", "shape": list(m.shape),
                      "dtype": "bool", "acceleration": R, "density": m.density()})
    dump_spec(spec, out / "spec.toml")
    write_manifest(out, "simulate", spec, files)
    return out


def cmd_train(spec: ExperimentSpec, preset: Optional[str] = None) -> objective.TrainRun:
    out = _outdir(spec)
    name = preset or spec.train.preset
    config = train_config(spec, name)
    run = objective.train(config, train_subjects(spec), initial_params(spec))
    run.write_csv(out / "loss.csv")
    recon.save_checkpoint(out / "checkpoint", run.params, {
        "preset": name, "train_seed": config.seed,
        "init_seed": derive_seed(spec.seed, "init") % 2**31,
        "stopped_early": run.stopped_early,
    })
    if run.val_log:
        write_rows(out / "validation.csv", [{"step": s, "val_loss": v} for s, v in run.val_log])
    dump_spec(replace(spec, train=replace(spec.train, preset=name)), out / "spec.toml")
    write_manifest(out, "train", spec, [
        {"file": "loss.csv", "kind": "log", "rows": len(run.log)},
        {"file": "checkpoint/checkpoint.json", "kind": "checkpoint", "step": run.params.step},
    ])
    return run


def cmd_eval(spec: ExperimentSpec, checkpoint: Optional[str] = None) -> List[dict]:
    out = _outdir(spec)
    params, _ = recon.load_checkpoint(checkpoint or out / "checkpoint")
    records, rows = evaluate(spec, params, spec.eval.points, test_subjects(spec), spec.eval.ratio)
    metrics.write_records(out / "metrics.csv", records)
    write_rows(out / "eval_summary.csv", rows)
    write_manifest(out, "eval", spec, [
        {"file": "metrics.csv", "kind": "metrics", "rows": len(records)},
        {"file": "eval_summary.csv", "kind": "summary", "rows": len(rows)},
    ])
    return rows


def run_ablation(spec: ExperimentSpec, variants: Optional[Sequence[str]] = None,
                 steps: Optional[int] = None, log=None):
    """Trains each variant from the same init and data streams and evaluates it.

    Returns ``(summary_rows, ssim_rows)``; the latter holds per-subject SSIM.
    """
    variants = list(variants or spec.ablate.variants)
    steps = steps or spec.ablate.steps or spec.train.steps
    train_data = train_subjects(spec)
    test = test_subjects(spec)
    summary, dist = [], []
    for name in variants:
        run = objective.train(train_config(spec, name, steps), train_data, initial_params(spec))
        records, rows = evaluate(spec, run.params, spec.ablate.conditions, test, spec.eval.ratio)
        for row in rows:
            summary.append({"variant": name, "condition": f"{row['scenario']}-R{row['R']}", **row})
        for r in records:
            if r.frame == -1:
                sc_r, subj = r.run_id.rsplit("-s", 1)
                dist.append({"variant": name, "condition": sc_r, "subject": int(subj), "ssim": r.ssim})
        if log:
            log(f"{name}: " + ", ".join(f"{r['scenario']}-R{r['R']} ssim={r['ssim_mean']:.4f}" for r in rows))
    return summary, dist


ABLATION_FIELDS = ("variant", "condition", "scenario", "R", "n", "ssim_mean", "ssim_std",
                   "psnr_mean", "psnr_std", "mse_mean", "mse_std")


def cmd_ablate(spec: ExperimentSpec, log=None) -> List[dict]:
    out = _outdir(spec)
    summary, dist = run_ablation(spec, log=log)
    write_rows(out / "ablation.csv", summary, ABLATION_FIELDS)
    write_rows(out / "ablation_ssim.csv", dist, ("variant", "condition", "subject", "ssim"))
    write_manifest(out, "ablate", spec, [
        {"file": "ablation.csv", "kind": "summary", "rows": len(summary)},
        {"file": "ablation_ssim.csv", "kind": "distribution", "rows": len(dist)},
    ])
    return summary


def cross_stability(spec: ExperimentSpec, seeds: int = 5, R: int = 8,
                    variants: Sequence[str] = ("units-base", "units-cross"), steps: Optional[int] = None,
                    log=None) -> List[dict]:
    """Per-seed mean OOD SSIM at acceleration ``R`` for each variant."""
    rows = []
    for s in range(seeds):
        sub = replace(spec, seed=derive_seed(spec.seed, "stability", s) % 2**31)
        summary, _ = run_ablation(replace(sub, ablate=replace(sub.ablate, conditions=[("OOD", R)])),
                                  variants, steps)
        for r in summary:
            rows.append({"variant": r["variant"], "seed": s, "ssim_mean": r["ssim_mean"]})
            if log:
                log(f"seed {s} {r['variant']}: ssim={r['ssim_mean']:.4f}")
    return rows


def verification_suite(spec: ExperimentSpec, inject_bias: bool = False):
    v = spec.verify
    reps: List[theory.VerificationReport] = []
    reps += theory.verify_k_grid(v.k_grid, v.k_trials, stream(spec.seed, "verify/k"))
    rng = stream(spec.seed, "verify/variance")
    for s in v.sigmas:
        reps.append(theory.verify_variance_halving(s, v.var_trials, rng))
    reps.append(theory.verify_variance_halving(1.0, v.var_trials, rng, coupling="correlated"))
    reps.append(theory.verify_variance_halving(1.0, v.var_trials, rng, coupling="anti"))

    world = theory.default_world(seed=derive_seed(spec.seed, "verify/world") % 2**31)
    cfg = theory.LookupTrainConfig(steps=v.theorem_steps,
                                   seed=derive_seed(spec.seed, "verify/theorem1") % 2**31)
    th = theory.verify_theorem1(world, cfg, v.probe_draws, v.min_key_prob)
    reps += [th.report, th.monotone_report, th.support_report]

    bias = v.bias if inject_bias else 0.0
    unb = theory.verify_unbiasedness(world, None, v.unbiased_trials,
                                     stream(spec.seed, "verify/unbiased"), bias=bias)
    reps.append(unb.report)
    probe = theory.verify_unbiasedness(world, None, v.unbiased_trials,
                                       stream(spec.seed, "verify/unbiased-fault"), bias=v.bias)
    expected = abs(theory.expected_bias_residual(world, v.bias)[0])
    reps.append(theory.VerificationReport(
        "unbiasedness_fault_detection", v.unbiased_trials, probe.report.estimate, expected,
        abs(probe.report.estimate - expected), abs(probe.report.estimate - expected) / expected,
        not probe.report.passed, probe.report.tolerance,
        note="passes when an oracle shifted by a constant is flagged as biased"))
    return reps, th


def claim_group(claim: str) -> str:
    for g in ("k_formula", "variance_halving", "theorem1", "unbiasedness"):
        if claim.startswith(g):
            return g
    return claim


def cmd_verify(spec: ExperimentSpec, inject_bias: bool = False) -> List[theory.VerificationReport]:
    out = _outdir(spec)
    reps, th = verification_suite(spec, inject_bias)
    theory.write_reports(out / "verify.csv", reps)
    write_rows(out / "theorem1_curve.csv", [{"step": s, "max_rel_dev": d} for s, d in th.run.curve])
    keys = [{"key": k, "rel_dev": d, "status": "probed"} for k, d in sorted(th.run.per_key.items())]
    keys += [{"key": k, "rel_dev": "", "status": why} for k, why in sorted(th.probe.excluded.items())]
    write_rows(out / "theorem1_keys.csv", keys, ("key", "rel_dev", "status"))
    (out / "verify_summary.txt").write_text(theory.summary_block(reps) + "\n", encoding="utf-8")
    write_manifest(out, "verify", spec, [
        {"file": "verify.csv", "kind": "reports", "rows": len(reps),
         "groups": sorted({claim_group(r.claim) for r in reps})},
        {"file": "theorem1_curve.csv", "kind": "curve", "rows": len(th.run.curve)},
        {"file": "theorem1_keys.csv", "kind": "keys", "rows": len(keys)},
    ])
    return reps


# --------------------------------------------------------------------------- #
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unitslab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "train", "eval", "ablate", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--spec", help="TOML experiment spec")
        p.add_argument("--seed", type=int, help="master seed (overrides the spec)")
        p.add_argument("--out", help="output directory (overrides the spec)")
        p.add_argument("--preset", choices=sorted(sampling.PRESETS), help="sampling preset")
        p.add_argument("--steps", type=int, help="training steps")
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint directory (default: <out>/checkpoint)")
        if name == "verify":
            p.add_argument("--debug-inject-bias", action="store_true",
                           help="evaluate unbiasedness on a deliberately biased oracle")
    return ap


def spec_from_args(args) -> ExperimentSpec:
    spec = load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.out is not None:
        spec = replace(spec, out=args.out)
    if args.preset is not None:
        spec = replace(spec, train=replace(spec.train, preset=args.preset))
    if args.steps is not None:
        if args.steps < 0:
            raise ValueError("--steps must be non-negative")
        spec = replace(spec, train=replace(spec.train, steps=args.steps),
                       ablate=replace(spec.ablate, steps=args.steps))
    return spec


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = spec_from_args(args)
        if args.command == "simulate":
            out = cmd_simulate(spec)
            print(f"wrote {out}")
        elif args.command == "train":
            run = cmd_train(spec)
            last = run.log[-1]["loss"] if run.log else float("nan")
            print(f"trained {len(run.log)} steps, final loss {last:.6g}"
                  + (" (early stop)" if run.stopped_early else ""))
        elif args.command == "eval":
            for r in cmd_eval(spec, args.checkpoint):
                print(f"{r['scenario']} R={r['R']}: ssim {r['ssim_mean']:.4f} +- {r['ssim_std']:.4f}, "
                      f"psnr {r['psnr_mean']:.2f} dB")
        elif args.command == "ablate":
            cmd_ablate(spec, log=print)
        elif args.command == "verify":
            reps = cmd_verify(spec, args.debug_inject_bias)
            print(theory.summary_block(reps))
            return 0 if all(r.passed for r in reps) else 1
    except (TrainingError, recon.DivergenceError, sampling.EmptySubsetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
