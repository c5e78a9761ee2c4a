import csv
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from unitslab import cli, objective, recon, sampling, tensor, theory

SMALL = ["--seed", "3"]


def small_spec(tmp_path, **train) -> Path:
    spec = cli.ExperimentSpec(
        seed=3, out=str(tmp_path / "run"),
        data=cli.DataSpec(nx=16, ny=16, nt=4, nc=2, train_subjects=2, test_subjects=2),
        model=cli.ModelSpec(unrolls=2, channels=2),
        train=replace(cli.TrainSpec(), steps=10, **train),
        eval=cli.EvalSpec(points=[("OOD", 8), ("OOD", 12), ("OOD", 16)]),
    )
    path = tmp_path / "spec.toml"
    cli.dump_spec(spec, path)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def payload_bytes(path, drop=("wall_ms",)):
    rows = read_csv(path)
    return [{k: v for k, v in r.items() if k not in drop} for r in rows]


def test_derive_seed_is_stable_and_separated():
    assert cli.derive_seed(0, "train") == cli.derive_seed(0, "train")
    assert cli.derive_seed(0, "train") != cli.derive_seed(0, "init")
    assert cli.derive_seed(0, "train", 1) != cli.derive_seed(0, "train", 0)
    assert cli.derive_seed(1, "train") != cli.derive_seed(0, "train")
    assert 0 <= cli.derive_seed(7, "x") < 2**64


def test_spec_round_trip(tmp_path):
    spec = cli.load_spec(str(small_spec(tmp_path)))
    cli.dump_spec(spec, tmp_path / "again.toml")
    assert cli.load_spec(str(tmp_path / "again.toml")) == spec


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        cli.ExperimentSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        cli.EvalSpec(points=[("OOD", 0)])
    with pytest.raises(ValueError):
        cli.ExperimentSpec(train=cli.TrainSpec(preset="nope"))
    assert cli.main(["train", "--preset", "units-fix", "--steps", "-1",
                     "--out", str(tmp_path / "x")]) == 2


def test_simulate_files_and_rerun(tmp_path):
    spec = small_spec(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["simulate", "--spec", str(spec)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    for f in man["files"]:
        arr = tensor.read_grid(out / f["file"])
        assert list(arr.shape) == f["shape"]
        if f["kind"] == "mask" and f["acceleration"] == 8:
            assert abs(f["density"] - 1 / 8) <= 0.02
            assert f["density"] == pytest.approx(arr.mean())
    first = {p.name: p.read_bytes() for p in out.iterdir() if p.is_file()}
    assert cli.main(["simulate", "--spec", str(spec)]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir() if p.is_file()}
    assert first == second


def test_train_units_fix_rows_and_determinism(tmp_path):
    spec = small_spec(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["train", "--spec", str(spec), "--preset", "units-fix"]) == 0
    rows = read_csv(out / "loss.csv")
    assert len(rows) == 10 and [int(r["step"]) for r in rows] == list(range(10))
    a = payload_bytes(out / "loss.csv")
    ck = (out / "checkpoint" / "checkpoint.json").read_bytes()
    assert cli.main(["train", "--spec", str(spec), "--preset", "units-fix"]) == 0
    assert payload_bytes(out / "loss.csv") == a
    assert (out / "checkpoint" / "checkpoint.json").read_bytes() == ck


def test_train_cross_loss_matches_recomputation(tmp_path):
    spec = cli.load_spec(str(small_spec(tmp_path)))
    spec3 = replace(spec, out=str(tmp_path / "three"), train=replace(spec.train, steps=3))
    spec4 = replace(spec, out=str(tmp_path / "four"), train=replace(spec.train, steps=4))
    cli.cmd_train(spec3, "units-cross")
    cli.cmd_train(spec4, "units-cross")
    params, man = recon.load_checkpoint(tmp_path / "three" / "checkpoint")
    assert man["step"] == 3
    config = cli.train_config(spec4, "units-cross")
    assert config.loss_kind == "cross"
    data = cli.train_subjects(spec4)
    rng_d = np.random.default_rng([config.seed, 0])
    rng_m = np.random.default_rng([config.seed, 1])
    for _ in range(4):
        _, y0, coils = data.sample(rng_d)
        my, subs = sampling.sample_step_masks(config.plan, data.shape, rng_m)
    m1, m2 = subs[0].bits, subs[1].bits
    y1, y2 = y0 * m1[..., None], y0 * m2[..., None]
    p12 = recon.reconstruct(params, y1, m1, coils)
    p21 = recon.reconstruct(params, y2, m2, coils)
    expected = 0.5 * objective.masked_loss(p12, y2, m2) + 0.5 * objective.masked_loss(p21, y1, m1)
    logged = float(read_csv(tmp_path / "four" / "loss.csv")[3]["loss"])
    assert logged == pytest.approx(expected, rel=1e-10)


class ConstantData:
    """Always returns the same subject."""

    def __init__(self, subjects):
        self.subject = subjects[0]
        self.shape = subjects.shape

    def sample(self, rng):
        return self.subject


def test_zs_ssl_early_stop_on_constant_data(tmp_path):
    spec = cli.load_spec(str(small_spec(tmp_path, patience=1, every=1)))
    config = cli.train_config(spec, "zs-ssl", steps=200)
    config = replace(config, plan=sampling.with_seed(config.plan, 11))
    assert config.early_stop.enabled
    run = objective.train(config, ConstantData(cli.train_subjects(spec)), cli.initial_params(spec))
    assert run.stopped_early and len(run.log) < 200


def test_train_divergence_exit_code(tmp_path, capsys):
    spec = small_spec(tmp_path, lr=1e4)
    code = cli.main(["train", "--spec", str(spec), "--preset", "units-base", "--steps", "20"])
    assert code == 3
    assert "diverg" in capsys.readouterr().err or "non-finite" in capsys.readouterr().err


def test_eval_grid_rows_and_determinism(tmp_path):
    spec = small_spec(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["train", "--spec", str(spec), "--preset", "units-fix", "--steps", "2"]) == 0
    assert cli.main(["eval", "--spec", str(spec)]) == 0
    rows = read_csv(out / "eval_summary.csv")
    assert [(r["scenario"], int(r["R"])) for r in rows] == [("OOD", 8), ("OOD", 12), ("OOD", 16)]
    a = (out / "metrics.csv").read_bytes(), (out / "eval_summary.csv").read_bytes()
    assert cli.main(["eval", "--spec", str(spec)]) == 0
    assert a == ((out / "metrics.csv").read_bytes(), (out / "eval_summary.csv").read_bytes())


def test_eval_fully_sampled_dc_model(tmp_path):
    spec = cli.load_spec(str(small_spec(tmp_path)))
    params = recon.init_params(2, 2, seed=0, out_gain=0.0)
    recon.save_checkpoint(tmp_path / "dc", params, {})
    spec = replace(spec, eval=cli.EvalSpec(points=[("OOD", 1)]))
    rows = cli.cmd_eval(spec, str(tmp_path / "dc"))
    assert rows[0]["ssim_mean"] > 0.99


def test_eval_missing_checkpoint_exit_code(tmp_path):
    assert cli.main(["eval", "--out", str(tmp_path / "none")]) == 2


def verify_spec(tmp_path, trials=2000) -> Path:
    spec = cli.ExperimentSpec(out=str(tmp_path / "v"), verify=cli.VerifySpec(
        k_trials=20_000, k_grid=[0.3, 0.7], var_trials=20_000, sigmas=[1.0],
        theorem_steps=20_000, probe_draws=64, unbiased_trials=trials))
    path = tmp_path / "verify.toml"
    cli.dump_spec(spec, path)
    return path


def test_verify_small_suite(tmp_path):
    spec = verify_spec(tmp_path, 5000)
    code = cli.main(["verify", "--spec", str(spec)])
    reps = read_csv(tmp_path / "v" / "verify.csv")
    groups = {cli.claim_group(r["claim"]) for r in reps}
    assert {"k_formula", "variance_halving", "theorem1", "unbiasedness"} <= groups
    unb = [r for r in reps if r["claim"] == "unbiasedness"][0]
    assert unb["passed"] == "True"
    failed = [r["claim"] for r in reps if r["passed"] != "True"]
    assert code == (1 if failed else 0)
    curve = read_csv(tmp_path / "v" / "theorem1_curve.csv")
    assert len(curve) > 0


def test_verify_injected_bias_fails(tmp_path):
    spec = verify_spec(tmp_path, 5000)
    assert cli.main(["verify", "--spec", str(spec), "--debug-inject-bias"]) == 1
    reps = read_csv(tmp_path / "v" / "verify.csv")
    assert [r["passed"] for r in reps if r["claim"].startswith("unbiasedness(")] == ["False"]


def test_verify_insufficient_trials(tmp_path):
    with pytest.raises(theory.InsufficientTrialsError, match="insufficient trials"):
        cli.VerifySpec(unbiased_trials=10)
    bad = tmp_path / "bad.toml"
    bad.write_text("[verify]\nunbiased_trials = 10\n")
    assert cli.main(["verify", "--spec", str(bad), "--out", str(tmp_path / "b")]) == 2


def test_ablate_shape(tmp_path):
    spec = cli.load_spec(str(small_spec(tmp_path)))
    spec = replace(spec, ablate=replace(spec.ablate, steps=2))
    summary = cli.cmd_ablate(spec)
    assert len(summary) == 5 * 3
    assert {r["variant"] for r in summary} == set(sampling.ABLATION_VARIANTS)
    dist = read_csv(tmp_path / "run" / "ablation_ssim.csv")
    assert len(dist) == 5 * 3 * spec.data.test_subjects


def test_example_spec_matches_defaults():
    path = Path(__file__).parents[1] / "scripts" / "default_spec.toml"
    assert cli.load_spec(str(path)) == cli.ExperimentSpec()
