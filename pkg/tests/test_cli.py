"""End-to-end command behavior through the argparse entry point.

Commands run in-process via main(argv); outputs land in tmp_path so the
byte-identity checks can diff real files.
"""

import numpy as np
import pytest

from ficd.analytics import trace_from_csv
from ficd.cli import main
from ficd.schedule import linear_schedule
from ficd.scoremodel import LearnedScoreModel, NetSpec, save_model


def run(*argv):
    return main(list(argv))


def sample_args(out, *extra):
    return (
        "sample",
        "--preset",
        "gaussian-point",
        "--T",
        "30",
        "--set",
        "sampler.n_chains=64",
        "--out",
        str(out),
        *extra,
    )


# -- sample -------------------------------------------------------------


def test_sample_smoke(tmp_path, capsys):
    assert run(*sample_args(tmp_path / "run")) == 0
    out = capsys.readouterr().out
    assert "strategy=ficd" in out and "T=30" in out and "N=64" in out
    assert (tmp_path / "run" / "samples.csv").exists()
    assert (tmp_path / "run" / "trace.csv").exists()


def test_sample_rerun_is_byte_identical_outside_timings(tmp_path):
    assert run(*sample_args(tmp_path / "a", "--strategy", "exact")) == 0
    assert run(*sample_args(tmp_path / "b", "--strategy", "exact")) == 0
    assert (tmp_path / "a" / "samples.csv").read_bytes() == (
        tmp_path / "b" / "samples.csv"
    ).read_bytes()
    ta = trace_from_csv(tmp_path / "a" / "trace.csv")
    tb = trace_from_csv(tmp_path / "b" / "trace.csv")
    for field in ("t", "grad_norm", "cr_bound", "coefficient_used", "score_evals"):
        np.testing.assert_array_equal(getattr(ta, field), getattr(tb, field))


def test_sample_thread_count_does_not_change_samples(tmp_path):
    assert run(*sample_args(tmp_path / "t1", "--threads", "1")) == 0
    assert run(*sample_args(tmp_path / "t4", "--threads", "4")) == 0
    assert (tmp_path / "t1" / "samples.csv").read_bytes() == (
        tmp_path / "t4" / "samples.csv"
    ).read_bytes()


def test_sample_zero_rho_strategies_agree(tmp_path):
    assert run(*sample_args(tmp_path / "f", "--strategy", "ficd", "--rho", "0.0")) == 0
    assert run(*sample_args(tmp_path / "u", "--strategy", "unit", "--rho", "0.0")) == 0
    assert (tmp_path / "f" / "samples.csv").read_bytes() == (
        tmp_path / "u" / "samples.csv"
    ).read_bytes()


def test_sample_uncond_needs_no_energy(tmp_path):
    assert (
        run(
            "sample",
            "--strategy",
            "uncond",
            "--T",
            "10",
            "--set",
            "model.kind=gmm",
            "--set",
            "sampler.n_chains=8",
            "--out",
            str(tmp_path / "u"),
        )
        == 0
    )


def test_sample_config_file_layer(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("schedule.T = 40\nsampler.n_chains = 16\n# comment\n")
    assert (
        run(
            "sample",
            "--preset",
            "gaussian-point",
            "--config",
            str(cfg),
            "--T",
            "20",
            "--out",
            str(tmp_path / "o"),
        )
        == 0
    )
    out = capsys.readouterr().out
    assert "T=20" in out and "N=16" in out  # flag beat file; file beat preset


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the blown-up run overflows
def test_sample_exit_codes(tmp_path, capsys):
    assert run("sample", "--set", "bogus.key=1", "--out", str(tmp_path / "x")) == 2
    assert run("sample", "--config", str(tmp_path / "absent.cfg")) == 2
    assert run("sample", "--preset", "gaussian-point", "--set", "energy.kind=") == 2
    err = capsys.readouterr().err
    assert "configuration error" in err
    failing = run(
        "sample",
        "--preset",
        "gmm-style-analog",
        "--rho",
        "5.0",
        "--set",
        "sampler.n_chains=32",
        "--out",
        str(tmp_path / "c"),
    )
    assert failing == 3
    assert "chain failure" in capsys.readouterr().err


def test_unknown_preset_is_an_argparse_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("sample", "--preset", "giant-run")
    assert exc.value.code == 2


# -- verify -------------------------------------------------------------


def test_verify_sound_suites_pass(tmp_path, capsys):
    code = run(
        "verify",
        "--suite",
        "tweedie,jacobian-fd,fisher-bound",
        "--set",
        "schedule.T=50",
        "--out",
        str(tmp_path / "v"),
    )
    assert code == 0
    report = (tmp_path / "v" / "report.txt").read_text()
    assert "ALL PASS" in report
    assert "[tweedie] PASS" in report
    assert "measured only" in report  # multimodal numbers shown, never gating
    assert "ALL PASS" in capsys.readouterr().out


def test_verify_deviation_bound_fails_honestly(tmp_path, capsys):
    code = run(
        "verify",
        "--suite",
        "deviation-bound",
        "--set",
        "schedule.T=40",
        "--out",
        str(tmp_path / "v"),
    )
    assert code == 1
    report = (tmp_path / "v" / "report.txt").read_text()
    assert "FAIL" in report and "gap" in report
    assert "FAILURES PRESENT" in capsys.readouterr().out


def test_verify_corrupted_schedule_is_a_config_error(tmp_path):
    assert run("verify", "--set", "schedule.beta_end=1.5", "--out", str(tmp_path / "v")) == 2


# -- trace --------------------------------------------------------------


def test_trace_writes_pair_and_comparison(tmp_path, capsys):
    code = run(
        "trace",
        "--preset",
        "gaussian-point",
        "--T",
        "30",
        "--set",
        "sampler.n_chains=64",
        "--out",
        str(tmp_path / "tr"),
    )
    assert code == 0
    for name in ("trace_exact.csv", "trace_ficd.csv", "compare.csv"):
        assert (tmp_path / "tr" / name).exists()
    header, first = (tmp_path / "tr" / "compare.csv").read_text().splitlines()[:2]
    assert header == "t,grad_norm_exact,grad_norm_ficd"
    assert first.startswith("30,")
    out = capsys.readouterr().out
    assert "exact tercile means" in out and "ficd tercile means" in out


def test_trace_three_steps_gives_singleton_terciles(tmp_path, capsys):
    code = run(
        "trace",
        "--preset",
        "gaussian-point",
        "--T",
        "3",
        "--set",
        "sampler.n_chains=16",
        "--out",
        str(tmp_path / "tr3"),
    )
    assert code == 0
    assert len((tmp_path / "tr3" / "compare.csv").read_text().splitlines()) == 4
    assert "early=" in capsys.readouterr().out


# -- bench --------------------------------------------------------------


def make_model_file(path, T=20, width=8):
    schedule = linear_schedule(T)
    model = LearnedScoreModel.init(
        NetSpec(hidden_width=width, hidden_layers=2, time_embed_dim=4),
        schedule,
        2,
        rng=np.random.default_rng(0),
    )
    save_model(model, path)


def test_bench_counts_and_ratio(tmp_path, capsys):
    model_path = tmp_path / "m.npz"
    make_model_file(model_path)
    code = run(
        "bench",
        "--preset",
        "bench-mlp",
        "--set",
        f"model.path={model_path}",
        "--set",
        "sampler.n_chains=16",
        "--set",
        "bench.repetitions=2",
        "--out",
        str(tmp_path / "b"),
    )
    assert code == 0
    lines = (tmp_path / "b" / "timing.csv").read_text().splitlines()
    assert lines[0] == (
        "strategy,median_run_s,median_step_s,score_evals_per_step,"
        "jacobian_passes_per_step,score_evals_per_run,jacobian_passes_per_run"
    )
    rows = {line.split(",")[0]: line.split(",") for line in lines[1:]}
    assert rows["exact"][4] == "1" and rows["exact"][6] == "20"  # one pass per step, T per run
    assert rows["ficd"][4] == "0" and rows["ficd"][6] == "0"
    assert "FICD/EXACT median run-time ratio" in capsys.readouterr().out


def test_bench_missing_model_path(tmp_path):
    code = run(
        "bench",
        "--preset",
        "bench-mlp",
        "--set",
        f"model.path={tmp_path / 'absent.npz'}",
        "--out",
        str(tmp_path / "b"),
    )
    assert code == 2


# -- train-score --------------------------------------------------------


def train_args(out, *extra):
    return (
        "train-score",
        "--set",
        "schedule.T=20",
        "--set",
        "train.net.width=8",
        "--set",
        "train.net.layers=2",
        "--set",
        "train.net.embed=4",
        "--set",
        "train.data.count=256",
        "--set",
        "train.batch_size=32",
        "--out",
        str(out),
        *extra,
    )


def test_train_score_writes_model_and_loss_history(tmp_path, capsys):
    assert run(*train_args(tmp_path / "t", "--steps", "40")) == 0
    out = capsys.readouterr().out
    assert "final loss" in out and "score check" in out
    lines = (tmp_path / "t" / "train_loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 41
    assert (tmp_path / "t" / "model.npz").exists()


def test_train_score_zero_steps_warns(tmp_path, capsys):
    with pytest.warns(UserWarning, match="untrained"):
        assert run(*train_args(tmp_path / "t0", "--steps", "0")) == 0
    assert "untrained model saved" in capsys.readouterr().out


def test_train_score_missing_dataset_names_path(tmp_path, capsys):
    code = run(
        *train_args(
            tmp_path / "tx",
            "--set",
            "train.data.kind=file",
            "--set",
            f"train.data.path={tmp_path / 'data.csv'}",
        )
    )
    assert code == 2
    assert "data.csv" in capsys.readouterr().err


def test_train_score_rerun_reproduces_loss_history(tmp_path):
    assert run(*train_args(tmp_path / "r1", "--steps", "25")) == 0
    assert run(*train_args(tmp_path / "r2", "--steps", "25")) == 0
    assert (tmp_path / "r1" / "train_loss.csv").read_bytes() == (
        tmp_path / "r2" / "train_loss.csv"
    ).read_bytes()


def test_train_score_respects_model_path_key(tmp_path):
    target = tmp_path / "nested" / "weights.npz"
    assert run(*train_args(tmp_path / "tp", "--steps", "5", "--set", f"model.path={target}")) == 0
    assert target.exists()
