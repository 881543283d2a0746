import os

import pytest

from epo.cli import main


def files(path):
    return sorted(os.listdir(path))


def test_bandit(tmp_path, capsys):
    out = tmp_path / "b"
    code = main(["bandit", "--alpha", "0.5,2", "--arms", "5", "--horizon", "100", "--runs", "4", "--seed", "1", "--out", str(out)])
    assert code == 0
    assert "bandit_alpha0.5.csv" in files(out)
    header = open(out / "bandit_alpha0.5.csv").readline().strip()
    assert header == "t,mean_regret,ci95,alpha,runs,seed"


def test_mdp(tmp_path):
    out = tmp_path / "m"
    code = main(["mdp", "--env", "chain", "--alpha", "1", "--iters", "2", "--samples", "50", "--runs", "2", "--out", str(out)])
    assert code == 0
    assert open(out / "mdp_chain_alpha1.0.csv").readline().strip() == "iter,mean_reward,ci95,alpha,env,runs,seed"
    assert (out / "mdp_chain_model.txt").exists()


def test_demo(tmp_path):
    out = tmp_path / "d"
    assert main(["demo", "--alpha", "1,10", "--eta", "2.0", "--arms", "10", "--seed", "0", "--out", str(out)]) == 0
    assert open(out / "demo_policies.csv").readline().strip() == "alpha,iteration,arm,probability"


def test_rerun_is_bitwise_identical(tmp_path):
    args = ["bandit", "--alpha", "1", "--horizon", "100", "--runs", "3", "--seed", "9"]
    main(args + ["--out", str(tmp_path / "x")])
    main(args + ["--out", str(tmp_path / "y")])
    for name in files(tmp_path / "x"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("alphas=0.5\nhorizon=40\nruns=2\nseed=3\n")
    out = tmp_path / "o"
    assert main(["bandit", "--config", str(cfg), "--runs", "3", "--out", str(out)]) == 0
    line = open(out / "bandit_alpha0.5.csv").read().splitlines()[1]
    assert line.endswith(",3,3")


@pytest.mark.parametrize(
    "argv",
    [
        ["bandit", "--horizon", "30"],
        ["mdp", "--runs", "0"],
        ["demo", "--config", "/nonexistent/file"],
    ],
)
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["mdp", "--env", "taxi"])
    assert exc.value.code == 2


def test_solver_failure_exit_3(tmp_path, monkeypatch, capsys):
    import epo.experiments as ex

    def boom(*args, **kwargs):
        raise ArithmeticError("diverged")

    monkeypatch.setattr(ex, "solve_dual", boom)
    assert main(["mdp", "--iters", "1", "--samples", "10", "--runs", "1", "--out", str(tmp_path)]) == 3
    assert "solver failure" in capsys.readouterr().err


def test_negative_alpha_values(tmp_path):
    assert main(["demo", "--alpha", "-10,1", "--out", str(tmp_path)]) == 0
    assert main(["demo", "--alpha", "-.5", "--out", str(tmp_path)]) == 0
    assert open(tmp_path / "demo_policies.csv").read().splitlines()[1].startswith("-0.5,")
