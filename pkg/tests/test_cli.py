"""End-to-end checks of every subcommand, exit codes, and file outputs."""

import json
import os

import numpy as np
import pytest

from elbo_kit.cli import main
from elbo_kit.datagen import gen_bars, load_dataset, save_dataset
from elbo_kit.gaussian_core import RngState
from elbo_kit.vae import load_checkpoint


def data_lines(path):
    """File content minus the timestamp comment lines."""
    with open(path, "rb") as fh:
        return [
            line
            for line in fh.readlines()
            if not (line.startswith(b"# started") or line.startswith(b"# finished"))
        ]


def bars_file(tmp_path, n=128, side=4, seed=7):
    path = tmp_path / "bars.csv"
    save_dataset(gen_bars(n, side, RngState(seed)), str(path))
    return str(path)


class TestKlCheck:
    def test_shifted_unit_gaussian(self, tmp_path, capsys):
        out = tmp_path / "kl.csv"
        code = main(
            ["kl-check", "--mu-q", "1", "--var-q", "1", "--seed", "3", "--out", str(out)]
        )
        assert code == 0
        header, row = [l.decode() for l in data_lines(out)[-2:]]
        assert header.strip() == "closed_form,quadrature,mc_value,mc_std_error"
        closed, quad, mc, se = map(float, row.strip().split(","))
        assert closed == pytest.approx(0.5, abs=1e-12)
        assert quad == pytest.approx(0.5, abs=1e-8)
        assert abs(mc - 0.5) <= 4 * se

    def test_identical_distributions_all_zero(self, capsys):
        code = main(["kl-check", "--mu-q", "0", "--var-q", "1", "--seed", "1"])
        assert code == 0
        row = capsys.readouterr().out.strip().splitlines()[-1]
        closed, quad, mc, se = map(float, row.split(","))
        assert closed == 0.0
        assert abs(quad) <= 1e-12
        assert mc == 0.0
        assert se == 0.0

    def test_invalid_variance_names_flag(self, capsys):
        code = main(["kl-check", "--mu-q", "0", "--var-q", "-1"])
        assert code == 2
        assert "--var-q" in capsys.readouterr().err

    def test_manifest_header_present(self, tmp_path):
        out = tmp_path / "kl.csv"
        main(["kl-check", "--mu-q", "0.5", "--var-q", "2", "--seed", "5", "--out", str(out)])
        first = open(out).readline()
        assert first.startswith("# manifest ")
        manifest = json.loads(first[len("# manifest ") :])
        assert manifest["subcommand"] == "kl-check"
        assert manifest["seed"] == 5
        assert manifest["config"]["mu_q"] == 0.5

    def test_quadrature_override_validated(self, capsys):
        code = main(["kl-check", "--mu-q", "0", "--var-q", "1", "--quadrature", "10"])
        assert code == 2


class TestBoundCheck:
    def test_random_q_trials_pass(self, tmp_path):
        out = tmp_path / "bound.csv"
        code = main(
            ["bound-check", "--trials", "10", "--latent-dim", "2", "--data-dim", "4",
             "--recon-samples", "2000", "--seed", "11", "--out", str(out)]
        )
        assert code == 0
        lines = [l.decode() for l in data_lines(out)]
        assert lines[1].strip() == "trial,exact_log_marginal,elbo,gap,std_error"
        assert len(lines) == 12  # manifest + header + 10 trials
        for row in lines[2:]:
            trial, exact, elbo, gap, se = row.strip().split(",")
            assert float(gap) == pytest.approx(float(exact) - float(elbo), abs=1e-12)

    def test_posterior_mode_gap_near_zero(self, tmp_path):
        out = tmp_path / "bound.csv"
        code = main(
            ["bound-check", "--trials", "8", "--latent-dim", "1", "--data-dim", "3",
             "--recon-samples", "4000", "--q-mode", "posterior", "--seed", "13",
             "--out", str(out)]
        )
        assert code == 0
        for row in [l.decode() for l in data_lines(out)][2:]:
            _, _, _, gap, se = row.strip().split(",")
            assert abs(float(gap)) <= 4 * float(se)

    def test_posterior_mode_needs_scalar_latent(self, capsys):
        code = main(["bound-check", "--q-mode", "posterior", "--latent-dim", "2"])
        assert code == 2
        assert "latent-dim" in capsys.readouterr().err

    def test_reruns_are_byte_identical_modulo_timestamps(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        flags = ["bound-check", "--trials", "5", "--recon-samples", "500", "--seed", "21"]
        assert main(flags + ["--out", str(a)]) == 0
        assert main(flags + ["--out", str(b)]) == 0
        assert data_lines(a) == data_lines(b)


class TestGradCheck:
    def test_default_small_vae_passes_tolerance(self, capsys):
        code = main(["grad-check", "--seed", "2"])
        assert code == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert rows[-2].strip() == "max_relative_error"
        assert float(rows[-1]) <= 1e-4

    def test_step_flag_out_of_domain_is_usage_error(self, capsys):
        assert main(["grad-check", "--step", "0.01"]) == 2


class TestTrainEvalSample:
    def test_train_writes_artifacts(self, tmp_path):
        dataset = bars_file(tmp_path)
        outdir = tmp_path / "run"
        code = main(
            ["train", "--dataset", dataset, "--latent-dim", "2", "--epochs", "5",
             "--batch-size", "32", "--seed", "7", "--out", str(outdir)]
        )
        assert code == 0
        metrics = outdir / "metrics.csv"
        lines = [l.decode() for l in data_lines(metrics)]
        assert lines[1].strip() == "epoch,batch,total_loss,kl,recon"
        rows = [l.strip().split(",") for l in lines[2:]]
        assert len(rows) == 5 * 4  # 128 rows / batch 32 = 4 batches per epoch
        for epoch, batch, total, kl, recon in rows:
            assert float(total) == pytest.approx(float(kl) + float(recon), abs=1e-10)
            assert float(kl) >= 0.0
        model, config = load_checkpoint(str(outdir / "checkpoint.json"))
        assert model.data_dim == 16
        assert config.epochs == 5
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert manifest["subcommand"] == "train"
        assert manifest["seed"] == 7
        assert manifest["batches_recorded"] == 20

    def test_train_rerun_metrics_identical(self, tmp_path):
        dataset = bars_file(tmp_path)
        flags = ["train", "--dataset", dataset, "--epochs", "3", "--batch-size", "32",
                 "--seed", "9"]
        assert main(flags + ["--out", str(tmp_path / "r1")]) == 0
        assert main(flags + ["--out", str(tmp_path / "r2")]) == 0
        assert data_lines(tmp_path / "r1" / "metrics.csv") == data_lines(
            tmp_path / "r2" / "metrics.csv"
        )

    def test_eval_reports_mean_loss(self, tmp_path, capsys):
        dataset = bars_file(tmp_path)
        outdir = tmp_path / "run"
        main(["train", "--dataset", dataset, "--epochs", "3", "--batch-size", "32",
              "--seed", "5", "--out", str(outdir)])
        capsys.readouterr()
        code = main(
            ["eval", "--checkpoint", str(outdir / "checkpoint.json"),
             "--dataset", dataset, "--seed", "1"]
        )
        assert code == 0
        rows = capsys.readouterr().out.strip().splitlines()
        assert rows[-2].strip() == "n,mean_total_loss,mean_kl,mean_recon"
        n, total, kl, recon = rows[-1].split(",")
        assert int(n) == 128
        assert float(total) == pytest.approx(float(kl) + float(recon), abs=1e-10)

    def test_eval_rejects_mismatched_dataset(self, tmp_path, capsys):
        dataset = bars_file(tmp_path)
        outdir = tmp_path / "run"
        main(["train", "--dataset", dataset, "--epochs", "1", "--batch-size", "32",
              "--seed", "5", "--out", str(outdir)])
        other = tmp_path / "blobs.csv"
        from elbo_kit.datagen import gen_gaussian_blobs

        save_dataset(gen_gaussian_blobs(10, [[0.0, 0.0]], 0.5, RngState(1)), str(other))
        code = main(
            ["eval", "--checkpoint", str(outdir / "checkpoint.json"), "--dataset", str(other)]
        )
        assert code == 2

    def test_sample_writes_loadable_dataset(self, tmp_path):
        dataset = bars_file(tmp_path)
        outdir = tmp_path / "run"
        main(["train", "--dataset", dataset, "--epochs", "2", "--batch-size", "32",
              "--seed", "5", "--out", str(outdir)])
        samples = tmp_path / "samples.csv"
        code = main(
            ["sample", "--checkpoint", str(outdir / "checkpoint.json"),
             "--count", "12", "--seed", "3", "--out", str(samples)]
        )
        assert code == 0
        ds = load_dataset(str(samples))
        assert ds.rows.shape == (12, 16)
        assert np.all(ds.rows >= 0.0)
        assert np.all(ds.rows <= 1.0)


class TestSeedsAndErrors:
    def test_env_var_seed_fallback(self, tmp_path, monkeypatch):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        monkeypatch.setenv("ELBO_KIT_SEED", "123")
        main(["kl-check", "--mu-q", "1", "--var-q", "2", "--out", str(out1)])
        monkeypatch.delenv("ELBO_KIT_SEED")
        main(["kl-check", "--mu-q", "1", "--var-q", "2", "--seed", "123", "--out", str(out2)])
        assert data_lines(out1) == data_lines(out2)

    def test_unknown_flag_is_usage_error(self):
        assert main(["kl-check", "--mu-q", "1", "--var-q", "1", "--bogus", "3"]) == 2

    def test_missing_subcommand_is_usage_error(self):
        assert main([]) == 2

    def test_malformed_dataset_is_input_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("# x,0,2\n1.0,oops\n")
        code = main(["train", "--dataset", str(bad), "--out", str(tmp_path / "run")])
        assert code == 2
        assert "malformed" in capsys.readouterr().err

    def test_missing_file_is_input_error(self, tmp_path):
        assert (
            main(["eval", "--checkpoint", str(tmp_path / "no.json"), "--dataset", "n"]) == 2
        )

    def test_truncated_checkpoint_is_input_error(self, tmp_path):
        ckpt = tmp_path / "partial.json"
        ckpt.write_text('{"format": "elbo-kit-checkpoint-v1", "latent_dim": 2}')
        out = str(tmp_path / "s.csv")
        assert main(["sample", "--checkpoint", str(ckpt), "--out", out]) == 2
