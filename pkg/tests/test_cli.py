"""End-to-end tests of the command-line interface, run in process."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from topnrank.cli import DEFAULTS, main, parse_int_list
from topnrank.data import (
    filter_sparse_users,
    implicit_user_groups,
    load_ratings,
)
from topnrank.evaluation import ndcg_report
from topnrank.model import load_checkpoint
from topnrank.synthetic import write_planted_file


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """A small planted ratings file plus prepared splits and a checkpoint."""
    root = tmp_path_factory.mktemp("cli-corpus")
    ratings = root / "ratings.csv"
    write_planted_file(
        ratings, n_users=30, n_items=50, latent_dim=3, history=(10, 16), seed=1
    )
    prepared = root / "prepared"
    assert (
        main(
            [
                "prepare",
                "--input",
                str(ratings),
                "--output",
                str(prepared),
                "--repeats",
                "2",
                "--min-count",
                "5",
                "--seed",
                "3",
            ]
        )
        == 0
    )
    trained = root / "trained"
    assert (
        main(
            [
                "train",
                "--input",
                str(prepared / "train_r0.csv"),
                "--output",
                str(trained),
                "--idmap",
                str(prepared / "idmap.json"),
                "--k",
                "3",
                "--lr",
                "0.01",
                "--batch-frac",
                "1.0",
                "--max-iters",
                "2",
                "--epsilon",
                "0",
                "--seed",
                "0",
            ]
        )
        == 0
    )
    return root


def read_table(path):
    """Parse a result CSV, checking and stripping the manifest comment."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# manifest: manifest.json"
    rows = list(csv.reader(lines[1:]))
    return rows[0], rows[1:]


def read_manifest(outdir):
    with open(Path(outdir) / "manifest.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


class TestPrepare:
    def test_outputs_exist(self, corpus):
        prepared = corpus / "prepared"
        for name in (
            "train_r0.csv",
            "test_r0.csv",
            "train_r1.csv",
            "test_r1.csv",
            "idmap.json",
            "manifest.json",
        ):
            assert (prepared / name).is_file()

    def test_manifest_contents(self, corpus):
        manifest = read_manifest(corpus / "prepared")
        assert manifest["tool"] == "topnrank"
        assert manifest["command"] == "prepare"
        assert manifest["config"]["min_count"] == 5
        assert manifest["config"]["seed"] == 3
        assert manifest["config"]["threshold"] == 4.0
        assert len(manifest["split_seeds"]) == 2
        assert manifest["outputs"] == sorted(manifest["outputs"])
        assert manifest["inputs"]["input_sha256"]
        with open(corpus / "prepared" / "idmap.json", encoding="utf-8") as fh:
            idmap = json.load(fh)
        assert idmap["digest"] == manifest["idmap_digest"]
        assert len(idmap["users"]) == manifest["n_users"]

    def test_split_files_are_plain_ratings(self, corpus):
        first = (corpus / "prepared" / "train_r0.csv").read_text().splitlines()[0]
        assert first == "userId,movieId,rating,timestamp"

    def test_splits_partition_the_kept_ratings(self, corpus):
        kept = filter_sparse_users(load_ratings(corpus / "ratings.csv"), 5)
        train = load_ratings(corpus / "prepared" / "train_r0.csv")
        test = load_ratings(corpus / "prepared" / "test_r0.csv")
        key = lambda r: (r.user_id, r.item_id, r.rating)
        assert sorted(map(key, train + test)) == sorted(map(key, kept))
        assert len(train) >= len(test)

    def test_deterministic(self, corpus, tmp_path):
        again = tmp_path / "again"
        code = main(
            [
                "prepare",
                "--input",
                str(corpus / "ratings.csv"),
                "--output",
                str(again),
                "--repeats",
                "2",
                "--min-count",
                "5",
                "--seed",
                "3",
            ]
        )
        assert code == 0
        for name in ("train_r0.csv", "test_r1.csv", "idmap.json"):
            assert (again / name).read_bytes() == (
                corpus / "prepared" / name
            ).read_bytes()

    def test_bad_repeats_is_usage_error(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(
                [
                    "prepare",
                    "--input",
                    str(corpus / "ratings.csv"),
                    "--output",
                    str(tmp_path / "x"),
                    "--repeats",
                    "0",
                ]
            )
        assert err.value.code == 2


class TestTrain:
    def test_outputs_exist(self, corpus):
        trained = corpus / "trained"
        for name in ("model.npz", "training_log.csv", "training_curves.png", "manifest.json"):
            assert (trained / name).is_file()

    def test_training_log(self, corpus):
        header, rows = read_table(corpus / "trained" / "training_log.csv")
        assert header == ["iteration", "loss", "param_delta", "seconds", "stop_reason"]
        assert [r[0] for r in rows] == ["1", "2"]
        assert all(r[4] == "max_iters" for r in rows)

    def test_checkpoint_meta_and_shapes(self, corpus):
        model, meta = load_checkpoint(corpus / "trained" / "model.npz")
        with open(corpus / "prepared" / "idmap.json", encoding="utf-8") as fh:
            idmap = json.load(fh)
        assert meta["user_ids"] == idmap["users"]
        assert meta["item_ids"] == idmap["items"]
        assert meta["n_factors"] == 3
        assert meta["algorithm"] == "fast-relu"
        assert meta["iterations"] == 2
        assert meta["lr"] == 0.01
        assert model.user_factors.shape == (len(idmap["users"]), 3)
        assert model.item_factors.shape == (len(idmap["items"]), 3)

    def test_manifest(self, corpus):
        manifest = read_manifest(corpus / "trained")
        assert manifest["command"] == "train"
        assert manifest["iterations"] == 2
        assert manifest["stop_reason"] == "max_iters"
        assert manifest["config"]["k"] == 3
        assert manifest["config"]["algorithm"] == "fast-relu"
        assert set(manifest["outputs"]) == {
            "model.npz",
            "training_log.csv",
            "training_curves.png",
        }

    def test_fast_with_sigmoid_is_usage_error(self, corpus, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(
                [
                    "train",
                    "--input",
                    str(corpus / "prepared" / "train_r0.csv"),
                    "--output",
                    str(tmp_path / "x"),
                    "--smoothing",
                    "sigmoid",
                ]
            )
        assert err.value.code == 2

    def test_generic_sigmoid_runs(self, corpus, tmp_path):
        out = tmp_path / "sig"
        code = main(
            [
                "train",
                "--input",
                str(corpus / "prepared" / "train_r0.csv"),
                "--output",
                str(out),
                "--smoothing",
                "sigmoid",
                "--algorithm",
                "generic",
                "--k",
                "2",
                "--max-iters",
                "1",
                "--epsilon",
                "0",
            ]
        )
        assert code == 0
        _, meta = load_checkpoint(out / "model.npz")
        assert meta["smoothing"] == "sigmoid"
        assert meta["sigmoid_c"] == 7.0
        assert meta["lr"] == 0.05  # sigmoid default step size

    def test_missing_input_is_io_error(self, corpus, tmp_path, capsys):
        code = main(
            [
                "train",
                "--input",
                str(tmp_path / "nope.csv"),
                "--output",
                str(tmp_path / "x"),
            ]
        )
        assert code == 3
        assert "error:" in capsys.readouterr().err

    def test_malformed_input_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("userId,movieId,rating\n1,2,three\n", encoding="utf-8")
        code = main(
            ["train", "--input", str(bad), "--output", str(tmp_path / "x")]
        )
        assert code == 4
        assert "error:" in capsys.readouterr().err

    def test_divergence_exit_code(self, corpus, tmp_path, capsys):
        code = main(
            [
                "train",
                "--input",
                str(corpus / "prepared" / "train_r0.csv"),
                "--output",
                str(tmp_path / "x"),
                "--lr",
                "1e9",
                "--batch-frac",
                "1.0",
                "--max-iters",
                "5",
            ]
        )
        assert code == 5
        assert "iteration" in capsys.readouterr().err


class TestEvaluate:
    def test_metrics_match_library(self, corpus, tmp_path):
        out = tmp_path / "eval"
        code = main(
            [
                "evaluate",
                "--model",
                str(corpus / "trained" / "model.npz"),
                "--input",
                str(corpus / "prepared" / "test_r0.csv"),
                "--output",
                str(out),
                "--cutoffs",
                "1,5",
            ]
        )
        assert code == 0
        header, rows = read_table(out / "metrics.csv")
        assert header == ["cutoff", "mean_ndcg", "n_users", "n_excluded"]
        assert (out / "metrics.png").is_file()

        model, meta = load_checkpoint(corpus / "trained" / "model.npz")
        user_index = {uid: u for u, uid in enumerate(meta["user_ids"])}
        item_index = {iid: i for i, iid in enumerate(meta["item_ids"])}
        groups = implicit_user_groups(
            load_ratings(corpus / "prepared" / "test_r0.csv"),
            user_index,
            item_index,
            float(meta["threshold"]),
        )
        expect = ndcg_report(model, groups, (1, 5))
        for row, n in zip(rows, (1, 5)):
            assert int(row[0]) == n
            assert float(row[1]) == pytest.approx(expect.means[n], abs=1e-12)
            assert int(row[2]) == expect.n_included
            assert int(row[3]) == expect.n_excluded

    def test_bad_cutoffs_is_data_error(self, corpus, tmp_path, capsys):
        code = main(
            [
                "evaluate",
                "--model",
                str(corpus / "trained" / "model.npz"),
                "--input",
                str(corpus / "prepared" / "test_r0.csv"),
                "--output",
                str(tmp_path / "x"),
                "--cutoffs",
                "0,5",
            ]
        )
        assert code == 4
        assert "cutoff" in capsys.readouterr().err

    def test_missing_model_is_io_error(self, corpus, tmp_path):
        code = main(
            [
                "evaluate",
                "--model",
                str(tmp_path / "absent.npz"),
                "--input",
                str(corpus / "prepared" / "test_r0.csv"),
                "--output",
                str(tmp_path / "x"),
            ]
        )
        assert code == 3


class TestAblation:
    def test_grid_outputs(self, corpus, tmp_path, capsys):
        out = tmp_path / "grid"
        code = main(
            [
                "ablation",
                "--input",
                str(corpus / "ratings.csv"),
                "--output",
                str(out),
                "--repeats",
                "1",
                "--max-iters",
                "1",
                "--k",
                "2",
                "--min-count",
                "5",
                "--batch-frac",
                "1.0",
            ]
        )
        assert code == 0
        header, rows = read_table(out / "ablation.csv")
        assert header == ["variant", "cutoff", "mean_ndcg", "std_ndcg"]
        assert len(rows) == 4 * 5  # four variants, five default cutoffs
        variants = {r[0] for r in rows}
        assert variants == {
            "Top-N-Rank.ReLU",
            "non-Top-N.ReLU",
            "Top-N-Rank.sgm",
            "non-Top-N.sgm",
        }
        _, split_rows = read_table(out / "ablation_splits.csv")
        assert len(split_rows) == 4 * 1 * 5
        assert (out / "ablation.png").is_file()
        manifest = read_manifest(out)
        assert set(manifest["splits_won"]) == {"non-Top-N.ReLU", "Top-N-Rank.sgm"}
        for won in manifest["splits_won"].values():
            assert 0 <= won <= 1
        stdout = capsys.readouterr().out
        assert "Top-N-Rank.ReLU >= non-Top-N.ReLU on" in stdout


class TestBenchmark:
    def test_tiny_run(self, tmp_path):
        out = tmp_path / "bench"
        code = main(
            [
                "benchmark",
                "--output",
                str(out),
                "--sizes",
                "8,16",
                "--n-users",
                "2",
                "--trials",
                "1",
            ]
        )
        assert code == 0
        header, rows = read_table(out / "benchmark.csv")
        assert header[0] == "algorithm"
        assert len(rows) == 4
        _, ratio_rows = read_table(out / "benchmark_ratios.csv")
        assert {r[0] for r in ratio_rows} == {"fast-relu", "generic"}
        assert (out / "benchmark.png").is_file()


class TestResolver:
    def test_flag_beats_config_beats_default(self, corpus, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"max_iters": 3, "k": 2}), encoding="utf-8")
        out = tmp_path / "resolved"
        code = main(
            [
                "train",
                "--input",
                str(corpus / "prepared" / "train_r0.csv"),
                "--output",
                str(out),
                "--config",
                str(cfg),
                "--max-iters",
                "1",
                "--epsilon",
                "0",
            ]
        )
        assert code == 0
        manifest = read_manifest(out)
        assert manifest["config"]["max_iters"] == 1  # flag wins
        assert manifest["config"]["k"] == 2  # config file wins
        assert manifest["config"]["epsilon"] == 0.0
        assert manifest["config"]["batch_frac"] == DEFAULTS["batch_frac"]
        _, rows = read_table(out / "training_log.csv")
        assert len(rows) == 1

    def test_non_object_config_rejected(self, corpus, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]", encoding="utf-8")
        code = main(
            [
                "train",
                "--input",
                str(corpus / "prepared" / "train_r0.csv"),
                "--output",
                str(tmp_path / "x"),
                "--config",
                str(cfg),
            ]
        )
        assert code == 4

    def test_missing_config_is_io_error(self, corpus, tmp_path):
        code = main(
            [
                "train",
                "--input",
                str(corpus / "prepared" / "train_r0.csv"),
                "--output",
                str(tmp_path / "x"),
                "--config",
                str(tmp_path / "absent.json"),
            ]
        )
        assert code == 3


class TestParsing:
    def test_parse_int_list(self):
        assert parse_int_list("1,3,5", "cutoff") == [1, 3, 5]
        with pytest.raises(ValueError):
            parse_int_list("1,zero", "cutoff")
        with pytest.raises(ValueError):
            parse_int_list("0,5", "cutoff")
        with pytest.raises(ValueError):
            parse_int_list("", "cutoff")

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["train", "--frobnicate"])
        assert err.value.code == 2

    def test_missing_command_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["--version"])
        assert err.value.code == 0
        assert capsys.readouterr().out.strip()
