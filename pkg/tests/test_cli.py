"""End-to-end checks for the command-line interface."""

import io
import json
import subprocess
import sys

import pytest

from sketchvlm import cli
from sketchvlm.geometry import sketch_from_dict
from sketchvlm.tokens import encode_constraints, encode_primitives, tokens_to_line


@pytest.fixture(scope="module")
def corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "all.jsonl"
    assert cli.main(["synth", "--n", "8", "--seed", "3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, corpus_path):
    """One tiny text-only completion model shared by checkpoint tests."""
    out = tmp_path_factory.mktemp("run")
    cfg = out / "cfg.json"
    cfg.write_text(
        json.dumps(
            {
                "model": {
                    "d_model": 16,
                    "n_heads": 2,
                    "enc_layers": 1,
                    "dec_layers": 1,
                    "max_text_len": 160,
                },
                "train": {"epochs": 1, "batch": 4, "lr0": 1e-3, "seed": 0},
            }
        )
    )
    rc = cli.main(
        [
            "train",
            "--task",
            "complete",
            "--corpus",
            str(corpus_path),
            "--out",
            str(out),
            "--config",
            str(cfg),
            "--no-split",
            "--no-image",
        ]
    )
    assert rc == 0
    return out


class TestExitCodes:
    def test_no_arguments_is_usage_error(self):
        assert cli.main([]) == 1

    def test_unknown_subcommand_is_usage_error(self):
        assert cli.main(["frobnicate"]) == 1

    def test_bad_choice_is_usage_error(self, corpus_path, tmp_path):
        args = ["render", "--in", str(corpus_path), "--out", str(tmp_path), "--mode", "wat"]
        assert cli.main(args) == 1

    def test_missing_required_flag_is_usage_error(self):
        assert cli.main(["synth"]) == 1

    def test_eval_with_no_input_form_is_usage_error(self):
        assert cli.main(["eval"]) == 1

    def test_eval_with_both_input_forms_is_usage_error(self, corpus_path):
        p = str(corpus_path)
        args = ["eval", "--pred", p, "--truth", p, "--ckpt", "x", "--corpus", p]
        assert cli.main(args) == 1

    def test_missing_input_file_is_data_error(self):
        assert cli.main(["tokenize", "--in", "/nonexistent/nope.jsonl"]) == 2

    def test_malformed_jsonl_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"entities": [\n')
        assert cli.main(["tokenize", "--in", str(bad)]) == 2

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0


class TestSynth:
    def test_stdout_stream_parses(self, capsys):
        assert cli.main(["synth", "--n", "5", "--seed", "0"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 5
        for line in lines:
            sketch_from_dict(json.loads(line))

    def test_same_seed_same_bytes(self, capsys):
        cli.main(["synth", "--n", "4", "--seed", "7"])
        first = capsys.readouterr().out
        cli.main(["synth", "--n", "4", "--seed", "7"])
        assert capsys.readouterr().out == first

    def test_out_file_and_json_summary(self, tmp_path, capsys):
        out = tmp_path / "c.jsonl"
        assert cli.main(["synth", "--n", "3", "--seed", "1", "--out", str(out), "--json"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary == {"n": 3, "seed": 1, "out": str(out)}
        assert len(out.read_text().strip().splitlines()) == 3


class TestIngest:
    def test_summary_counts_and_split_files(self, corpus_path, tmp_path, capsys):
        out = tmp_path / "splits"
        rc = cli.main(["ingest", "--in", str(corpus_path), "--out", str(out), "--json"])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["train"] + summary["val"] + summary["test"] == 8
        assert summary["skipped"] == 0
        for name in ("train", "val", "test"):
            assert (out / f"{name}.jsonl").exists()

    def test_bad_line_skipped_then_strict_fails(self, corpus_path, tmp_path, capsys):
        mixed = tmp_path / "mixed.jsonl"
        lines = corpus_path.read_text().strip().splitlines()
        mixed.write_text(lines[0] + "\nnot json\n" + lines[1] + "\n")
        assert cli.main(["ingest", "--in", str(mixed), "--json"]) == 0
        assert json.loads(capsys.readouterr().out)["skipped"] == 1
        assert cli.main(["ingest", "--in", str(mixed), "--strict"]) == 2


class TestTokenize:
    def test_lines_match_library_encoding(self, corpus_path, capsys):
        assert cli.main(["tokenize", "--in", str(corpus_path)]) == 0
        got = capsys.readouterr().out.strip().splitlines()
        sketches = [
            sketch_from_dict(json.loads(line))
            for line in corpus_path.read_text().strip().splitlines()
        ]
        want = [tokens_to_line(encode_primitives(s).tokens) for s in sketches]
        assert got == want

    def test_constraint_stream(self, corpus_path, capsys):
        rc = cli.main(["tokenize", "--in", str(corpus_path), "--stream", "constraint"])
        assert rc == 0
        got = capsys.readouterr().out.strip().splitlines()
        sketches = [
            sketch_from_dict(json.loads(line))
            for line in corpus_path.read_text().strip().splitlines()
        ]
        assert got == [tokens_to_line(encode_constraints(s).tokens) for s in sketches]

    def test_dash_reads_stdin(self, corpus_path, capsys, monkeypatch):
        monkeypatch.setattr(sys, "stdin", io.StringIO(corpus_path.read_text()))
        assert cli.main(["tokenize", "--in", "-"]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 8


class TestRender:
    def test_png_bytes_deterministic(self, corpus_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        base = ["render", "--in", str(corpus_path), "--mode", "hand", "--seed", "5"]
        assert cli.main(base + ["--out", str(a)]) == 0
        assert cli.main(base + ["--out", str(b)]) == 0
        names = sorted(p.name for p in a.glob("*.png"))
        assert len(names) == 8
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_jobs_flag_matches_serial_output(self, corpus_path, tmp_path):
        a, b = tmp_path / "serial", tmp_path / "parallel"
        base = ["render", "--in", str(corpus_path), "--seed", "0"]
        assert cli.main(base + ["--out", str(a)]) == 0
        assert cli.main(base + ["--out", str(b), "--jobs", "4"]) == 0
        for p in a.glob("*.png"):
            assert (b / p.name).read_bytes() == p.read_bytes()

    def test_env_var_supplies_output_dir(self, corpus_path, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
        assert cli.main(["render", "--in", str(corpus_path)]) == 0
        assert len(list((tmp_path / "envout").glob("*.png"))) == 8

    def test_no_out_dir_anywhere_is_usage_error(self, corpus_path, monkeypatch):
        monkeypatch.delenv(cli.OUT_ENV, raising=False)
        assert cli.main(["render", "--in", str(corpus_path)]) == 1


class TestExportSvg:
    def test_writes_svg_documents(self, corpus_path, tmp_path):
        out = tmp_path / "svg"
        rc = cli.main(["export-svg", "--in", str(corpus_path), "--out", str(out), "--jobs", "2"])
        assert rc == 0
        files = sorted(out.glob("*.svg"))
        assert len(files) == 8
        for f in files:
            assert f.read_text().startswith("<svg")


class TestTrainEval:
    def test_train_writes_log_and_checkpoint(self, trained_run, capsys):
        assert (trained_run / "metrics.jsonl").exists()
        assert (trained_run / "final" / "manifest.json").exists()
        records = [
            json.loads(line)
            for line in (trained_run / "metrics.jsonl").read_text().strip().splitlines()
        ]
        assert all(rec["itc"] is None for rec in records)
        assert all(rec["lm"] > 0 for rec in records)

    def test_eval_checkpoint_form(self, trained_run, corpus_path, capsys):
        rc = cli.main(
            [
                "eval",
                "--ckpt",
                str(trained_run / "final"),
                "--corpus",
                str(corpus_path),
                "--ratio",
                "0.4",
                "--json",
            ]
        )
        assert rc == 0
        scores = json.loads(capsys.readouterr().out)
        assert set(scores) == {"ske_acc", "ent_acc", "cad_f1", "n"}
        assert scores["n"] == 8

    def test_eval_pair_form_perfect_on_identity(self, corpus_path, capsys):
        p = str(corpus_path)
        assert cli.main(["eval", "--pred", p, "--truth", p, "--json"]) == 0
        scores = json.loads(capsys.readouterr().out)
        assert scores["ske_acc"] == 1.0
        assert scores["cad_f1"] == 1.0

    def test_eval_pair_constraint_task(self, corpus_path, capsys):
        p = str(corpus_path)
        rc = cli.main(["eval", "--pred", p, "--truth", p, "--task", "constrain", "--json"])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["ske_acc"] == 1.0

    def test_eval_mismatched_lengths_is_data_error(self, corpus_path, tmp_path):
        short = tmp_path / "short.jsonl"
        short.write_text(corpus_path.read_text().strip().splitlines()[0] + "\n")
        rc = cli.main(["eval", "--pred", str(short), "--truth", str(corpus_path)])
        assert rc == 2


class TestCompleteConstrain:
    def test_complete_writes_parseable_sketches(self, trained_run, corpus_path, tmp_path, capsys):
        out = tmp_path / "completed.jsonl"
        rc = cli.main(
            [
                "complete",
                "--ckpt",
                str(trained_run / "final"),
                "--in",
                str(corpus_path),
                "--out",
                str(out),
                "--json",
            ]
        )
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["completed"] == 8
        partials = [
            sketch_from_dict(json.loads(line))
            for line in corpus_path.read_text().strip().splitlines()
        ]
        for line, partial in zip(out.read_text().strip().splitlines(), partials):
            completed = sketch_from_dict(json.loads(line))
            assert completed.entities[: len(partial.entities)] == partial.entities

    def test_nucleus_samples_include_alternates(self, trained_run, corpus_path, tmp_path):
        out = tmp_path / "sampled.jsonl"
        rc = cli.main(
            [
                "complete",
                "--ckpt",
                str(trained_run / "final"),
                "--in",
                str(corpus_path),
                "--out",
                str(out),
                "--nucleus",
                "0.9",
                "--samples",
                "2",
                "--seed",
                "0",
            ]
        )
        assert rc == 0
        for line in out.read_text().strip().splitlines():
            record = json.loads(line)
            assert len(record["alternates"]) == 2
            sketch_from_dict(record)

    def test_complete_with_constrain_checkpoint_is_data_error(
        self, tmp_path_factory, corpus_path
    ):
        out = tmp_path_factory.mktemp("crun")
        cfg = out / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "model": {
                        "d_model": 16,
                        "n_heads": 2,
                        "enc_layers": 1,
                        "dec_layers": 1,
                        "max_text_len": 160,
                        "use_image": False,
                    },
                    "train": {"epochs": 1, "batch": 4, "seed": 0},
                }
            )
        )
        rc = cli.main(
            [
                "train",
                "--task",
                "constrain",
                "--corpus",
                str(corpus_path),
                "--out",
                str(out),
                "--config",
                str(cfg),
                "--no-split",
            ]
        )
        assert rc == 0
        ckpt = str(out / "final")
        assert cli.main(["complete", "--ckpt", ckpt, "--in", str(corpus_path)]) == 2

        constrained = out / "constrained.jsonl"
        rc = cli.main(
            ["constrain", "--ckpt", ckpt, "--in", str(corpus_path), "--out", str(constrained)]
        )
        assert rc == 0
        originals = [
            sketch_from_dict(json.loads(line))
            for line in corpus_path.read_text().strip().splitlines()
        ]
        for line, original in zip(
            constrained.read_text().strip().splitlines(), originals
        ):
            got = sketch_from_dict(json.loads(line))
            assert got.entities == original.entities


class TestModuleEntryPoint:
    def test_synth_pipes_into_tokenize(self):
        synth = subprocess.run(
            [sys.executable, "-m", "sketchvlm.cli", "synth", "--n", "2", "--seed", "4"],
            capture_output=True,
            text=True,
            check=True,
        )
        tok = subprocess.run(
            [sys.executable, "-m", "sketchvlm.cli", "tokenize", "--in", "-"],
            input=synth.stdout,
            capture_output=True,
            text=True,
            check=True,
        )
        lines = tok.stdout.strip().splitlines()
        assert len(lines) == 2
        assert all(w.isdigit() for line in lines for w in line.split())
