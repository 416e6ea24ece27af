import json
from pathlib import Path

import pytest

from nbdistill.cli import main as cli_main
from nbdistill.metrics import corpus_bleu, corpus_stats
from nbdistill.mira import MiraConfig
from nbdistill.pipeline import (
    HookError,
    IterationState,
    PipelineConfig,
    best_iteration,
    read_ledger,
    run_iteration,
    run_selftrain,
    status_table,
    stopping_reason,
)
from synth import build_pipeline_fixtures


def state(i, bleu):
    return IterationState(i, bleu, f"w{i}", f"l{i}", "t0", "t1", {})


def minimal_config(tmp_path, **overrides):
    for name in ("tune", "dev", "transfer"):
        (tmp_path / f"{name}.src").write_text("a\n")
    for name in ("tune", "dev"):
        (tmp_path / f"{name}.ref").write_text("a\n")
    kwargs = dict(
        workdir=tmp_path / "work",
        tune_src=tmp_path / "tune.src",
        tune_refs=(tmp_path / "tune.ref",),
        dev_src=tmp_path / "dev.src",
        dev_refs=(tmp_path / "dev.ref",),
        transfer_src=tmp_path / "transfer.src",
        hooks={"generate_nbest": "true"},
        passthrough=("total",),
    )
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


class TestConfig:
    def test_ini_and_json_parse_identically(self, tmp_path):
        ini = build_pipeline_fixtures(tmp_path / "a")
        from_ini = PipelineConfig.from_file(ini)
        sections = {
            "pipeline": {
                "workdir": "work",
                "iterations_max": 3,
                "min_delta": 0.1,
                "top_k_models": 2,
            },
            "data": {
                "tune_src": "tune.src",
                "tune_refs": ["tune.ref"],
                "dev_src": "dev.src",
                "dev_refs": "dev.ref",
                "transfer_src": "transfer.src",
            },
            "features": {
                "passthrough": "total",
                "native": ["mbr_bleu", "len_ratio"],
                "external": "lm",
            },
            "hooks": {
                "generate_nbest": from_ini.hooks["generate_nbest"],
                "score_lm": from_ini.hooks["score_lm"],
            },
            "mira": {"c": 0.01, "epochs": 4, "seed": 0},
        }
        json_path = tmp_path / "a" / "selftrain.json"
        json_path.write_text(json.dumps(sections))
        from_json = PipelineConfig.from_file(json_path)
        assert from_json == from_ini

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"pipeline": {"workdir": "w"}}))
        with pytest.raises(ValueError, match="data.tune_src"):
            PipelineConfig.from_file(path)

    def test_missing_score_hook_rejected_before_execution(self, tmp_path):
        config = minimal_config(tmp_path, external=("lm",))
        with pytest.raises(ValueError, match="missing hook 'score_lm'"):
            config.validate()

    def test_missing_generate_hook(self, tmp_path):
        config = minimal_config(tmp_path, hooks={})
        with pytest.raises(ValueError, match="generate_nbest"):
            config.validate()

    def test_iterations_max_zero_is_config_error(self, tmp_path):
        config = minimal_config(tmp_path, iterations_max=0)
        with pytest.raises(ValueError, match="iterations_max"):
            config.validate()

    def test_zero_features_rejected(self, tmp_path):
        config = minimal_config(tmp_path, passthrough=())
        with pytest.raises(ValueError, match="features"):
            config.validate()

    def test_missing_data_file(self, tmp_path):
        config = minimal_config(tmp_path)
        (tmp_path / "dev.src").unlink()
        with pytest.raises(ValueError, match="dev_src"):
            config.validate()


class TestStoppingRule:
    def test_small_delta_converges(self):
        config = _cfg(min_delta=0.1, iterations_max=5)
        assert stopping_reason([state(1, 50.0)], config) is None
        assert stopping_reason([state(1, 50.0), state(2, 50.05)], config) == "converged"

    def test_large_delta_continues_to_cap(self):
        config = _cfg(min_delta=0.1, iterations_max=3)
        states = [state(1, 50.0), state(2, 51.0), state(3, 52.0)]
        assert stopping_reason(states[:2], config) is None
        assert stopping_reason(states, config) == "max_iterations"

    def test_regression_converges(self):
        config = _cfg(min_delta=0.0, iterations_max=5)
        assert stopping_reason([state(1, 50.0), state(2, 49.0)], config) == "converged"

    def test_best_iteration_tie_goes_earliest(self):
        states = [state(1, 50.0), state(2, 50.0), state(3, 49.0)]
        assert best_iteration(states).iter == 1


def _cfg(min_delta, iterations_max):
    # stopping_reason only reads these two fields
    class _C:
        pass

    c = _C()
    c.min_delta = min_delta
    c.iterations_max = iterations_max
    return c


class TestRunIteration:
    def test_completes_and_matches_independent_evaluation(self, tmp_path, capsys):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path))
        config.validate()
        state = run_iteration(config)
        assert state.iter == 1
        assert Path(state.weights_path).is_file()
        assert Path(state.labels_path).is_file()
        assert set(state.hook_statuses.values()) == {0}

        # dev BLEU must equal what the evaluate CLI reports for the persisted
        # dev selections against the dev references
        itdir = Path(config.workdir) / "iter1"
        selections = [
            line.split("\t", 2)[2]
            for line in (itdir / "selections.dev.tsv").read_text().splitlines()
        ]
        hyp_file = tmp_path / "dev.hyp"
        hyp_file.write_text("".join(t + "\n" for t in selections))
        assert (
            cli_main(
                ["evaluate", "--hyp", str(hyp_file), "--refs", str(tmp_path / "dev.ref")]
            )
            == 0
        )
        reported = capsys.readouterr().out.splitlines()[0]
        assert reported == f"BLEU\t{state.dev_bleu:.4f}"

    def test_all_stage_markers_present(self, tmp_path):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path))
        run_iteration(config)
        itdir = Path(config.workdir) / "iter1"
        for stage in (
            "generate_nbest",
            "scores",
            "assemble",
            "tune",
            "select",
            "distill",
            "evaluate",
        ):
            assert (itdir / f".{stage}.done").exists()

    def test_failing_hook_names_stage(self, tmp_path):
        marker = tmp_path / "crash"
        config = PipelineConfig.from_file(
            build_pipeline_fixtures(tmp_path, fail_marker=marker)
        )
        marker.touch()
        with pytest.raises(HookError, match=r"stage score_lm\[tune\]"):
            run_iteration(config)

    def test_rerun_returns_ledger_entry(self, tmp_path):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path))
        first = run_iteration(config)
        again = run_iteration(config)
        assert again == first
        assert len(read_ledger(Path(config.workdir) / "ledger.jsonl")) == 1


class TestSelfTrain:
    def test_three_iterations_to_cap(self, tmp_path):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path))
        best, reason = run_selftrain(config)
        states = read_ledger(Path(config.workdir) / "ledger.jsonl")
        assert reason == "max_iterations"
        assert [s.iter for s in states] == [1, 2, 3]
        # dev quality rises sharply with the iteration fixtures
        assert states[2].dev_bleu > states[1].dev_bleu > states[0].dev_bleu
        assert best.iter == 3
        final = Path(config.workdir) / "final.labels.tsv"
        assert final.read_bytes() == Path(best.labels_path).read_bytes()
        summary = json.loads((Path(config.workdir) / "final.json").read_text())
        assert summary["best_iteration"] == 3
        assert summary["stop_reason"] == "max_iterations"

    def test_iterations_max_one(self, tmp_path):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path, iterations=1))
        best, reason = run_selftrain(config)
        assert reason == "max_iterations"
        assert best.iter == 1
        assert len(read_ledger(Path(config.workdir) / "ledger.jsonl")) == 1

    def test_converged_via_preseeded_dev_bleu(self, tmp_path):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path))
        workdir = Path(config.workdir)
        for it, bleu in ((1, 50.0), (2, 50.05), (3, 99.0)):
            itdir = workdir / f"iter{it}"
            itdir.mkdir(parents=True, exist_ok=True)
            (itdir / "dev_bleu.txt").write_text(repr(bleu) + "\n")
            (itdir / ".evaluate.done").touch()
        best, reason = run_selftrain(config)
        assert reason == "converged"
        states = read_ledger(workdir / "ledger.jsonl")
        assert [s.iter for s in states] == [1, 2]
        assert [s.dev_bleu for s in states] == [50.0, 50.05]
        # final labels come from the argmax-dev iteration, here iteration 2
        assert best.iter == 2
        final = workdir / "final.labels.tsv"
        assert final.read_bytes() == Path(states[1].labels_path).read_bytes()

    def test_resume_after_crash_is_byte_identical(self, tmp_path):
        marker = tmp_path / "crash"
        crash_config = PipelineConfig.from_file(
            build_pipeline_fixtures(tmp_path / "crashed", fail_marker=marker)
        )
        clean_config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path / "clean"))

        marker.touch()
        with pytest.raises(HookError):
            run_selftrain(crash_config)
        crash_work = Path(crash_config.workdir)
        assert (crash_work / "iter1" / ".generate_nbest.done").exists()
        assert not (crash_work / "iter1" / ".scores.done").exists()

        marker.unlink()
        best_crash, reason_crash = run_selftrain(crash_config)
        best_clean, reason_clean = run_selftrain(clean_config)
        assert reason_crash == reason_clean
        assert best_crash.iter == best_clean.iter
        assert (
            (crash_work / "final.labels.tsv").read_bytes()
            == (Path(clean_config.workdir) / "final.labels.tsv").read_bytes()
        )
        for it in (1, 2, 3):
            a = crash_work / f"iter{it}" / "weights.tsv"
            b = Path(clean_config.workdir) / f"iter{it}" / "weights.tsv"
            assert a.read_bytes() == b.read_bytes()

    def test_rerun_on_finished_workdir_is_stable(self, tmp_path):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path))
        run_selftrain(config)
        ledger_before = (Path(config.workdir) / "ledger.jsonl").read_bytes()
        best, reason = run_selftrain(config)
        assert (Path(config.workdir) / "ledger.jsonl").read_bytes() == ledger_before
        assert reason == "max_iterations"


class TestStatus:
    def test_table_lists_iterations(self, tmp_path):
        config = PipelineConfig.from_file(build_pipeline_fixtures(tmp_path, iterations=1))
        run_selftrain(config)
        table = status_table(config.workdir)
        lines = table.splitlines()
        assert lines[0].split()[:2] == ["iter", "dev_bleu"]
        assert lines[1].startswith("1")

    def test_empty_workdir(self, tmp_path):
        assert "no iterations" in status_table(tmp_path)


class TestLedgerValidation:
    def test_rejects_non_contiguous_indices(self, tmp_path):
        ledger = tmp_path / "ledger.jsonl"
        entry = json.dumps(
            {
                "iter": 2,
                "dev_bleu": 1.0,
                "weights_path": "w",
                "labels_path": "l",
                "started": "t",
                "finished": "t",
                "hook_statuses": {},
            }
        )
        ledger.write_text(entry + "\n")
        with pytest.raises(ValueError, match="indices"):
            read_ledger(ledger)

    def test_rejects_garbage_line(self, tmp_path):
        ledger = tmp_path / "ledger.jsonl"
        ledger.write_text("{not json\n")
        with pytest.raises(ValueError, match="bad ledger entry"):
            read_ledger(ledger)


class TestSelfTrainCli:
    def test_selftrain_and_status_commands(self, tmp_path, capsys):
        config_path = build_pipeline_fixtures(tmp_path, iterations=1)
        assert cli_main(["selftrain", "--config", str(config_path)]) == 0
        out = capsys.readouterr().out
        assert "stop_reason\tmax_iterations" in out
        assert "best_iteration\t1" in out
        workdir = tmp_path / "work"
        assert cli_main(["status", "--workdir", str(workdir)]) == 0
        table = capsys.readouterr().out
        assert table.splitlines()[0].startswith("iter")
        # re-running resumes off the ledger without re-executing hooks
        assert cli_main(["selftrain", "--config", str(config_path), "--resume"]) == 0
