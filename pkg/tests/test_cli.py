import json
import shutil

import pytest

from conftest import DATA_DIR, FIXTURE_MODEL, build_annotation_replay, fixture_generation_config
from negnet.cli import main
from negnet.codebook import Subtask, assemble_prompt, load_codebook
from negnet.corpus import ingest_dir, parse_report
from negnet.gateway import ReplayStore
from negnet.topics import TOPIC_NAME_PROMPT, TOPIC_WORD_PROMPT, TopicSpace
from test_pipeline import EXPECTED_FIXTURE_SET, run_rows_to_set


@pytest.fixture()
def workspace(tmp_path, fixture_codebook, fixture_reports):
    corpus = tmp_path / "corpus"
    shutil.copytree(DATA_DIR / "corpus", corpus)
    codebook = tmp_path / "codebook.txt"
    codebook.write_text((DATA_DIR / "codebook.txt").read_text())
    replay = tmp_path / "replay.rpl"
    build_annotation_replay(fixture_codebook, fixture_reports).save(replay)
    return tmp_path


def annotate_args(ws, output):
    return [
        "annotate",
        "--input", str(ws / "corpus"),
        "--codebook", str(ws / "codebook.txt"),
        "--mode", "data-scarce",
        "--examples", "ex-rel-1,ex-attr-1",
        "--framework", "UNFCCC",
        "--replay", str(ws / "replay.rpl"),
        "--model", FIXTURE_MODEL,
        "--output", str(output),
    ]


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


class TestAnnotateCommand:
    def test_three_runs_byte_identical(self, workspace):
        outputs = []
        for i in range(3):
            out = workspace / f"run{i}.jsonl"
            assert main(annotate_args(workspace, out)) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_interactions_match_hand_derived_expectation(self, workspace):
        out = workspace / "run.jsonl"
        assert main(annotate_args(workspace, out)) == 0
        assert run_rows_to_set(read_jsonl(out)) == EXPECTED_FIXTURE_SET

    def test_manifest_and_audit_written(self, workspace):
        out = workspace / "run.jsonl"
        assert main(annotate_args(workspace, out)) == 0
        manifest = json.loads((workspace / "run.jsonl.manifest.json").read_text())
        assert manifest["command"] == "annotate"
        assert manifest["config_hash"]
        assert manifest["replay_fingerprints"]
        assert manifest["paragraphs"] == 3
        assert manifest["presence_true"] == 2
        audit = read_jsonl(workspace / "run.jsonl.audit.jsonl")
        assert len(audit) == 3
        assert all("raw_responses" in row for row in audit)

    def test_data_scarce_without_examples_is_usage_error(self, workspace, capsys):
        args = annotate_args(workspace, workspace / "x.jsonl")
        index = args.index("--examples")
        del args[index : index + 2]
        assert main(args) == 2
        assert "example" in capsys.readouterr().err

    def test_missing_codebook_is_usage_error(self, workspace):
        args = annotate_args(workspace, workspace / "x.jsonl")
        args[args.index("--codebook") + 1] = str(workspace / "nope.txt")
        assert main(args) == 2

    def test_record_with_replay_is_usage_error(self, workspace):
        args = annotate_args(workspace, workspace / "x.jsonl")
        args += ["--record", str(workspace / "rec.rpl")]
        assert main(args) == 2

    def test_unknown_flag_exits_2(self, workspace):
        with pytest.raises(SystemExit) as err:
            main(["annotate", "--nonsense"])
        assert err.value.code == 2

    def test_failed_run_writes_no_partial_output(self, workspace):
        out = workspace / "x.jsonl"
        args = annotate_args(workspace, out)
        args[args.index("--codebook") + 1] = str(workspace / "nope.txt")
        assert main(args) == 2
        assert not out.exists()


class TestAuditRulesCommand:
    def test_closed_fixture_is_fully_compliant(self, workspace, capsys):
        out = workspace / "run.jsonl"
        main(annotate_args(workspace, out))
        assert main(["audit-rules", str(out)]) == 0
        output = capsys.readouterr().out
        assert "100.00 / 100.00 / 100.00" in output
        assert "bidirectionality: 100.00" in output

    def test_open_set_reports_partial(self, workspace, capsys):
        partial = workspace / "partial.jsonl"
        partial.write_text(
            json.dumps(
                {
                    "run_id": "x",
                    "report_id": "r",
                    "paragraph_index": 0,
                    "party1": "A",
                    "party2": "B",
                    "relation": "Agreement",
                    "topic": None,
                    "derived": "stated",
                    "out_of_space_flags": [],
                    "model_id": "m",
                }
            )
            + "\n"
        )
        assert main(["audit-rules", str(partial)]) == 0
        assert "50.00" in capsys.readouterr().out


class TestExportAndStats:
    def _annotate(self, workspace):
        out = workspace / "run.jsonl"
        main(annotate_args(workspace, out))
        return out

    def test_export_csv(self, workspace, capsys):
        annotations = self._annotate(workspace)
        out = workspace / "data.csv"
        code = main(
            [
                "export",
                "--annotations", str(annotations),
                "--input", str(workspace / "corpus"),
                "--format", "csv",
                "--output", str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "date,meeting,party1,party2,relation,topic,derived"
        assert len(lines) == 8  # header + 7 interactions

    def test_export_jsonl_then_stats(self, workspace, capsys):
        annotations = self._annotate(workspace)
        data = workspace / "data.jsonl"
        assert (
            main(
                [
                    "export",
                    "--annotations", str(annotations),
                    "--input", str(workspace / "corpus"),
                    "--format", "jsonl",
                    "--output", str(data),
                ]
            )
            == 0
        )
        capsys.readouterr()
        code = main(
            [
                "stats",
                "--dataset", str(data),
                "--input", str(workspace / "corpus"),
                "--framework", "UNFCCC",
                "--by-year",
            ]
        )
        assert code == 0
        output = capsys.readouterr().out
        assert "interactions: 7" in output
        assert "Agreement: 4" in output
        assert "Support: 3" in output
        assert "t001: 4" in output
        assert "correlation: undefined" in output  # single year

    def test_stats_stated_only(self, workspace, capsys):
        annotations = self._annotate(workspace)
        data = workspace / "data.jsonl"
        main(
            [
                "export",
                "--annotations", str(annotations),
                "--input", str(workspace / "corpus"),
                "--format", "jsonl",
                "--output", str(data),
            ]
        )
        capsys.readouterr()
        assert main(["stats", "--dataset", str(data), "--stated-only"]) == 0
        assert "interactions: 5" in capsys.readouterr().out


class TestEvaluateCommand:
    def test_self_evaluation_is_perfect(self, workspace, capsys):
        out = workspace / "run.jsonl"
        main(annotate_args(workspace, out))
        report_path = workspace / "report.json"
        code = main(
            ["evaluate", "--pred", str(out), "--gold", str(out), "--output", str(report_path)]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "precision   100.0" in text
        assert "recall      100.0" in text
        report = json.loads(report_path.read_text())
        assert report["precision"] == 1.0
        assert report["accuracy"] == 1.0


class TestPrepareFinetune:
    def test_pairs_round_trip_to_gold(self, workspace):
        annotations = workspace / "run.jsonl"
        main(annotate_args(workspace, annotations))
        pairs_path = workspace / "pairs.jsonl"
        code = main(
            [
                "prepare-finetune",
                "--train", str(annotations),
                "--input", str(workspace / "corpus"),
                "--framework", "UNFCCC",
                "--codebook", str(workspace / "codebook.txt"),
                "--output", str(pairs_path),
            ]
        )
        assert code == 0
        pairs = read_jsonl(pairs_path)
        # 3 paragraphs -> 3 presence pairs; 2 with interactions -> 2 relation pairs
        assert len(pairs) == 5
        assert all(set(p) >= {"instruction", "output", "subtask"} for p in pairs)

        gold = read_jsonl(annotations)
        by_paragraph = {}
        for row in gold:
            key = (row["report_id"], row["paragraph_index"])
            by_paragraph.setdefault(key, set()).add(
                (row["party1"], row["party2"], row["relation"])
            )
        relation_pairs = [p for p in pairs if p["subtask"] == "relation"]
        assert len(relation_pairs) == 2
        recovered = [
            {(r["Party1"], r["Party2"], r["Relation"]) for r in json.loads(p["output"])}
            for p in relation_pairs
        ]
        assert sorted(map(sorted, recovered)) == sorted(
            map(sorted, by_paragraph.values())
        )
        presence_outputs = [p["output"] for p in pairs if p["subtask"] == "presence"]
        assert sorted(presence_outputs) == ["No", "Yes", "Yes"]

    def test_outputs_parse_under_the_pipeline_parser(self, workspace):
        from negnet.pipeline import _parse_json_records

        annotations = workspace / "run.jsonl"
        main(annotate_args(workspace, annotations))
        pairs_path = workspace / "pairs.jsonl"
        main(
            [
                "prepare-finetune",
                "--train", str(annotations),
                "--input", str(workspace / "corpus"),
                "--framework", "UNFCCC",
                "--codebook", str(workspace / "codebook.txt"),
                "--output", str(pairs_path),
            ]
        )
        for pair in read_jsonl(pairs_path):
            if pair["subtask"] == "relation":
                rows = _parse_json_records(pair["output"])
                assert rows is not None
                assert all({"Party1", "Party2", "Relation"} <= set(r) for r in rows)

    def test_instructions_carry_no_examples_section(self, workspace):
        annotations = workspace / "run.jsonl"
        main(annotate_args(workspace, annotations))
        pairs_path = workspace / "pairs.jsonl"
        main(
            [
                "prepare-finetune",
                "--train", str(annotations),
                "--input", str(workspace / "corpus"),
                "--framework", "UNFCCC",
                "--codebook", str(workspace / "codebook.txt"),
                "--output", str(pairs_path),
            ]
        )
        for pair in read_jsonl(pairs_path):
            assert "### Examples" not in pair["instruction"]


class TestIngestCommand:
    def test_ingest_prints_stats_and_writes_corpus(self, workspace, capsys):
        out = workspace / "corpus.jsonl"
        code = main(
            [
                "ingest",
                "--input", str(workspace / "corpus"),
                "--framework", "UNFCCC",
                "--output", str(out),
            ]
        )
        assert code == 0
        output = capsys.readouterr().out
        assert "reports: 2" in output
        rows = read_jsonl(out)
        assert [r["report_id"] for r in rows] == ["enb-1995-02-07", "enb-1995-02-10-summary"]
        assert (workspace / "corpus.jsonl.manifest.json").exists()

    def test_missing_input_dir(self, workspace):
        assert main(["ingest", "--input", str(workspace / "missing")]) == 2


class TestTopicsCommands:
    BASE_EMBEDDINGS = {
        "emissions": (1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        "mitigation": (0.8, 0.6, 0.0, 0.0, 0.0, 0.0),
        "finance": (0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        "funding": (0.0, 0.0, 0.8, 0.6, 0.0, 0.0),
    }

    def _build_replay(self, fixture_reports, path):
        store = ReplayStore()
        summary = next(r for r in fixture_reports if r.kind.value == "summary")
        store.add_completion(
            TOPIC_WORD_PROMPT.format(body=summary.body),
            fixture_generation_config(),
            "Emissions, Mitigation, Finance, Funding",
        )
        for word, vector in self.BASE_EMBEDDINGS.items():
            store.add_embedding(word, vector)
        store.add_completion(
            TOPIC_NAME_PROMPT.format(words="emissions, mitigation"),
            fixture_generation_config(),
            "Name: Emissions\nDescription: Cutting greenhouse gases.",
        )
        store.add_completion(
            TOPIC_NAME_PROMPT.format(words="finance, funding"),
            fixture_generation_config(),
            "Name: Finance\nDescription: Money for climate action.",
        )
        store.save(path)

    def test_build_and_revise(self, workspace, fixture_reports, capsys):
        replay = workspace / "topics.rpl"
        self._build_replay(fixture_reports, replay)
        space_path = workspace / "topics.json"
        code = main(
            [
                "topics", "build",
                "--input", str(workspace / "corpus"),
                "--framework", "UNFCCC",
                "--replay", str(replay),
                "--model", FIXTURE_MODEL,
                "--k", "2",
                "--seed", "1",
                "--output", str(space_path),
            ]
        )
        assert code == 0
        space = TopicSpace.load(space_path)
        assert len(space.topics) == 2
        assert space.version == 1
        assert {t.name for t in space.topics} == {"Emissions", "Finance"}

        revised_path = workspace / "topics-v1r.json"
        code = main(
            [
                "topics", "revise", space.topics[0].topic_id,
                "--space", str(space_path),
                "--name", "Emissions and Removals",
                "--output", str(revised_path),
            ]
        )
        assert code == 0
        revised = TopicSpace.load(revised_path)
        assert revised.topics[0].human_revised is True
        assert revised.topics[0].name == "Emissions and Removals"

    def test_build_deterministic(self, workspace, fixture_reports):
        replay = workspace / "topics.rpl"
        self._build_replay(fixture_reports, replay)
        outs = []
        for i in range(2):
            path = workspace / f"topics{i}.json"
            main(
                [
                    "topics", "build",
                    "--input", str(workspace / "corpus"),
                    "--framework", "UNFCCC",
                    "--replay", str(replay),
                    "--model", FIXTURE_MODEL,
                    "--k", "2",
                    "--seed", "1",
                    "--output", str(path),
                ]
            )
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
