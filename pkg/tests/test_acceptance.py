"""Acceptance suite: one test per acceptance criterion, each printing a
PASS/FAIL line. Runs fully offline against recorded responses.

Run with: pytest tests/test_acceptance.py -v -s
"""

import itertools
import json
import random
import shutil
import time
from contextlib import contextmanager

import numpy as np
import pytest

import conftest
from closure_oracle import oracle_closure, random_instance, to_keys
from conftest import DATA_DIR, FIXTURE_MODEL, build_annotation_replay
from negnet.cli import main
from negnet.corpus import parse_report
from negnet.dataset import activity_degrees, build_dataset, yearly_distribution
from negnet.gateway import normalize_vector
from negnet.metrics import (
    MatchStatus,
    attribute_metrics,
    cohen_kappa,
    quote_to_paragraph,
    triplet_prf,
)
from negnet.model import Interaction, RelationType
from negnet.rules import Rule, audit_compliance, close_to_fixpoint
from negnet.topics import advance_stage, assign_or_create, build_base_space, kmeans
from test_metrics import oracle_attribute, oracle_kappa, oracle_prf
from test_pipeline import EXPECTED_FIXTURE_SET, run_rows_to_set
from test_topics import (
    STAGE2_REPORT,
    TOY_POINTS,
    _gateway,
    base_space,
    labels_to_partition,
    optimal_two_partition,
    staged_store,
    toy_store,
)


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE FAIL: {name}")
        raise
    print(f"\nACCEPTANCE PASS: {name}")


REF = ("r1", 0)


def make(head, tail, relation, topic=None, ref=REF):
    return Interaction(head, tail, relation, topic, ref)


def test_criterion_rule_closure_oracle_equivalence():
    with criterion(
        "rule closure equals brute-force oracle on 1000 random instances, "
        "idempotent and rule-order invariant, in under 10 s"
    ):
        rng = random.Random(20260809)
        permutations = list(itertools.permutations(Rule))
        start = time.monotonic()
        for case in range(1000):
            stated = random_instance(rng)
            closed = close_to_fixpoint(stated)
            assert to_keys(closed) == oracle_closure(stated), f"case {case}"
            assert to_keys(close_to_fixpoint(closed)) == to_keys(closed), f"case {case}"
            for order in permutations:
                assert to_keys(close_to_fixpoint(stated, rule_order=order)) == to_keys(closed)
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"took {elapsed:.2f}s"


def test_criterion_paper_example_fixtures():
    with criterion(
        "bidirectional pair, three-party transitivity, co-supporter derivation, "
        "and full compliance on closed fixtures reproduce exactly"
    ):
        # Samoa/EU bidirectional pair
        samoa = {make("Samoa", "EU", RelationType.AGREEMENT)}
        closed = close_to_fixpoint(samoa)
        assert to_keys(closed) == to_keys(
            samoa | {make("EU", "Samoa", RelationType.AGREEMENT)}
        )

        # Australia / New Zealand / Iceland complete to all six directed pairs
        chain = {
            make("Australia", "New Zealand", RelationType.AGREEMENT),
            make("New Zealand", "Australia", RelationType.AGREEMENT),
            make("New Zealand", "Iceland", RelationType.AGREEMENT),
            make("Iceland", "New Zealand", RelationType.AGREEMENT),
        }
        closed = close_to_fixpoint(chain)
        expected_pairs = {
            (a, b)
            for a in ("Australia", "New Zealand", "Iceland")
            for b in ("Australia", "New Zealand", "Iceland")
            if a != b
        }
        assert {(i.head, i.tail) for i in closed} == expected_pairs
        assert len(closed) == 6

        # co-supporters of the same target agree (4 final interactions)
        paragraph = {
            make("Saudi Arabia", "Philippines", RelationType.SUPPORT),
            make("Kuwait", "Philippines", RelationType.SUPPORT),
        }
        closed = close_to_fixpoint(paragraph)
        assert len(closed) == 4
        assert make("Saudi Arabia", "Kuwait", RelationType.AGREEMENT) in closed
        assert make("Kuwait", "Saudi Arabia", RelationType.AGREEMENT) in closed

        # audit: every closed fixture is 100% compliant on all three rules
        for fixture in (samoa, chain, paragraph):
            report = audit_compliance(close_to_fixpoint(fixture))
            assert set(report.fractions().values()) == {1.0}


def test_criterion_metric_oracle_equivalence():
    with criterion(
        "precision/recall, accuracy/macro-F1, and kappa match brute-force "
        "formula evaluation on 1000 random instances and the worked examples"
    ):
        rng = random.Random(424242)
        for _ in range(1000):
            n = rng.randint(1, 10)
            labels = "ABCDE"[: rng.randint(1, 5)]
            pred_list = [rng.choice(labels) for _ in range(n)]
            gold_list = [rng.choice(labels) for _ in range(n)]
            pred_set = {rng.randint(0, 15) for _ in range(rng.randint(0, 10))}
            gold_set = {rng.randint(0, 15) for _ in range(rng.randint(0, 10))}
            for got, want in (
                (triplet_prf(pred_set, gold_set), oracle_prf(pred_set, gold_set)),
                (attribute_metrics(pred_list, gold_list), oracle_attribute(pred_list, gold_list)),
            ):
                assert abs(got[0] - want[0]) < 1e-12
                assert abs(got[1] - want[1]) < 1e-12
            assert abs(
                cohen_kappa(pred_list, gold_list) - oracle_kappa(pred_list, gold_list)
            ) < 1e-12

        precision, recall = triplet_prf({"t1", "t2", "t3", "t4"}, {"t1", "t2", "t5"})
        assert (precision, recall) == (0.5, 2 / 3)
        accuracy, macro = attribute_metrics(["A", "B", "B", "B"], ["A", "A", "B", "B"])
        assert accuracy == 0.75
        assert abs(macro - 11 / 15) < 1e-12  # 0.7333...
        assert cohen_kappa(["y", "y", "n", "n"], ["y", "n", "n", "n"]) == 0.5


QUOTE_REPORT = """report_id: r-quotes
date: 2001-07-16
meeting: COP-6bis
kind: daily
framework: UNFCCC

alpha bravo charlie delta echo foxtrot golf hotel india zulu

Ministers continued consultations on the compliance system late into the night.
"""


def test_criterion_quote_matching():
    with criterion(
        "verbatim quote maps to its paragraph; a 9/10 token overlap fails the "
        "strictly-greater-than-0.9 threshold"
    ):
        report = parse_report(QUOTE_REPORT)
        verbatim = quote_to_paragraph(
            "Ministers continued consultations on the compliance system late into the night.",
            report,
            threshold=0.9,
        )
        assert verbatim.status is MatchStatus.MATCHED
        assert verbatim.index == 1

        nine_of_ten = quote_to_paragraph(
            "alpha bravo charlie delta echo foxtrot golf hotel india juliet",
            report,
            threshold=0.9,
        )
        assert nine_of_ten.status is MatchStatus.NO_MATCH


def test_criterion_end_to_end_determinism(tmp_path, fixture_codebook, fixture_reports):
    with criterion(
        "annotate over the fixture corpus with the recorded replay store is "
        "byte-identical across 3 runs and equals the hand-derived interaction set"
    ):
        corpus = tmp_path / "corpus"
        shutil.copytree(DATA_DIR / "corpus", corpus)
        codebook_path = tmp_path / "codebook.txt"
        codebook_path.write_text((DATA_DIR / "codebook.txt").read_text())
        replay = tmp_path / "replay.rpl"
        build_annotation_replay(fixture_codebook, fixture_reports).save(replay)

        outputs = []
        for i in range(3):
            out = tmp_path / f"run{i}.jsonl"
            code = main(
                [
                    "annotate",
                    "--input", str(corpus),
                    "--codebook", str(codebook_path),
                    "--mode", "data-scarce",
                    "--examples", "ex-rel-1,ex-attr-1",
                    "--framework", "UNFCCC",
                    "--replay", str(replay),
                    "--model", FIXTURE_MODEL,
                    "--output", str(out),
                ]
            )
            assert code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

        rows = [json.loads(line) for line in outputs[0].decode().splitlines()]
        assert run_rows_to_set(rows) == EXPECTED_FIXTURE_SET


def test_criterion_topic_space():
    with criterion(
        "base clustering recovers the brute-force-optimal 2-clustering with a "
        "fixed seed; duplicates absorb; orthogonal words create topics; the "
        "staged fixture adds exactly 3; reruns are byte-identical"
    ):
        # toy 2-D fixture, raw points
        labels = kmeans(np.array(TOY_POINTS), k=2, seed=0)
        assert labels_to_partition(labels) == optimal_two_partition(TOY_POINTS)

        # the same through the full build path (embeddings normalized en route)
        gateway = _gateway(toy_store())
        space = build_base_space(["alpha", "beta", "gamma", "delta"], k=2, seed=0, gateway=gateway)
        groups = frozenset(
            frozenset(w for w, _ in topic.member_words) for topic in space.topics
        )
        normalized = [normalize_vector(p) for p in TOY_POINTS]
        names = ["alpha", "beta", "gamma", "delta"]
        optimal_groups = frozenset(
            frozenset(names[i] for i in part) for part in optimal_two_partition(normalized)
        )
        assert groups == optimal_groups

        # duplicate member word is absorbed, not split off
        store = staged_store()
        gateway = _gateway(store)
        staged_base = base_space(gateway)
        topic_id, created = assign_or_create("emissions", staged_base, gateway)
        assert created is False

        # orthogonal embedding creates a new topic
        topic_id, created = assign_or_create("net zero", staged_base, gateway)
        assert created is True

        # staged fixture adds exactly 3 topics
        gateway = _gateway(staged_store())
        staged = advance_stage(base_space(gateway), [parse_report(STAGE2_REPORT)], gateway)
        assert staged.version == 2
        assert len([t for t in staged.topics if t.stage_added == 2]) == 3

        # identical seed + replay store -> byte-identical export
        report = parse_report(STAGE2_REPORT)
        one = advance_stage(base_space(_gateway(staged_store())), [report], _gateway(staged_store()))
        two = advance_stage(base_space(_gateway(staged_store())), [report], _gateway(staged_store()))
        assert one.to_json() == two.to_json()


def _stats_fixture():
    def report(rid, year):
        return parse_report(
            f"report_id: {rid}\ndate: {year}-06-01\nmeeting: M\nkind: daily\n"
            f"framework: UNFCCC\n\nBody."
        )

    def record(rid, index, p1, p2, relation, topic=None, derived="stated"):
        return {
            "run_id": "r",
            "report_id": rid,
            "paragraph_index": index,
            "party1": p1,
            "party2": p2,
            "relation": relation,
            "topic": topic,
            "derived": derived,
            "out_of_space_flags": [],
            "model_id": "m",
        }

    return report, record


def test_criterion_statistics():
    with criterion(
        "Pearson r hits 1.0/-1.0 on the forced fixtures; tallies match manual "
        "counts; out-degree and in-degree sums equal the interaction count"
    ):
        report, record = _stats_fixture()

        # forced correlation fixtures: reports per year (1,2,3)
        reports = [report(f"r{y}-{i}", y) for y, n in ((1995, 1), (1996, 2), (1997, 3)) for i in range(n)]
        up_records = [
            record(f"r{y}-0", i, "A", "B", "Support")
            for y, n in ((1995, 2), (1996, 4), (1997, 6))
            for i in range(n)
        ]
        up = yearly_distribution(build_dataset(up_records, reports), reports)
        assert up.correlation == pytest.approx(1.0, abs=1e-12)

        down_records = [
            record(f"r{y}-0", i, "A", "B", "Support")
            for y, n in ((1995, 6), (1996, 4), (1997, 2))
            for i in range(n)
        ]
        down = yearly_distribution(build_dataset(down_records, reports), reports)
        assert down.correlation == pytest.approx(-1.0, abs=1e-12)

        # 10-interaction manual tally
        from test_dataset import TEN_RECORDS, TEN_REPORTS

        dataset = build_dataset(TEN_RECORDS, TEN_REPORTS)
        degrees = {e: (o, i) for e, o, i in activity_degrees(dataset)}
        assert degrees == {"A": (5, 3), "B": (1, 3), "C": (3, 1), "D": (1, 3)}
        assert sum(o for o, _ in degrees.values()) == len(dataset) == 10
        assert sum(i for _, i in degrees.values()) == len(dataset)


def test_criterion_suite_runs_offline_and_fast():
    with criterion(
        "the primary suite runs offline (socket connects are blocked for the "
        "whole session) inside the two-minute budget"
    ):
        import socket

        with pytest.raises(RuntimeError, match="network access attempted"):
            socket.create_connection(("127.0.0.1", 9))
        elapsed = time.monotonic() - conftest.SUITE_T0
        assert elapsed < 120.0, f"suite already at {elapsed:.0f}s"
