import json
import subprocess
import sys
from pathlib import Path

import pytest

# The pair fixture is produced by the annotation package's CLI; the kit only
# ever sees its files.

CAST = [
    ("Australia", "EU"),
    ("Samoa", "Kenya"),
    ("Iceland", "Kuwait"),
    ("Switzerland", "Philippines"),
    ("New Zealand", "Saudi Arabia"),
]
RELATIONS = ["Support", "Opposition", "Agreement"]
VERBS = {"Support": "supported", "Opposition": "opposed", "Agreement": "agreed with"}

CODEBOOK = """[entities]
AOSIS | coalition
Australia | nation_state
EU | coalition | European Union
Iceland | nation_state
Kenya | nation_state
Kuwait | nation_state
New Zealand | nation_state
Philippines | nation_state
Samoa | nation_state
Saudi Arabia | nation_state
Switzerland | nation_state

[relations]
On behalf of: when country1 speaks on behalf of or for country2.
Support: when country1 explicitly supports country2 or its statement.
Agreement: when country1 and country2 state the same position; coded in both directions.
Delaying proposal: when country1 proposes to delay a decision sought by country2.
Opposition: when country1 explicitly opposes a position of country2.

[rules]
- The relation types agreement and on behalf of are coded bi-directionally.
- If several countries (more than 2) agree with each other, then each pair is coded as a new observation, and again in both directions.
- If several countries oppose or support another one, then not only the opposition or the support is coded, but also the agreement between all countries that are supporting / opposing.

[task:presence]
Decide whether this paragraph contains any interaction between parties (countries or coalitions).

[task:relation]
Please extract all the interactions between parties from this paragraph.

[task:attribute]
Assign the negotiation topic of each listed interaction from this paragraph.

[format:presence]
Answer with a single word: "Yes" or "No".

[format:relation]
The output should be a list of JSON objects. Each JSON object codes one interaction, with keys "Party1", "Party2", and "Relation".

[format:attribute]
The output should be a list of JSON objects. Each JSON object copies one interaction and adds its topic, with keys "Party1", "Party2", "Relation", and "Topic".
"""


def build_fixture(root: Path) -> dict:
    """Write a 15-paragraph corpus plus gold annotations and derive the
    30-pair instruction file through the annotation CLI."""
    corpus = root / "corpus"
    corpus.mkdir()
    gold_rows = []
    gold_by_paragraph = {}
    for r in range(3):
        report_id = f"ft-r{r}"
        paragraphs = []
        for p in range(5):
            party1, party2 = CAST[p]
            relation = RELATIONS[(r + p) % len(RELATIONS)]
            paragraphs.append(
                f"{party1.upper()} {VERBS[relation]} {party2.upper()} on the draft decision "
                f"considered in session {r}.{p}."
            )
            triplets = {(party1, party2, relation)}
            if relation == "Agreement":
                triplets.add((party2, party1, relation))
            gold_by_paragraph[(report_id, p)] = triplets
            for t1, t2, rel in sorted(triplets):
                gold_rows.append(
                    {
                        "run_id": "gold",
                        "report_id": report_id,
                        "paragraph_index": p,
                        "party1": t1,
                        "party2": t2,
                        "relation": rel,
                        "topic": None,
                        "derived": "stated",
                        "out_of_space_flags": [],
                        "model_id": "human",
                    }
                )
        body = "\n\n".join(paragraphs)
        (corpus / f"{report_id}.txt").write_text(
            f"report_id: {report_id}\ndate: 2000-01-0{r + 1}\nmeeting: COP-F\n"
            f"kind: daily\nframework: UNFCCC\n\n{body}\n",
            encoding="utf-8",
        )

    gold_path = root / "gold.jsonl"
    gold_path.write_text(
        "\n".join(json.dumps(row, sort_keys=True) for row in gold_rows) + "\n", encoding="utf-8"
    )
    codebook_path = root / "codebook.txt"
    codebook_path.write_text(CODEBOOK, encoding="utf-8")
    pairs_path = root / "pairs.jsonl"
    subprocess.run(
        [
            sys.executable, "-m", "negnet.cli",
            "prepare-finetune",
            "--train", str(gold_path),
            "--input", str(corpus),
            "--codebook", str(codebook_path),
            "--output", str(pairs_path),
        ],
        check=True,
        capture_output=True,
        text=True,
    )
    return {
        "pairs": pairs_path,
        "gold": gold_path,
        "gold_by_paragraph": gold_by_paragraph,
        "corpus": corpus,
        "codebook": codebook_path,
    }


@pytest.fixture(scope="session")
def fixture_files(tmp_path_factory) -> dict:
    return build_fixture(tmp_path_factory.mktemp("ftfix"))
