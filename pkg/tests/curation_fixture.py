"""Synthetic 1000-record corpus with a known exclusion count per funnel
stage.  Questions use per-record unique word tails so nothing collides by
accident; every planted victim survives the stages before the one meant to
remove it."""

from rlvrlab.curation import ProblemRecord

CLEAN = 765
STYLE_PROOF = 30
STYLE_CJK = 20
EXACT_DUPS = 40
NEAR_DUPS = 30
CONTAMINATED = 25
DIFficulty_ZERO = 35
DIFFICULTY_ONE = 25
LONG_ANSWERS = 30

EXPECTED_STAGE_EXCLUSIONS = {
    "style": STYLE_PROOF + STYLE_CJK,
    "exact_dedup": EXACT_DUPS,
    "ngram_dedup": NEAR_DUPS,
    "decontaminate": CONTAMINATED,
    "difficulty": DIFficulty_ZERO + DIFFICULTY_ONE,
    "answer_length": LONG_ANSWERS,
}
EXPECTED_FINAL = CLEAN

_INTERIOR_RATES = (0.2, 0.4, 0.5, 0.6, 0.8)


def _unique_words(tag: str, n: int) -> str:
    return " ".join(f"{tag}x{j}" for j in range(n))


def _clean_question(i: int) -> str:
    return f"compute the value of {_unique_words(f'q{i:04d}', 36)}"


def build_eval_questions() -> list[str]:
    return [
        f"benchmark item {_unique_words(f'e{i:02d}', 12)}" for i in range(CONTAMINATED)
    ]


def build_funnel_fixture() -> tuple[list[ProblemRecord], list[str]]:
    eval_questions = build_eval_questions()
    records: list[ProblemRecord] = []
    uid = 0

    def add(question: str, answer: str = "42", pass_rate: float = 0.5) -> None:
        nonlocal uid
        records.append(
            ProblemRecord(
                id=f"f{uid:04d}",
                question=question,
                answer=answer,
                source="fixture",
                pass_rate=pass_rate,
            )
        )
        uid += 1

    clean_questions = [_clean_question(i) for i in range(CLEAN)]
    for i, q in enumerate(clean_questions):
        add(q, answer=("1/2", "42", "\\frac{3}{4}")[i % 3],
            pass_rate=_INTERIOR_RATES[i % len(_INTERIOR_RATES)])

    for i in range(STYLE_PROOF):
        add(f"prove that {_unique_words(f'p{i:03d}', 20)} holds")
    for i in range(STYLE_CJK):
        add(f"计算下列表达式的值 {_unique_words(f'c{i:03d}', 2)}")

    # Exact duplicates of early clean records: half verbatim, half differing
    # only in whitespace and case.
    for i in range(EXACT_DUPS):
        src = clean_questions[i]
        add(src if i % 2 == 0 else "  " + src.upper().replace(" ", "   ") + " ")

    # Near duplicates: a clean question plus two extra words shares 31 of 33
    # ten-grams with its source (Jaccard 31/33).
    for i in range(NEAR_DUPS):
        add(clean_questions[EXACT_DUPS + i] + f" nd{i:03d}a nd{i:03d}b")

    # One contaminated record per evaluation question: a full 10-word run of
    # the eval question embedded between unique filler words.
    for i, eq in enumerate(eval_questions):
        phrase = " ".join(eq.split()[2:12])
        add(f"{_unique_words(f'k{i:03d}', 8)} {phrase} trailing k{i:03d}z")

    for i in range(DIFficulty_ZERO):
        add(f"unsolvable case {_unique_words(f'u{i:03d}', 20)}", pass_rate=0.0)
    for i in range(DIFFICULTY_ONE):
        add(f"trivial case {_unique_words(f't{i:03d}', 20)}", pass_rate=1.0)

    for i in range(LONG_ANSWERS):
        add(
            f"verbose answer case {_unique_words(f'v{i:03d}', 20)}",
            answer="1" * 21,
        )

    assert len(records) == 1000
    return records, eval_questions
