"""Ordinality preservation tests for code+abnormality embeddings.

Each test checks that a code's normal-result token sits closer (by cosine) to
the single-grade abnormal token than to the double-grade one of the same
family: near = A, L or H, far = AA, LL or HH, anchored at the code's _N token.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

from .corpus import TokenMode, Vocabulary, token_stem
from .embedstore import EmbeddingModel, UnknownToken, cosine_similarity


class Family(enum.Enum):
    AbnormalFamily = ("A", "AA")
    LowFamily = ("L", "LL")
    HighFamily = ("H", "HH")

    @property
    def near_suffix(self) -> str:
        return self.value[0]

    @property
    def far_suffix(self) -> str:
        return self.value[1]


class WrongMode(ValueError):
    pass


class EmptyTestSet(ValueError):
    pass


@dataclass(frozen=True)
class OrdinalityTest:
    anchor: str
    near: str
    far: str
    family: Family

    @property
    def stem(self) -> str:
        return token_stem(self.anchor)


@dataclass
class TestResult:
    test: OrdinalityTest
    sim_near: float
    sim_far: float
    passed: bool


@dataclass
class OrdinalityReport:
    results: list[TestResult]

    @property
    def n_tests(self) -> int:
        return len(self.results)

    @property
    def n_failures(self) -> int:
        return sum(1 for r in self.results if not r.passed)

    @property
    def error_rate(self) -> float:
        return self.n_failures / self.n_tests


def generate_ordinality_tests(vocab: Vocabulary) -> list[OrdinalityTest]:
    """One test per (code stem, family) whose three tokens all survive the vocabulary.

    Deterministic order: stems lexicographically, families Abnormal, Low, High.
    """
    if vocab.mode is not TokenMode.LoincPlusAbnormality:
        raise WrongMode("ordinality tests need code+abnormality tokens")
    stems = sorted({token_stem(t) for t in vocab.tokens})
    tests: list[OrdinalityTest] = []
    for stem in stems:
        anchor = f"{stem}_N"
        if anchor not in vocab:
            continue
        for family in (Family.AbnormalFamily, Family.LowFamily, Family.HighFamily):
            near = f"{stem}_{family.near_suffix}"
            far = f"{stem}_{family.far_suffix}"
            if near in vocab and far in vocab:
                tests.append(OrdinalityTest(anchor=anchor, near=near, far=far, family=family))
    return tests


def evaluate_ordinality(model: EmbeddingModel, tests: list[OrdinalityTest]) -> OrdinalityReport:
    """Score every test under cosine; strict inequality, so exact ties fail."""
    if not tests:
        raise EmptyTestSet("no ordinality tests to evaluate")
    results = []
    for t in tests:
        for token in (t.anchor, t.near, t.far):
            if token not in model:
                raise UnknownToken(token)
        sim_near = cosine_similarity(model.vector(t.anchor), model.vector(t.near))
        sim_far = cosine_similarity(model.vector(t.anchor), model.vector(t.far))
        results.append(
            TestResult(test=t, sim_near=sim_near, sim_far=sim_far, passed=sim_near > sim_far)
        )
    return OrdinalityReport(results=results)


def write_ordinality_report(report: OrdinalityReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(
            "# one test per (code stem, family) whose N, single-grade and "
            "double-grade tokens all occur in the vocabulary; ties fail\n"
        )
        writer = csv.writer(f)
        writer.writerow(["stem", "family", "sim_near", "sim_far", "pass"])
        for r in report.results:
            writer.writerow(
                [
                    r.test.stem,
                    r.test.family.name,
                    "%.6g" % r.sim_near,
                    "%.6g" % r.sim_far,
                    int(r.passed),
                ]
            )
        f.write(
            f"# summary: tests={report.n_tests} failures={report.n_failures} "
            f"error_rate={report.error_rate:.6g}\n"
        )
