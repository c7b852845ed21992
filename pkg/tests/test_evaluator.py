import pytest

from promptopt.backend import Backend, BackendError, ChoiceDistribution, MockProfile, MockScorer
from promptopt.dataset import synthetic_dataset
from promptopt.evaluator import (
    LOGITS_DIRECTIVE,
    VERBALIZED_DIRECTIVE,
    EvaluationError,
    ItemRecord,
    evaluate_prompt,
    parse_response,
    render_query,
)


class Scripted(Backend):
    def __init__(self, replies):
        self.replies = replies

    def generate(self, prompt, params=None):
        for item_id, reply in self.replies.items():
            if f"Item {item_id} " in prompt.rsplit("Question: ", 1)[1]:
                return reply
        raise AssertionError("unexpected prompt")


class Broken(Backend):
    def generate(self, prompt, params=None):
        raise BackendError("boom")


def test_render_query(item4):
    q = render_query("Be careful.", item4, mode="verbalized")
    assert q == f"Be careful.\n\n{item4.block()}\n{VERBALIZED_DIRECTIVE}"
    assert render_query("x", item4, mode="logits").endswith("\n" + LOGITS_DIRECTIVE)


def test_render_query_exemplars_and_literal_braces(item4):
    q = render_query("Use {QUESTION} literally.", item4, exemplars=[item4])
    assert q.startswith("Use {QUESTION} literally.\n\n")
    assert q.count(item4.block()) == 2 and "Answer: D\n\n" in q


@pytest.mark.parametrize("bad", ["", "   ", "has <INS> inside"])
def test_render_query_rejects(item4, bad):
    with pytest.raises(ValueError):
        render_query(bad, item4)


@pytest.mark.parametrize(
    "text, letter, conf",
    [
        ("Answer: B, Confidence: 0.7", "B", 0.7),
        ("answer:(c) confidence: 85%", "C", 0.85),
        ("Answer: D. Confidence: 90", "D", 0.9),
        ("Answer: A, Confidence: .25", "A", 0.25),
        ("Answer: A, Confidence: 250", "A", None),
        ("Answer: Both, Confidence: 0.5", None, 0.5),
        ("I would say B.", None, None),
        ("", None, None),
    ],
)
def test_parse_response(text, letter, conf):
    p = parse_response(text)
    assert p.letter == letter
    assert p.confidence == (pytest.approx(conf) if conf is not None else None)


def test_item_record_invariants():
    with pytest.raises(ValueError):
        ItemRecord("x", True, None, False, 0.5)
    with pytest.raises(ValueError):
        ItemRecord("x", False, None, True, None)
    r = ItemRecord("x", True, "A", True, 0.5)
    assert ItemRecord.from_dict(r.to_dict()) == r


def test_verbalized_records():
    ds = synthetic_dataset("v", 3, seed=0)
    golds = [it.gold for it in ds]
    wrong = next(k for k in "ABCD" if k != golds[1])
    s = Scripted({0: f"Answer: {golds[0]}, Confidence: 0.9", 1: f"Answer: {wrong}, Confidence: 0.6", 2: "No idea."})
    res = evaluate_prompt("Go.", ds, s, "verbalized")
    assert [r.followed for r in res.records] == [True, True, False]
    assert [r.correct for r in res.records] == [True, False, False]
    assert res.metrics.ifr == pytest.approx(2 / 3) and res.metrics.acc == pytest.approx(1 / 3)
    assert res.scorer_calls == 3


def test_letter_outside_options_is_unfollowed():
    ds = synthetic_dataset("v", 1, seed=0, n_options=2)
    res = evaluate_prompt("Go.", ds, Scripted({0: "Answer: D, Confidence: 0.9"}), "verbalized")
    assert not res.records[0].followed


def test_backend_failure_aborts():
    ds = synthetic_dataset("v", 3, seed=0)
    with pytest.raises(EvaluationError) as exc:
        evaluate_prompt("Go.", ds, Broken(), "verbalized")
    assert exc.value.item_id == ds.items[0].id


def test_logits_argmax_confidence():
    ds = synthetic_dataset("v", 5, seed=0)

    class Fixed(Backend):
        def score_choice_logits(self, prompt, item):
            return ChoiceDistribution({"A": 0.1, "B": 0.6, "C": 0.2, "D": 0.1})

    res = evaluate_prompt("Go.", ds, Fixed(), "logits")
    assert all(r.predicted == "B" and r.confidence == 0.6 for r in res.records)
    assert res.metrics.ifr == 1.0


def test_worker_count_does_not_change_results():
    ds = synthetic_dataset("w", 120, seed=2)
    s = MockScorer(MockProfile(confidence_noise=0.1, follow_rate=0.9), 8, ds.items)
    base = evaluate_prompt("Go.", ds, s, "verbalized")
    for w in (2, 8):
        assert evaluate_prompt("Go.", ds, s, "verbalized", workers=w).records == base.records


def test_unknown_mode(small_dataset):
    with pytest.raises(ValueError):
        evaluate_prompt("Go.", small_dataset, Broken(), "telepathic")
