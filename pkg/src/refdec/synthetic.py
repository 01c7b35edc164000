"""Small templated corpora for demos and tests.

Documents are topical: the sentences around an action mention the same
subject, so surrounding context says something about who acts.
"""

from __future__ import annotations

import numpy as np

SUBJECTS = ["the red dog", "the small cat", "a tired horse", "the old man", "my sister"]
VERBS = ["runs", "sprints", "jogs", "walks", "hurries"]
PLACES = ["to the park", "to the river", "home", "across the field", "into town"]

# per subject: sentences that tend to come before the action, and after it
TOPICS = {
    "the red dog": (["we got a puppy", "the puppy has red fur"],
                    ["the dog barks", "its tail wags"]),
    "the small cat": (["a kitten lives here", "the kitten is small"],
                      ["the cat purrs", "it chases mice"]),
    "a tired horse": (["the farm has a horse", "the horse worked all day"],
                      ["the horse eats hay", "it neighs"]),
    "the old man": (["grandpa wakes early", "he is very old"],
                    ["he reads the paper", "he drinks tea"]),
    "my sister": (["my sister is ten", "she loves sports"],
                  ["she laughs", "she calls mom"]),
}


def _action(rng, subject=None) -> str:
    subject = subject or SUBJECTS[rng.integers(len(SUBJECTS))]
    return f"{subject} {VERBS[rng.integers(len(VERBS))]} {PLACES[rng.integers(len(PLACES))]} ."


def templated_sentences(n: int, seed: int = 0) -> list[str]:
    """``n`` single action sentences such as ``"the red dog runs home ."``."""
    rng = np.random.default_rng(seed)
    return [_action(rng) for _ in range(n)]


def templated_corpus(n_docs: int, seed: int = 0, sentences_per_doc: int = 3) -> list[str]:
    """Documents of an intro remark, an action, then follow-ups about the same subject."""
    if sentences_per_doc < 2:
        raise ValueError("sentences_per_doc must be >= 2")
    rng = np.random.default_rng(seed)
    docs = []
    for _ in range(n_docs):
        subject = SUBJECTS[rng.integers(len(SUBJECTS))]
        before, after = TOPICS[subject]
        parts = [before[rng.integers(len(before))] + " .", _action(rng, subject)]
        for _ in range(sentences_per_doc - 2):
            parts.append(after[rng.integers(len(after))] + " .")
        docs.append(" ".join(parts))
    return docs
