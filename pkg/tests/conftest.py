import itertools

import pytest

from bijection import reducible_words
from word_core import LETTER_CHARS, WordSlice, WordWindow

RULES = {"aA": "", "bB": "", "aF": "", "bF": "", "aB": "Ba", "bA": "Ab"}


def rewrite(word: str, rightmost: bool = False) -> str:
    """Fixed point of the burger/order relations, one rewrite at a time."""
    while True:
        spots = [i for i in range(len(word) - 1) if word[i:i + 2] in RULES]
        if not spots:
            return word
        i = spots[-1] if rightmost else spots[0]
        word = word[:i] + RULES[word[i:i + 2]] + word[i + 2:]


def all_words(max_len: int):
    for length in range(max_len + 1):
        for letters in itertools.product(LETTER_CHARS, repeat=length):
            yield "".join(letters)


@pytest.fixture(scope="session")
def small_reducible():
    """Closed slices of every reducible word with at most two burgers."""
    return [WordSlice.from_word(codes) for n in (1, 2) for codes in reducible_words(n)]


@pytest.fixture
def supercritical_window():
    def make(seed: int, cap: int = 2 ** 18) -> WordWindow:
        return WordWindow(seed, 0.6, cap=cap)
    return make
