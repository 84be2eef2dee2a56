"""Closed word list of everything the synthetic corpus can emit."""
from .world import COLORS, DIRECTIONS, SHAPES

GRAMMAR_WORDS = (
    "the", "moves", "stays", "still", "then", "stops", "and", "hit", "wall", "so",
    "it", "turned", "both", "stopped", "moved", "no", "events", "occurred", "nothing",
    "scene", "will", "keeps", "moving", "confidence", "high", "medium", "low",
    "which", "sentence", "describes", "video",
)
PUNCTUATION = (",", ".", "?")

WORDS = tuple(GRAMMAR_WORDS) + tuple(COLORS) + tuple(SHAPES) + tuple(DIRECTIONS)
MCQ_QUESTION = "which sentence describes the video?"
