"""
Lexicon-based polarity scoring of quarterly transcripts on a 0-100 scale
"""
import math
import os
import re
from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, FrozenSet, List, Mapping, Sequence

from loguru import logger

from .config import Config, read_text
from .dataset import Period, parse_period
from .errors import LexiconError, PeriodParseError

TOKEN_PATTERN = re.compile(r'[^\W\d_]+')
TRANSCRIPT_PATTERN = re.compile(r'^(\d{4})-Q(\d)\.txt$')
NEGATOR_SECTION = '[negators]'


@dataclass(frozen=True)
class Lexicon:
    """Token polarities in [-1, 1] plus the set of negating tokens"""
    polarities: Mapping[str, float]
    negators: FrozenSet[str] = frozenset()

    def __post_init__(self):
        for token, value in self.polarities.items():
            _check_entry(token, value)
        for token in self.negators:
            _check_token(token)
        object.__setattr__(self, 'polarities', MappingProxyType(dict(self.polarities)))
        object.__setattr__(self, 'negators', frozenset(self.negators))

    def __len__(self) -> int:
        return len(self.polarities)


def _check_token(token: str) -> None:
    if not token or token != token.lower() or not token.isalpha():
        raise LexiconError(f"lexicon token '{token}' must be lowercase and alphabetic")


def _check_entry(token: str, value: float) -> None:
    _check_token(token)
    if not math.isfinite(value) or not -1.0 <= value <= 1.0:
        raise LexiconError(f"polarity of '{token}' must be in [-1, 1], got {value}")


def parse_lexicon(text: str, label: str = '<text>') -> Lexicon:
    """Parse 'token<TAB>polarity' lines with an optional [negators] section"""
    polarities: Dict[str, float] = {}
    negators = set()
    in_negators = False
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if line.lower() == NEGATOR_SECTION:
            in_negators = True
            continue
        try:
            if in_negators:
                _check_token(line)
                negators.add(line)
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise LexiconError("expected 'token<TAB>polarity'")
            token, value_text = parts[0].strip(), parts[1].strip()
            try:
                value = float(value_text)
            except ValueError:
                raise LexiconError(f"non-numeric polarity '{value_text}'") from None
            if token in polarities:
                raise LexiconError(f"duplicate token '{token}'")
            _check_entry(token, value)
            polarities[token] = value
        except LexiconError as e:
            raise LexiconError(f"{label} line {line_number}: {e}") from None
    return Lexicon(polarities, frozenset(negators))


def load_lexicon(path: str) -> Lexicon:
    if not os.path.isfile(path):
        raise LexiconError(f"lexicon file not found: {path}")
    lexicon = parse_lexicon(read_text(path, LexiconError), label=path)
    logger.debug(f"Loaded lexicon with {len(lexicon)} terms and {len(lexicon.negators)} negators from {path}")
    return lexicon


def default_lexicon() -> Lexicon:
    """Bundled financial lexicon"""
    return load_lexicon(Config.LEXICON_PATH)


def tokenize(text: str) -> List[str]:
    """Lowercased runs of letters in document order"""
    return [token.lower() for token in TOKEN_PATTERN.findall(text)]


def polarity(tokens: Sequence[str], lexicon: Lexicon) -> float:
    """Mean polarity of matched tokens; a preceding negator flips the sign"""
    matched = []
    for i, token in enumerate(tokens):
        value = lexicon.polarities.get(token)
        if value is None:
            continue
        if i > 0 and tokens[i - 1] in lexicon.negators:
            value = -value
        matched.append(value)
    if not matched:
        return 0.0
    return sum(matched) / len(matched)


def score(text: str, lexicon: Lexicon) -> float:
    """Sentiment score in [0, 100]; 50 is neutral"""
    value = 50.0 * (1.0 + polarity(tokenize(text), lexicon))
    return min(Config.SENTIMENT_MAX, max(Config.SENTIMENT_MIN, value))


def transcript_period(filename: str) -> Period:
    match = TRANSCRIPT_PATTERN.match(filename)
    if not match:
        raise PeriodParseError(f"transcript name '{filename}' does not match YYYY-QN.txt")
    return parse_period(f"{match.group(1)} Q{match.group(2)}")


def score_directory(directory: str, lexicon: Lexicon) -> Dict[Period, float]:
    """Score every YYYY-QN.txt transcript in a directory"""
    if not os.path.isdir(directory):
        raise LexiconError(f"transcripts directory not found: {directory}")
    scores = {}
    for filename in sorted(os.listdir(directory)):
        try:
            period = transcript_period(filename)
        except PeriodParseError as e:
            logger.warning(f"Skipping {filename}: {e}")
            continue
        text = read_text(os.path.join(directory, filename), LexiconError)
        scores[period] = score(text, lexicon)
    logger.info(f"Scored {len(scores)} transcripts from {directory}")
    return dict(sorted(scores.items()))
