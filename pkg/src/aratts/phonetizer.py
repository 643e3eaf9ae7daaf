"""Rule-based transliteration of diacritized Arabic into Latin phoneme symbols.

The output alphabet is a closed table of short ASCII strings so that the
encoder can share an embedding table with a Latin-character model. Mapping
conventions (Buckwalter-flavoured):

* one symbol per consonant; emphatics are doubled letters (``ss dd tt zz``)
* short vowels ``a i u``; long vowels ``aa ii uu``
* shadda repeats the consonant symbol (gemination)
* tanween emits the short vowel followed by ``n``
* sukun emits nothing
* each space emits the word separator ``|``; ``. , ? !`` map to themselves

A bare long-vowel carrier (alif, waw, yeh, alif maqsura) that follows the
matching short vowel lengthens it instead of emitting a consonant. The same
letter followed by its own diacritic acts as a consonant (alif becomes a
glottal stop carrier).
"""
from dataclasses import dataclass, field

PAD = "_"
BOS = "^"
EOS = "~"
SEPARATOR = "|"

FATHATAN, DAMMATAN, KASRATAN = "ً", "ٌ", "ٍ"
FATHA, DAMMA, KASRA = "َ", "ُ", "ِ"
SHADDA, SUKUN = "ّ", "ْ"

ALIF, ALIF_MADDA, WAW, YEH, ALIF_MAQSURA = "ا", "آ", "و", "ي", "ى"

SHORT_VOWELS = {FATHA: "a", DAMMA: "u", KASRA: "i"}
TANWEEN = {FATHATAN: "a", DAMMATAN: "u", KASRATAN: "i"}
DIACRITICS = frozenset(SHORT_VOWELS) | frozenset(TANWEEN) | {SHADDA, SUKUN}
PUNCTUATION = {".": ".", ",": ",", "?": "?", "!": "!"}

# Consonant role of every letter in U+0621..U+064A except tatweel (U+0640).
LETTERS = {
    "ء": "'",   # hamza
    "آ": "'",   # alif madda (followed by an inherent "aa")
    "أ": "'",   # alif hamza above
    "ؤ": "'",   # waw hamza
    "إ": "'",   # alif hamza below
    "ئ": "'",   # yeh hamza
    "ا": "'",   # alif (glottal carrier when it bears a diacritic)
    "ب": "b",
    "ة": "t",   # ta marbuta
    "ت": "t",
    "ث": "th",
    "ج": "j",
    "ح": "H",
    "خ": "kh",
    "د": "d",
    "ذ": "dh",
    "ر": "r",
    "ز": "z",
    "س": "s",
    "ش": "sh",
    "ص": "ss",
    "ض": "dd",
    "ط": "tt",
    "ظ": "zz",
    "ع": "E",
    "غ": "gh",
    "ػ": "k",   # keheh with two dots
    "ؼ": "k",   # keheh with three dots below
    "ؽ": "y",   # farsi yeh inverted v
    "ؾ": "y",   # farsi yeh with two dots above
    "ؿ": "y",   # farsi yeh with three dots above
    "ف": "f",
    "ق": "q",
    "ك": "k",
    "ل": "l",
    "م": "m",
    "ن": "n",
    "ه": "h",
    "و": "w",
    "ى": "y",   # alif maqsura
    "ي": "y",
}

# Vowel-letter role: which preceding short vowel each carrier lengthens.
_LENGTHENS = {ALIF: "a", ALIF_MAQSURA: "a", WAW: "u", YEH: "i"}
_LONG = {"a": "aa", "u": "uu", "i": "ii"}

_CONSONANT_SYMBOLS = sorted(set(LETTERS.values()))
SYMBOLS = (
    [PAD, BOS, EOS, SEPARATOR]
    + sorted(PUNCTUATION.values())
    + ["a", "i", "u", "aa", "ii", "uu", "n"]
    + [s for s in _CONSONANT_SYMBOLS if s != "n"]
)
SYMBOL_TO_ID = {s: i for i, s in enumerate(SYMBOLS)}

ALPHABET = frozenset(LETTERS) | DIACRITICS | frozenset(PUNCTUATION) | {" "}


class PhonetizerError(ValueError):
    pass


class RejectedCodepoint(PhonetizerError):
    def __init__(self, position, codepoint):
        self.position = position
        self.codepoint = codepoint
        super().__init__(f"codepoint U+{ord(codepoint):04X} at position {position} is not accepted")


class OrphanDiacritic(PhonetizerError):
    def __init__(self, position):
        self.position = position
        super().__init__(f"diacritic at position {position} has no preceding letter")


@dataclass(frozen=True)
class PhonemeSequence:
    symbols: tuple
    undiacritized: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def ids(self, add_boundaries=False):
        body = [SYMBOL_TO_ID[s] for s in self.symbols]
        if add_boundaries:
            return [SYMBOL_TO_ID[BOS]] + body + [SYMBOL_TO_ID[EOS]]
        return body


def validate(text):
    """Raise if ``text`` breaks the accepted-alphabet or diacritic-placement rules."""
    prev = None
    for pos, ch in enumerate(text):
        if ch not in ALPHABET:
            raise RejectedCodepoint(pos, ch)
        if ch in DIACRITICS:
            legal_pair = prev == SHADDA and ch not in (SHADDA, SUKUN)
            if prev is None or prev not in LETTERS and not legal_pair:
                raise OrphanDiacritic(pos)
        prev = ch


def phonetize(text):
    """Transliterate diacritized Arabic ``text`` into a :class:`PhonemeSequence`."""
    validate(text)
    out = []
    bare = 0
    n = len(text)
    pos = 0
    while pos < n:
        ch = text[pos]
        if ch == " ":
            out.append(SEPARATOR)
            pos += 1
            continue
        if ch in PUNCTUATION:
            out.append(PUNCTUATION[ch])
            pos += 1
            continue

        marks = []
        j = pos + 1
        while j < n and text[j] in DIACRITICS:
            marks.append(text[j])
            j += 1

        if not marks:
            if ch in _LENGTHENS and out and out[-1] == _LENGTHENS[ch]:
                out[-1] = _LONG[out[-1]]
            elif ch == ALIF and len(out) >= 2 and out[-1] == "n" and out[-2] == "a":
                pass  # orthographic alif after fathatan
            elif ch in (ALIF, ALIF_MAQSURA):
                out.append("aa")
            elif ch == ALIF_MADDA:
                out.extend(["'", "aa"])
            else:
                out.append(LETTERS[ch])
                bare += 1
            pos = j
            continue

        if ch == ALIF and marks == [FATHATAN]:
            # tanween written on the alif seat: the alif itself is silent
            if out and out[-1] not in (SEPARATOR,) and out[-1] not in PUNCTUATION.values():
                out.extend(["a", "n"])
            else:
                out.extend(["'", "a", "n"])
            pos = j
            continue

        cons = LETTERS[ch]
        out.append(cons)
        if marks[0] == SHADDA:
            out.append(cons)
            marks = marks[1:]
        if ch == ALIF_MADDA:
            out.append("aa")
        for m in marks:
            if m in SHORT_VOWELS:
                out.append(SHORT_VOWELS[m])
            elif m in TANWEEN:
                out.extend([TANWEEN[m], "n"])
        pos = j
    return PhonemeSequence(tuple(out), bare)


def symbol_table():
    """Ordered ``(symbol, id)`` pairs; id 0 is the padding symbol ``_``."""
    return list(SYMBOL_TO_ID.items())


def encode(text, add_boundaries=True):
    """Phonetize and map to integer ids, wrapped in ``^ ... ~`` by default."""
    return phonetize(text).ids(add_boundaries=add_boundaries)
