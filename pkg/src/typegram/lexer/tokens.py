"""Module tokenizing decompiled pseudo-code into normalized token streams."""

from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
import re
from typing import Iterator

NUM_PLACEHOLDER = "<NUM>"
STRING_PLACEHOLDER = "<STRING>"
BOS = "<BOS>"
EOS = "<EOS>"


class TokenClass(str, Enum):
    """Lexical class of a token."""

    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    PUNCTUATION = "punctuation"
    OPERATOR = "operator"
    NUMBER_PLACEHOLDER = "number_placeholder"
    STRING_PLACEHOLDER = "string_placeholder"
    BOUNDARY_SENTINEL = "boundary_sentinel"


# C keywords, builtin types and the pseudo-types decompilers print. None of these
# name a variable, so they never enter the occurrence index.
# fmt: off
KEYWORDS = frozenset(
    {
        "auto", "break", "case", "char", "const", "continue", "default", "do",
        "double", "else", "enum", "extern", "float", "for", "goto", "if",
        "inline", "int", "long", "register", "restrict", "return", "short",
        "signed", "sizeof", "static", "struct", "switch", "typedef", "union",
        "unsigned", "void", "volatile", "while", "bool", "true", "false",
        "_Bool", "wchar_t", "size_t", "ssize_t",
        "int8_t", "int16_t", "int32_t", "int64_t",
        "uint8_t", "uint16_t", "uint32_t", "uint64_t", "uintptr_t", "intptr_t",
        "_BYTE", "_WORD", "_DWORD", "_QWORD", "_OWORD", "_TBYTE", "_UNKNOWN",
        "_BOOL1", "_BOOL2", "_BOOL4", "_BOOL8",
        "__int8", "__int16", "__int32", "__int64", "__int128",
        "__fastcall", "__cdecl", "__stdcall", "__thiscall", "__usercall",
        "__userpurge", "__noreturn", "__far", "__near", "__ptr32", "__ptr64",
        "__unaligned", "__spoils", "__hidden", "__return_ptr", "__struct_ptr",
    }
)

_OPERATORS = (
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=",
    "&&", "||", "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=", "::", "##",
    "+", "-", "*", "/", "%", "=", "<", ">", "!", "&", "|", "^", "~", "?", ":",
)
# fmt: on

_LEXER = re.compile(
    r"""
    (?P<space>\s+)
    |(?P<line_comment>//[^\n]*)
    |(?P<block_comment>/\*[\s\S]*?(?:\*/|\Z))
    |(?P<placeholder><NUM>|<STRING>)
    |(?P<string>(?:L|u8|u|U)?"(?:\\.|[^"\\\n])*"?)
    |(?P<char>(?:L|u|U)?'(?:\\.|[^'\\\n])*'?)
    |(?P<number>
        0[xX][0-9a-fA-F]+(?:[uUlL]|i8|i16|i32|i64|ui64)*
        |(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?[fFlL]?
        |\d+[eE][+-]?\d+[fFlL]?
        |\d+(?:[uUlL]|i8|i16|i32|i64|ui64)*
     )
    |(?P<identifier>[A-Za-z_$@][A-Za-z0-9_$@]*)
    |(?P<operator>"""
    + "|".join(re.escape(op) for op in _OPERATORS)
    + r""")
    |(?P<other>.)
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass(frozen=True, slots=True)
class Token:
    """Single normalized token."""

    text: str
    kind: TokenClass


@dataclass(frozen=True)
class TokenStream:
    """Normalized token sequence of one function plus its identifier index.

    ``occurrences`` maps each identifier to the ascending token indices where it
    occurs; its insertion order is the order of first occurrence.
    """

    tokens: tuple[Token, ...]
    occurrences: dict[str, tuple[int, ...]] = field(default_factory=dict)

    @cached_property
    def texts(self) -> tuple[str, ...]:
        """Token texts, in stream order."""
        return tuple(token.text for token in self.tokens)

    @cached_property
    def encoded(self) -> tuple[bytes, ...]:
        """UTF-8 token texts, as fed to the context hash."""
        return tuple(text.encode("utf-8") for text in self.texts)

    def __len__(self) -> int:
        """Return the token count."""
        return len(self.tokens)


def _scan(source_text: str) -> Iterator[Token]:
    for match in _LEXER.finditer(source_text):
        group = match.lastgroup
        text = match.group()
        if group in ("space", "line_comment", "block_comment"):
            continue
        if group == "placeholder":
            kind = (
                TokenClass.NUMBER_PLACEHOLDER
                if text == NUM_PLACEHOLDER
                else TokenClass.STRING_PLACEHOLDER
            )
            yield Token(text, kind)
        elif group == "string":
            yield Token(STRING_PLACEHOLDER, TokenClass.STRING_PLACEHOLDER)
        elif group in ("char", "number"):
            yield Token(NUM_PLACEHOLDER, TokenClass.NUMBER_PLACEHOLDER)
        elif group == "identifier":
            kind = TokenClass.KEYWORD if text in KEYWORDS else TokenClass.IDENTIFIER
            yield Token(text, kind)
        elif group == "operator":
            yield Token(text, TokenClass.OPERATOR)
        else:
            # Unknown bytes degrade to single-character punctuation.
            yield Token(text, TokenClass.PUNCTUATION)


def tokenize(source_text: str) -> TokenStream:
    """Tokenize decompiled pseudo-code.

    Literals become ``<NUM>``/``<STRING>`` placeholders, whitespace and comments
    are dropped and multi-character operators are kept whole. Never fails: any
    byte the grammar does not know becomes a punctuation token.

    Args:
        source_text (str): Decompiled C-like pseudo-code.

    Returns:
        TokenStream: Tokens with the identifier occurrence index.

    Examples:
        >>> tokenize("x = 5;").texts
        ('x', '=', '<NUM>', ';')

    """
    tokens = tuple(_scan(source_text))
    index: dict[str, list[int]] = {}
    for position, token in enumerate(tokens):
        if token.kind is TokenClass.IDENTIFIER:
            index.setdefault(token.text, []).append(position)
    return TokenStream(tokens, {name: tuple(ids) for name, ids in index.items()})
