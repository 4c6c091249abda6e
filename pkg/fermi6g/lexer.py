import re
from enum import Enum, auto

from .errors import ConfigError

class TokenType(Enum):
    INTEGER = auto()
    FLOAT = auto()
    STRING = auto()
    IDENT = auto()
    ASSIGN = auto()
    LPAREN = auto()
    RPAREN = auto()
    LBRACKET = auto()
    RBRACKET = auto()
    COMMA = auto()
    TRUE = auto()
    FALSE = auto()
    NEWLINE = auto()
    EOF = auto()

token_spec = [
    ("COMMENT",         r'#.*'),
    (TokenType.NEWLINE, r'\n'),
    ("SKIP",            r'[ \t\r]+'),
    (TokenType.TRUE,    r'true\b'),
    (TokenType.FALSE,   r'false\b'),
    (TokenType.FLOAT,   r'[-+]?(?:\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+)'),
    (TokenType.INTEGER, r'[-+]?\d+'),
    (TokenType.STRING,  r'"(?:\\.|[^"\\])*"'),
    (TokenType.IDENT,   r'[a-zA-Z_][\w\-]*'),
    (TokenType.ASSIGN,  r'='),
    (TokenType.LPAREN,  r'\('),
    (TokenType.RPAREN,  r'\)'),
    (TokenType.LBRACKET, r'\['),
    (TokenType.RBRACKET, r'\]'),
    (TokenType.COMMA,   r','),

    ("MISMATCH",        r'.'),
]


def _group(kind):
    return kind.name if isinstance(kind, Enum) else kind


token_regex = '|'.join(f'(?P<{_group(kind)}>{pattern})' for kind, pattern in token_spec)


def _unquote(raw):
    return bytes(raw[1:-1], "utf-8").decode("unicode_escape")


CONVERTERS = {
    TokenType.FLOAT: float,
    TokenType.INTEGER: int,
    TokenType.STRING: _unquote,
    TokenType.TRUE: lambda raw: True,
    TokenType.FALSE: lambda raw: False,
}

IGNORED = ("COMMENT", "SKIP")


def tokenize(text):
    """Split config text into (kind, value, line) triples ending with EOF."""
    tokens = []
    line = 1
    for match in re.finditer(token_regex, text):
        group, raw = match.lastgroup, match.group()
        if group in IGNORED:
            continue
        if group == "MISMATCH":
            raise ConfigError(f"Unexpected character {raw!r}", line=line)
        kind = TokenType[group]
        convert = CONVERTERS.get(kind)
        tokens.append((kind, convert(raw) if convert else raw, line))
        if kind is TokenType.NEWLINE:
            line += 1
    tokens.append((TokenType.EOF, None, line))
    return tokens
