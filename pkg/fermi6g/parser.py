from .errors import ConfigError
from .lexer import TokenType
from .nodes import Assign, BooleanLiteral, Number, Section, StringLiteral, TupleLiteral

SCALARS = {
    TokenType.INTEGER: Number,
    TokenType.FLOAT: Number,
    TokenType.STRING: StringLiteral,
    TokenType.IDENT: StringLiteral,
    TokenType.TRUE: BooleanLiteral,
    TokenType.FALSE: BooleanLiteral,
}


class Parser:
    """Recursive-descent parser for the KEY = value config language.

    Produces a flat list of Section and Assign nodes; the config visitor
    decides what keys mean.
    """

    def __init__(self, tokens, text):
        self.tokens = tokens
        self.source = text.splitlines()
        self.index = 0
        self.key = None

    @property
    def token(self):
        return self.tokens[min(self.index, len(self.tokens) - 1)]

    @property
    def kind(self):
        return self.token[0]

    def advance(self):
        current = self.token
        self.index += 1
        return current

    def error(self, expected):
        kind, value, line = self.token
        found = kind.name if value is None else f"{kind.name} {value!r}"
        text = self.source[line - 1].strip() if 0 < line <= len(self.source) else ""
        raise ConfigError(f"Expected {expected}, but got {found}: {text}", key=self.key, line=line)

    def eat(self, kind):
        if self.kind != kind:
            self.error(kind.name)
        return self.advance()

    def parse(self):
        nodes = []
        while self.kind != TokenType.EOF:
            if self.kind == TokenType.NEWLINE:
                self.advance()
            elif self.kind == TokenType.LBRACKET:
                nodes.append(self.section())
            else:
                nodes.append(self.assign())
        return nodes

    def finish_line(self):
        if self.kind == TokenType.NEWLINE:
            self.advance()
        elif self.kind != TokenType.EOF:
            self.error("end of line")

    def section(self):
        self.eat(TokenType.LBRACKET)
        name = self.eat(TokenType.IDENT)
        self.eat(TokenType.RBRACKET)
        self.finish_line()
        return Section(name)

    def assign(self):
        key = self.eat(TokenType.IDENT)
        self.key = key[1]
        self.eat(TokenType.ASSIGN)
        node = Assign(key, self.value())
        self.finish_line()
        self.key = None
        return node

    def value(self):
        if self.kind == TokenType.LPAREN:
            return self.tuple_value()
        node_class = SCALARS.get(self.kind)
        if node_class is None:
            self.error("a value")
        return node_class(self.advance())

    def tuple_value(self):
        start = self.eat(TokenType.LPAREN)
        items = []
        while self.kind != TokenType.RPAREN:
            if items:
                self.eat(TokenType.COMMA)
            items.append(self.value())
        self.eat(TokenType.RPAREN)
        return TupleLiteral(start, items)
