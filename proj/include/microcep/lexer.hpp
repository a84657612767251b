#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace microcep {

enum class TokenKind {
    Identifier,
    Number,
    LBracket,
    RBracket,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Dot,
    Star,
    Plus,
    Minus,
    Slash,
    Implies,  // :-
    Assign,   // :=
    Less,
    Greater,
    LessEq,
    GreaterEq,
    Equal,
    NotEqual,
    End,
};

struct Token {
    TokenKind kind;
    std::string text;
    std::size_t offset;
};

std::string_view token_kind_name(TokenKind kind) noexcept;

// Shared tokenizer for event literals and rules. `%` starts a comment that runs
// to end of line. Numbers are unsigned; a leading minus is a separate token.
// Throws SyntaxError on characters outside the grammar.
std::vector<Token> tokenize(std::string_view text);

}  // namespace microcep
