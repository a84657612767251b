#include "microcep/lexer.hpp"

#include <cctype>

#include "microcep/errors.hpp"

namespace microcep {

std::string_view token_kind_name(TokenKind kind) noexcept {
    switch (kind) {
        case TokenKind::Identifier: return "identifier";
        case TokenKind::Number: return "number";
        case TokenKind::LBracket: return "'['";
        case TokenKind::RBracket: return "']'";
        case TokenKind::LParen: return "'('";
        case TokenKind::RParen: return "')'";
        case TokenKind::LBrace: return "'{'";
        case TokenKind::RBrace: return "'}'";
        case TokenKind::Comma: return "','";
        case TokenKind::Dot: return "'.'";
        case TokenKind::Star: return "'*'";
        case TokenKind::Plus: return "'+'";
        case TokenKind::Minus: return "'-'";
        case TokenKind::Slash: return "'/'";
        case TokenKind::Implies: return "':-'";
        case TokenKind::Assign: return "':='";
        case TokenKind::Less: return "'<'";
        case TokenKind::Greater: return "'>'";
        case TokenKind::LessEq: return "'<='";
        case TokenKind::GreaterEq: return "'>='";
        case TokenKind::Equal: return "'=='";
        case TokenKind::NotEqual: return "'!='";
        case TokenKind::End: return "end of input";
    }
    return "?";
}

namespace {

bool ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) != 0 || c == '_';
}

bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

bool digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    const std::size_t n = text.size();

    auto push = [&](TokenKind kind, std::size_t start, std::size_t len) {
        tokens.push_back(Token{kind, std::string(text.substr(start, len)), start});
        i = start + len;
    };

    while (i < n) {
        const char c = text[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '%') {
            while (i < n && text[i] != '\n') ++i;
            continue;
        }
        if (ident_start(c)) {
            std::size_t j = i + 1;
            while (j < n && ident_char(text[j])) ++j;
            push(TokenKind::Identifier, i, j - i);
            continue;
        }
        if (digit(c)) {
            std::size_t j = i;
            while (j < n && digit(text[j])) ++j;
            if (j + 1 < n && text[j] == '.' && digit(text[j + 1])) {
                ++j;
                while (j < n && digit(text[j])) ++j;
            }
            if (j < n && (text[j] == 'e' || text[j] == 'E')) {
                std::size_t k = j + 1;
                if (k < n && (text[k] == '+' || text[k] == '-')) ++k;
                if (k < n && digit(text[k])) {
                    while (k < n && digit(text[k])) ++k;
                    j = k;
                }
            }
            push(TokenKind::Number, i, j - i);
            continue;
        }
        const char next = i + 1 < n ? text[i + 1] : '\0';
        switch (c) {
            case '[': push(TokenKind::LBracket, i, 1); continue;
            case ']': push(TokenKind::RBracket, i, 1); continue;
            case '(': push(TokenKind::LParen, i, 1); continue;
            case ')': push(TokenKind::RParen, i, 1); continue;
            case '{': push(TokenKind::LBrace, i, 1); continue;
            case '}': push(TokenKind::RBrace, i, 1); continue;
            case ',': push(TokenKind::Comma, i, 1); continue;
            case '.': push(TokenKind::Dot, i, 1); continue;
            case '*': push(TokenKind::Star, i, 1); continue;
            case '+': push(TokenKind::Plus, i, 1); continue;
            case '-': push(TokenKind::Minus, i, 1); continue;
            case '/': push(TokenKind::Slash, i, 1); continue;
            case ':':
                if (next == '-') { push(TokenKind::Implies, i, 2); continue; }
                if (next == '=') { push(TokenKind::Assign, i, 2); continue; }
                break;
            case '<':
                if (next == '=') push(TokenKind::LessEq, i, 2);
                else push(TokenKind::Less, i, 1);
                continue;
            case '>':
                if (next == '=') push(TokenKind::GreaterEq, i, 2);
                else push(TokenKind::Greater, i, 1);
                continue;
            case '=':
                if (next == '=') { push(TokenKind::Equal, i, 2); continue; }
                break;
            case '!':
                if (next == '=') { push(TokenKind::NotEqual, i, 2); continue; }
                break;
            default:
                break;
        }
        throw SyntaxError(i, "unexpected character");
    }
    tokens.push_back(Token{TokenKind::End, "", n});
    return tokens;
}

}  // namespace microcep
