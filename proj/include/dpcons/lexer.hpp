// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dpcons/diag.hpp"

namespace dpcons {

enum class Tok {
    Eof,
    Ident,
    IntLit,
    FloatLit,
    Pragma,   // a full `#pragma ...` line; text holds everything after '#'
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Assign,    // =
    PlusAssign,// +=
    LaunchOpen, // <<<
    LaunchClose,// >>>
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    AndAnd,
    OrOr,
    Not,
};

struct Token {
    Tok kind = Tok::Eof;
    std::string text;
    std::int64_t ival = 0;
    double fval = 0.0;
    SourceLoc loc;
};

// Hand-rolled lexer; `//` comments run to end of line. `#pragma` lines are
// captured whole so directives can be parsed on their own.
class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        skip_ws_and_comments();
        Token t;
        t.loc = loc();
        if (pos_ >= src_.size()) {
            t.kind = Tok::Eof;
            return t;
        }
        char c = src_[pos_];
        if (c == '#') {
            size_t end = src_.find('\n', pos_);
            if (end == std::string_view::npos) end = src_.size();
            t.kind = Tok::Pragma;
            t.text = std::string(src_.substr(pos_, end - pos_));
            advance_to(end);
            return t;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                bump();
            t.kind = Tok::Ident;
            t.text = std::string(src_.substr(start, pos_ - start));
            return t;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) return lex_number();
        return lex_symbol();
    }

    bool had_error() const { return !errors_.empty(); }
    const DiagList& errors() const { return errors_; }

private:
    std::string_view src_;
    size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
    DiagList errors_;

    SourceLoc loc() const { return SourceLoc{line_, col_}; }

    void bump() {
        if (src_[pos_] == '\n') {
            line_++;
            col_ = 1;
        } else {
            col_++;
        }
        pos_++;
    }

    void advance_to(size_t target) {
        while (pos_ < target) bump();
    }

    void skip_ws_and_comments() {
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                bump();
            } else if (c == '/' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '/') {
                while (pos_ < src_.size() && src_[pos_] != '\n') bump();
            } else {
                break;
            }
        }
    }

    Token lex_number() {
        Token t;
        t.loc = loc();
        size_t start = pos_;
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) bump();
        bool isFloat = false;
        if (pos_ < src_.size() && src_[pos_] == '.') {
            isFloat = true;
            bump();
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) bump();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            isFloat = true;
            bump();
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) bump();
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) bump();
        }
        std::string text(src_.substr(start, pos_ - start));
        if (isFloat) {
            t.kind = Tok::FloatLit;
            t.fval = std::stod(text);
        } else {
            t.kind = Tok::IntLit;
            t.ival = std::stoll(text);
        }
        t.text = std::move(text);
        return t;
    }

    Token lex_symbol() {
        Token t;
        t.loc = loc();
        auto two = [&](char a, char b) {
            return src_[pos_] == a && pos_ + 1 < src_.size() && src_[pos_ + 1] == b;
        };
        if (pos_ + 2 < src_.size() && src_.substr(pos_, 3) == "<<<") {
            t.kind = Tok::LaunchOpen;
            bump(); bump(); bump();
            return t;
        }
        if (pos_ + 2 < src_.size() && src_.substr(pos_, 3) == ">>>") {
            t.kind = Tok::LaunchClose;
            bump(); bump(); bump();
            return t;
        }
        if (two('<', '=')) { t.kind = Tok::Le; bump(); bump(); return t; }
        if (two('>', '=')) { t.kind = Tok::Ge; bump(); bump(); return t; }
        if (two('=', '=')) { t.kind = Tok::Eq; bump(); bump(); return t; }
        if (two('!', '=')) { t.kind = Tok::Ne; bump(); bump(); return t; }
        if (two('&', '&')) { t.kind = Tok::AndAnd; bump(); bump(); return t; }
        if (two('|', '|')) { t.kind = Tok::OrOr; bump(); bump(); return t; }
        if (two('+', '=')) { t.kind = Tok::PlusAssign; bump(); bump(); return t; }
        char c = src_[pos_];
        bump();
        switch (c) {
            case '(': t.kind = Tok::LParen; return t;
            case ')': t.kind = Tok::RParen; return t;
            case '{': t.kind = Tok::LBrace; return t;
            case '}': t.kind = Tok::RBrace; return t;
            case '[': t.kind = Tok::LBracket; return t;
            case ']': t.kind = Tok::RBracket; return t;
            case ',': t.kind = Tok::Comma; return t;
            case ';': t.kind = Tok::Semi; return t;
            case '=': t.kind = Tok::Assign; return t;
            case '+': t.kind = Tok::Plus; return t;
            case '-': t.kind = Tok::Minus; return t;
            case '*': t.kind = Tok::Star; return t;
            case '/': t.kind = Tok::Slash; return t;
            case '%': t.kind = Tok::Percent; return t;
            case '<': t.kind = Tok::Lt; return t;
            case '>': t.kind = Tok::Gt; return t;
            case '!': t.kind = Tok::Not; return t;
            default:
                errors_.push_back(make_diag("lex.badchar",
                                            std::string("unexpected character '") + c + "'", t.loc));
                return next();
        }
    }
};

} // namespace dpcons
