// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "dpcons/ast.hpp"
#include "dpcons/lexer.hpp"

namespace dpcons {

struct ParseResult {
    std::optional<ast::Program> program;
    DiagList diags;
    bool ok() const { return program.has_value() && diags.empty(); }
};

struct DirectiveResult {
    std::optional<ast::Directive> directive;
    DiagList diags;
    bool ok() const { return directive.has_value() && diags.empty(); }
};

// Parses one `#pragma dp clause+` line. Defaults: bufferType=custom,
// totalSize=500 MB, threads/blocks absent. consltdt and work are mandatory.
inline DirectiveResult parse_directive(std::string_view line);

// Parses a whole `.kdl` source into a Program.
inline ParseResult parse_program(std::string_view source);

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view src) : lex_(src) { advance(); }

    ParseResult parse() {
        ParseResult res;
        ast::Program prog;
        bool haveEntry = false;
        while (cur_.kind != Tok::Eof) {
            if (cur_.kind == Tok::Ident && cur_.text == "kernel") {
                auto k = parse_kernel();
                if (!diags_.empty()) break;
                for (const auto& existing : prog.kernels) {
                    if (existing.name == k.name)
                        error("parse.dupkernel", "duplicate kernel name '" + k.name + "'", k.loc);
                }
                if (!diags_.empty()) break;
                prog.kernels.push_back(std::move(k));
            } else if (cur_.kind == Tok::Ident && cur_.text == "global") {
                auto g = parse_global();
                if (!diags_.empty()) break;
                prog.globals.push_back(std::move(g));
            } else if (cur_.kind == Tok::Ident && cur_.text == "entry") {
                if (haveEntry) error("parse.entry", "multiple entry declarations", cur_.loc);
                prog.entry = parse_entry();
                haveEntry = true;
                if (!diags_.empty()) break;
            } else {
                error("parse.syntax", "expected 'kernel', 'global' or 'entry'", cur_.loc);
                break;
            }
        }
        if (!haveEntry && diags_.empty())
            error("parse.entry", "missing entry declaration", cur_.loc);
        if (!diags_.empty()) {
            res.diags = std::move(diags_);
            return res;
        }
        annotate_recursion(prog);
        res.program = std::move(prog);
        return res;
    }

private:
    Lexer lex_;
    Token cur_;
    DiagList diags_;

    void advance() { cur_ = lex_.next(); }

    void error(std::string code, std::string msg, SourceLoc loc) {
        if (diags_.size() < 32) diags_.push_back(make_diag(std::move(code), std::move(msg), loc));
    }

    bool expect(Tok k, const char* what) {
        if (cur_.kind != k) {
            error("parse.syntax", std::string("expected ") + what, cur_.loc);
            return false;
        }
        advance();
        return true;
    }

    bool at_ident(const char* s) const { return cur_.kind == Tok::Ident && cur_.text == s; }

    std::string take_ident(const char* what) {
        if (cur_.kind != Tok::Ident) {
            error("parse.syntax", std::string("expected ") + what, cur_.loc);
            return {};
        }
        std::string n = cur_.text;
        advance();
        return n;
    }

    std::optional<ast::ScalarKind> parse_type_kw() {
        if (at_ident("int")) {
            advance();
            return ast::ScalarKind::Int;
        }
        if (at_ident("float")) {
            advance();
            return ast::ScalarKind::Float;
        }
        return std::nullopt;
    }

    ast::GlobalArrayDecl parse_global() {
        ast::GlobalArrayDecl g;
        g.loc = cur_.loc;
        advance(); // 'global'
        auto t = parse_type_kw();
        if (!t) {
            error("parse.syntax", "expected element type after 'global'", cur_.loc);
            return g;
        }
        g.type = *t;
        g.name = take_ident("global array name");
        expect(Tok::LBracket, "'['");
        g.length = parse_expr();
        expect(Tok::RBracket, "']'");
        expect(Tok::Semi, "';'");
        return g;
    }

    ast::EntryDecl parse_entry() {
        ast::EntryDecl e;
        e.loc = cur_.loc;
        advance(); // 'entry'
        e.kernel = take_ident("entry kernel name");
        expect(Tok::LaunchOpen, "'<<<'");
        e.grid = parse_expr();
        expect(Tok::Comma, "','");
        e.block = parse_expr();
        expect(Tok::LaunchClose, "'>>>'");
        expect(Tok::LParen, "'('");
        if (cur_.kind != Tok::RParen) {
            e.args.push_back(parse_expr());
            while (cur_.kind == Tok::Comma) {
                advance();
                e.args.push_back(parse_expr());
            }
        }
        expect(Tok::RParen, "')'");
        expect(Tok::Semi, "';'");
        return e;
    }

    ast::KernelDef parse_kernel() {
        ast::KernelDef k;
        k.loc = cur_.loc;
        advance(); // 'kernel'
        k.name = take_ident("kernel name");
        expect(Tok::LParen, "'('");
        if (cur_.kind != Tok::RParen) {
            k.params.push_back(parse_param());
            while (cur_.kind == Tok::Comma) {
                advance();
                k.params.push_back(parse_param());
            }
        }
        expect(Tok::RParen, "')'");
        k.body = parse_block();
        return k;
    }

    ast::Param parse_param() {
        ast::Param p;
        auto t = parse_type_kw();
        if (!t) {
            error("parse.syntax", "expected parameter type", cur_.loc);
            return p;
        }
        p.type = *t;
        p.name = take_ident("parameter name");
        if (cur_.kind == Tok::LBracket) {
            advance();
            expect(Tok::RBracket, "']'");
            p.isArray = true;
        }
        return p;
    }

    std::vector<ast::Stmt> parse_block() {
        std::vector<ast::Stmt> stmts;
        if (!expect(Tok::LBrace, "'{'")) return stmts;
        while (cur_.kind != Tok::RBrace && cur_.kind != Tok::Eof && diags_.empty())
            stmts.push_back(parse_stmt());
        expect(Tok::RBrace, "'}'");
        return stmts;
    }

    ast::Stmt parse_stmt() {
        ast::Stmt s;
        s.loc = cur_.loc;
        if (cur_.kind == Tok::Pragma) {
            // Directive attaches to the immediately following launch statement.
            auto dir = parse_directive(cur_.text);
            SourceLoc ploc = cur_.loc;
            for (auto d : dir.diags) diags_.push_back(d);
            advance();
            ast::Stmt launch = parse_stmt();
            if (launch.kind != ast::StmtKind::Launch) {
                error("parse.pragma", "#pragma dp must precede a launch statement", ploc);
                return launch;
            }
            if (dir.directive) {
                dir.directive->loc = ploc;
                launch.directive = std::move(dir.directive);
            }
            return launch;
        }
        if (at_ident("if")) return parse_if();
        if (at_ident("for")) return parse_for();
        if (at_ident("return")) {
            advance();
            expect(Tok::Semi, "';'");
            s.kind = ast::StmtKind::Return;
            return s;
        }
        if (at_ident("barrier_block")) {
            advance();
            expect(Tok::Semi, "';'");
            s.kind = ast::StmtKind::BlockBarrier;
            return s;
        }
        if (at_ident("sync_device")) {
            advance();
            expect(Tok::Semi, "';'");
            s.kind = ast::StmtKind::SyncDevice;
            return s;
        }
        if (at_ident("dp_grid_barrier")) {
            advance();
            expect(Tok::Semi, "';'");
            s.kind = ast::StmtKind::GridBarrier;
            return s;
        }
        if (at_ident("atomicAdd")) {
            advance();
            s.kind = ast::StmtKind::AtomicAdd;
            expect(Tok::LParen, "'('");
            s.name = take_ident("array name");
            expect(Tok::Comma, "','");
            s.exprs.push_back(parse_expr());
            expect(Tok::Comma, "','");
            s.exprs.push_back(parse_expr());
            expect(Tok::RParen, "')'");
            expect(Tok::Semi, "';'");
            return s;
        }
        if (at_ident("dp_buffers")) return parse_buf_decl();
        if (at_ident("dp_insert")) {
            advance();
            s.kind = ast::StmtKind::BufInsert;
            expect(Tok::LParen, "'('");
            s.exprs.push_back(parse_expr());
            while (cur_.kind == Tok::Comma) {
                advance();
                s.exprs.push_back(parse_expr());
            }
            expect(Tok::RParen, "')'");
            expect(Tok::Semi, "';'");
            if (s.exprs.size() < 3)
                error("parse.insert", "dp_insert takes (grid, block, value...)", s.loc);
            return s;
        }
        if (at_ident("int") || at_ident("float")) {
            s.kind = ast::StmtKind::Let;
            s.scalar = *parse_type_kw();
            s.name = take_ident("variable name");
            expect(Tok::Assign, "'='");
            s.exprs.push_back(parse_expr());
            expect(Tok::Semi, "';'");
            return s;
        }
        // name = expr; | name[idx] = expr; | name<<<g,b>>>(args);
        std::string n = take_ident("statement");
        s.name = n;
        if (cur_.kind == Tok::Assign) {
            advance();
            s.kind = ast::StmtKind::Assign;
            s.exprs.push_back(parse_expr());
            expect(Tok::Semi, "';'");
            return s;
        }
        if (cur_.kind == Tok::LBracket) {
            advance();
            s.kind = ast::StmtKind::ArrayStore;
            s.exprs.push_back(parse_expr());
            expect(Tok::RBracket, "']'");
            expect(Tok::Assign, "'='");
            s.exprs.push_back(parse_expr());
            expect(Tok::Semi, "';'");
            return s;
        }
        if (cur_.kind == Tok::LaunchOpen) {
            advance();
            s.kind = ast::StmtKind::Launch;
            s.exprs.push_back(parse_expr());
            expect(Tok::Comma, "','");
            s.exprs.push_back(parse_expr());
            expect(Tok::LaunchClose, "'>>>'");
            expect(Tok::LParen, "'('");
            if (cur_.kind != Tok::RParen) {
                s.exprs.push_back(parse_expr());
                while (cur_.kind == Tok::Comma) {
                    advance();
                    s.exprs.push_back(parse_expr());
                }
            }
            expect(Tok::RParen, "')'");
            expect(Tok::Semi, "';'");
            return s;
        }
        error("parse.syntax", "expected '=', '[' or '<<<' after identifier", cur_.loc);
        return s;
    }

    ast::Stmt parse_if() {
        ast::Stmt s;
        s.loc = cur_.loc;
        s.kind = ast::StmtKind::If;
        advance(); // 'if'
        expect(Tok::LParen, "'('");
        s.exprs.push_back(parse_expr());
        expect(Tok::RParen, "')'");
        s.body = parse_block();
        if (at_ident("else")) {
            advance();
            s.elseBody = parse_block();
        }
        return s;
    }

    ast::Stmt parse_for() {
        ast::Stmt s;
        s.loc = cur_.loc;
        s.kind = ast::StmtKind::For;
        advance(); // 'for'
        expect(Tok::LParen, "'('");
        if (!at_ident("int")) error("parse.for", "for loop variable must be 'int'", cur_.loc);
        else advance();
        s.name = take_ident("loop variable");
        expect(Tok::Assign, "'='");
        s.exprs.push_back(parse_expr());
        expect(Tok::Semi, "';'");
        std::string cmpVar = take_ident("loop variable");
        if (cmpVar != s.name) error("parse.for", "loop condition must test the loop variable", cur_.loc);
        expect(Tok::Lt, "'<'");
        s.exprs.push_back(parse_expr());
        expect(Tok::Semi, "';'");
        std::string stepVar = take_ident("loop variable");
        if (stepVar != s.name) error("parse.for", "loop step must update the loop variable", cur_.loc);
        expect(Tok::PlusAssign, "'+='");
        s.exprs.push_back(parse_expr());
        expect(Tok::RParen, "')'");
        s.body = parse_block();
        return s;
    }

    ast::Stmt parse_buf_decl() {
        ast::Stmt s;
        s.loc = cur_.loc;
        s.kind = ast::StmtKind::BufDecl;
        advance(); // dp_buffers
        expect(Tok::LParen, "'('");
        std::string gran = take_ident("granularity");
        if (gran == "warp") s.gran = ast::Granularity::Warp;
        else if (gran == "block") s.gran = ast::Granularity::Block;
        else if (gran == "grid") s.gran = ast::Granularity::Grid;
        else error("parse.bufdecl", "unknown granularity '" + gran + "'", s.loc);
        expect(Tok::Comma, "','");
        std::string alloc = take_ident("allocator");
        if (alloc == "default") s.bufType = ast::BufferType::Default;
        else if (alloc == "halloc") s.bufType = ast::BufferType::Halloc;
        else if (alloc == "prealloc" || alloc == "custom") s.bufType = ast::BufferType::Custom;
        else error("parse.bufdecl", "unknown allocator '" + alloc + "'", s.loc);
        expect(Tok::Comma, "','");
        if (cur_.kind != Tok::IntLit) error("parse.bufdecl", "expected buffered-variable count", cur_.loc);
        else {
            s.nvars = cur_.ival;
            advance();
        }
        expect(Tok::Comma, "','");
        s.exprs.push_back(parse_expr()); // per-buffer entries
        expect(Tok::Comma, "','");
        if (cur_.kind != Tok::IntLit) error("parse.bufdecl", "expected total pool bytes", cur_.loc);
        else {
            s.totalBytes = cur_.ival;
            advance();
        }
        expect(Tok::RParen, "')'");
        expect(Tok::Semi, "';'");
        return s;
    }

    // Expressions, precedence climbing. Lowest first: || < && < == != < relational < + - < * / %.
    ast::Expr parse_expr() { return parse_or(); }

    ast::Expr parse_or() {
        ast::Expr e = parse_and();
        while (cur_.kind == Tok::OrOr) {
            advance();
            e = ast::binary("||", std::move(e), parse_and());
        }
        return e;
    }

    ast::Expr parse_and() {
        ast::Expr e = parse_equality();
        while (cur_.kind == Tok::AndAnd) {
            advance();
            e = ast::binary("&&", std::move(e), parse_equality());
        }
        return e;
    }

    ast::Expr parse_equality() {
        ast::Expr e = parse_rel();
        while (cur_.kind == Tok::Eq || cur_.kind == Tok::Ne) {
            const char* op = cur_.kind == Tok::Eq ? "==" : "!=";
            advance();
            e = ast::binary(op, std::move(e), parse_rel());
        }
        return e;
    }

    ast::Expr parse_rel() {
        ast::Expr e = parse_add();
        while (cur_.kind == Tok::Lt || cur_.kind == Tok::Le || cur_.kind == Tok::Gt ||
               cur_.kind == Tok::Ge) {
            const char* op = cur_.kind == Tok::Lt   ? "<"
                             : cur_.kind == Tok::Le ? "<="
                             : cur_.kind == Tok::Gt ? ">"
                                                    : ">=";
            advance();
            e = ast::binary(op, std::move(e), parse_add());
        }
        return e;
    }

    ast::Expr parse_add() {
        ast::Expr e = parse_mul();
        while (cur_.kind == Tok::Plus || cur_.kind == Tok::Minus) {
            const char* op = cur_.kind == Tok::Plus ? "+" : "-";
            advance();
            e = ast::binary(op, std::move(e), parse_mul());
        }
        return e;
    }

    ast::Expr parse_mul() {
        ast::Expr e = parse_unary();
        while (cur_.kind == Tok::Star || cur_.kind == Tok::Slash || cur_.kind == Tok::Percent) {
            const char* op = cur_.kind == Tok::Star    ? "*"
                             : cur_.kind == Tok::Slash ? "/"
                                                       : "%";
            advance();
            e = ast::binary(op, std::move(e), parse_unary());
        }
        return e;
    }

    ast::Expr parse_unary() {
        if (cur_.kind == Tok::Minus) {
            advance();
            return ast::unary("-", parse_unary());
        }
        if (cur_.kind == Tok::Not) {
            advance();
            return ast::unary("!", parse_unary());
        }
        return parse_primary();
    }

    ast::Expr parse_primary() {
        ast::Expr e;
        e.loc = cur_.loc;
        switch (cur_.kind) {
            case Tok::IntLit:
                e = ast::int_lit(cur_.ival);
                advance();
                return e;
            case Tok::FloatLit:
                e = ast::float_lit(cur_.fval);
                advance();
                return e;
            case Tok::LParen: {
                advance();
                e = parse_expr();
                expect(Tok::RParen, "')'");
                return e;
            }
            case Tok::Ident:
                break;
            default:
                error("parse.expr", "expected expression", cur_.loc);
                advance();
                return e;
        }
        std::string n = cur_.text;
        SourceLoc nloc = cur_.loc;
        advance();
        if (n == "threadIdx" || n == "blockIdx" || n == "blockDim" || n == "gridDim") {
            e = ast::intrinsic(n);
            e.loc = nloc;
            return e;
        }
        if (n == "min" || n == "max") {
            expect(Tok::LParen, "'('");
            ast::Expr a = parse_expr();
            expect(Tok::Comma, "','");
            ast::Expr b = parse_expr();
            expect(Tok::RParen, "')'");
            e.kind = ast::ExprKind::MinMax;
            e.name = n;
            e.args.push_back(std::move(a));
            e.args.push_back(std::move(b));
            e.loc = nloc;
            return e;
        }
        if (n == "atomicAdd") {
            expect(Tok::LParen, "'('");
            std::string arr = take_ident("array name");
            expect(Tok::Comma, "','");
            ast::Expr idx = parse_expr();
            expect(Tok::Comma, "','");
            ast::Expr val = parse_expr();
            expect(Tok::RParen, "')'");
            e.kind = ast::ExprKind::AtomicAdd;
            e.name = std::move(arr);
            e.args.push_back(std::move(idx));
            e.args.push_back(std::move(val));
            e.loc = nloc;
            return e;
        }
        if (n == "dp_buf_count" || n == "dp_buf_pending" || n == "dp_grid_last") {
            expect(Tok::LParen, "'('");
            expect(Tok::RParen, "')'");
            e.kind = n == "dp_buf_count"     ? ast::ExprKind::BufCount
                     : n == "dp_buf_pending" ? ast::ExprKind::BufPending
                                             : ast::ExprKind::GridLast;
            e.loc = nloc;
            return e;
        }
        if (n == "dp_buf_get" || n == "dp_buf_cfg_grid" || n == "dp_buf_cfg_block") {
            expect(Tok::LParen, "'('");
            ast::Expr idx = parse_expr();
            if (n == "dp_buf_get") {
                expect(Tok::Comma, "','");
                if (cur_.kind != Tok::IntLit) {
                    error("parse.expr", "dp_buf_get slot must be an integer literal", cur_.loc);
                } else {
                    e.args.push_back(ast::int_lit(cur_.ival));
                    advance();
                }
                e.kind = ast::ExprKind::BufGet;
                e.args.insert(e.args.begin(), std::move(idx));
            } else {
                e.kind = n == "dp_buf_cfg_grid" ? ast::ExprKind::BufCfgGrid
                                                : ast::ExprKind::BufCfgBlock;
                e.args.push_back(std::move(idx));
            }
            expect(Tok::RParen, "')'");
            e.loc = nloc;
            return e;
        }
        if (cur_.kind == Tok::LBracket) {
            advance();
            ast::Expr idx = parse_expr();
            expect(Tok::RBracket, "']'");
            e = ast::array_index(std::move(n), std::move(idx));
            e.loc = nloc;
            return e;
        }
        e = ast::name_ref(std::move(n));
        e.loc = nloc;
        return e;
    }

    // Mark kernels that can reach themselves through launch statements.
    static void annotate_recursion(ast::Program& prog) {
        std::map<std::string, std::set<std::string>> edges;
        for (const auto& k : prog.kernels) {
            std::set<std::string> targets;
            collect_launch_targets(k.body, targets);
            edges[k.name] = std::move(targets);
        }
        for (const auto& k : prog.kernels) {
            // DFS from each launch target of k, looking for k.
            std::set<std::string> seen;
            std::vector<std::string> stack(edges[k.name].begin(), edges[k.name].end());
            bool cyc = false;
            while (!stack.empty()) {
                std::string t = stack.back();
                stack.pop_back();
                if (t == k.name) {
                    cyc = true;
                    break;
                }
                if (!seen.insert(t).second) continue;
                auto it = edges.find(t);
                if (it != edges.end())
                    for (const auto& n : it->second) stack.push_back(n);
            }
            if (cyc) prog.recursiveKernels.push_back(k.name);
        }
    }

    static void collect_launch_targets(const std::vector<ast::Stmt>& body,
                                       std::set<std::string>& out) {
        for (const auto& s : body) {
            if (s.kind == ast::StmtKind::Launch) out.insert(s.name);
            collect_launch_targets(s.body, out);
            collect_launch_targets(s.elseBody, out);
        }
    }
};

} // namespace detail

inline DirectiveResult parse_directive(std::string_view line) {
    DirectiveResult res;
    Lexer lex(line);
    Token t = lex.next();
    // The lexer hands the whole pragma line back as one token when the line
    // starts with '#'; re-lex its payload here.
    std::string payload;
    if (t.kind == Tok::Pragma) {
        payload = t.text;
    } else {
        res.diags.push_back(make_diag("dir.syntax", "directive must start with '#pragma dp'", t.loc));
        return res;
    }
    // payload = "#pragma dp clause+"
    std::string_view rest(payload);
    auto eat_word = [&](std::string_view w) {
        size_t i = rest.find_first_not_of(" \t#");
        if (i == std::string_view::npos) return false;
        if (rest.substr(i, w.size()) != w) return false;
        rest.remove_prefix(i + w.size());
        return true;
    };
    if (!eat_word("pragma") || !eat_word("dp")) {
        res.diags.push_back(make_diag("dir.syntax", "directive must start with '#pragma dp'"));
        return res;
    }

    ast::Directive dir;
    bool haveGran = false, haveWork = false;
    Lexer body(rest);
    Token tok = body.next();
    while (tok.kind != Tok::Eof) {
        if (tok.kind != Tok::Ident) {
            res.diags.push_back(make_diag("dir.syntax", "expected clause name", tok.loc));
            return res;
        }
        std::string clause = tok.text;
        tok = body.next();
        if (tok.kind != Tok::LParen) {
            res.diags.push_back(make_diag("dir.syntax", "expected '(' after clause '" + clause + "'", tok.loc));
            return res;
        }
        std::vector<Token> args;
        tok = body.next();
        while (tok.kind != Tok::RParen && tok.kind != Tok::Eof) {
            if (tok.kind != Tok::Comma) args.push_back(tok);
            tok = body.next();
        }
        if (tok.kind != Tok::RParen) {
            res.diags.push_back(make_diag("dir.syntax", "unterminated clause '" + clause + "'", tok.loc));
            return res;
        }
        tok = body.next();

        if (clause == "consltdt") {
            if (args.size() != 1 || args[0].kind != Tok::Ident) {
                res.diags.push_back(make_diag("dir.arg", "consltdt takes one of warp|block|grid"));
                return res;
            }
            if (args[0].text == "warp") dir.granularity = ast::Granularity::Warp;
            else if (args[0].text == "block") dir.granularity = ast::Granularity::Block;
            else if (args[0].text == "grid") dir.granularity = ast::Granularity::Grid;
            else {
                res.diags.push_back(make_diag("dir.arg", "unknown granularity '" + args[0].text + "'"));
                return res;
            }
            haveGran = true;
        } else if (clause == "buffer") {
            if (args.empty() || args[0].kind != Tok::Ident) {
                res.diags.push_back(make_diag("dir.arg", "buffer takes (type[, perBufferSize[, totalSize]])"));
                return res;
            }
            if (args[0].text == "default") dir.bufferType = ast::BufferType::Default;
            else if (args[0].text == "halloc") dir.bufferType = ast::BufferType::Halloc;
            else if (args[0].text == "custom") dir.bufferType = ast::BufferType::Custom;
            else {
                res.diags.push_back(make_diag("dir.arg", "unknown buffer type '" + args[0].text + "'"));
                return res;
            }
            if (args.size() >= 2) {
                // A literal 0 means "unset" (sizes are >= 1); the unparser uses
                // it as a placeholder when only totalSize is given.
                if (args[1].kind == Tok::IntLit) {
                    if (args[1].ival != 0) dir.perBufferSizeLit = args[1].ival;
                } else if (args[1].kind == Tok::Ident) dir.perBufferSizeVar = args[1].text;
                else {
                    res.diags.push_back(make_diag("dir.arg", "perBufferSize must be an integer or a variable name"));
                    return res;
                }
            }
            if (args.size() >= 3) {
                if (args[2].kind != Tok::IntLit) {
                    res.diags.push_back(make_diag("dir.arg", "totalSize must be an integer byte count"));
                    return res;
                }
                dir.totalSizeBytes = args[2].ival;
            }
            if (args.size() > 3) {
                res.diags.push_back(make_diag("dir.arg", "too many buffer arguments"));
                return res;
            }
        } else if (clause == "work") {
            if (args.empty()) {
                res.diags.push_back(make_diag("dir.arg", "work takes a nonempty variable list"));
                return res;
            }
            for (const auto& a : args) {
                if (a.kind != Tok::Ident) {
                    res.diags.push_back(make_diag("dir.arg", "work variables must be identifiers"));
                    return res;
                }
                dir.workVars.push_back(a.text);
            }
            haveWork = true;
        } else if (clause == "threads") {
            if (args.size() != 1 || args[0].kind != Tok::IntLit || args[0].ival < 1) {
                res.diags.push_back(make_diag("dir.arg", "threads takes one positive integer"));
                return res;
            }
            dir.threadsOverride = args[0].ival;
        } else if (clause == "blocks") {
            if (args.size() != 1 || args[0].kind != Tok::IntLit || args[0].ival < 1) {
                res.diags.push_back(make_diag("dir.arg", "blocks takes one positive integer"));
                return res;
            }
            dir.blocksOverride = args[0].ival;
        } else {
            res.diags.push_back(make_diag("dir.clause", "unknown clause '" + clause + "'"));
            return res;
        }
    }
    if (!haveGran) {
        res.diags.push_back(make_diag("dir.missing", "missing mandatory consltdt clause"));
        return res;
    }
    if (!haveWork) {
        res.diags.push_back(make_diag("dir.missing", "missing mandatory work clause"));
        return res;
    }
    res.directive = std::move(dir);
    return res;
}

inline ParseResult parse_program(std::string_view source) {
    detail::Parser p(source);
    return p.parse();
}

} // namespace dpcons
