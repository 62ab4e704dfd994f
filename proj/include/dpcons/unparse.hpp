// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cinttypes>
#include <cstdio>
#include <string>

#include "dpcons/ast.hpp"

// Deterministic printer for Programs. Output reparses to a structurally
// equal AST, which the golden tests rely on.

namespace dpcons {

namespace detail {

inline int binop_prec(const std::string& op) {
    if (op == "*" || op == "/" || op == "%") return 6;
    if (op == "+" || op == "-") return 5;
    if (op == "<" || op == "<=" || op == ">" || op == ">=") return 4;
    if (op == "==" || op == "!=") return 3;
    if (op == "&&") return 2;
    return 1; // ||
}

inline std::string float_text(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    std::string s(buf);
    // Keep a decimal point or exponent so the token re-lexes as a float.
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find('E') == std::string::npos)
        s += ".0";
    return s;
}

class Printer {
public:
    std::string out;

    void program(const ast::Program& p) {
        for (const auto& g : p.globals) {
            out += "global ";
            out += g.type == ast::ScalarKind::Int ? "int " : "float ";
            out += g.name;
            out += "[";
            expr(g.length, 0);
            out += "];\n";
        }
        if (!p.globals.empty()) out += "\n";
        for (const auto& k : p.kernels) {
            kernel(k);
            out += "\n";
        }
        out += "entry ";
        out += p.entry.kernel;
        out += "<<<";
        expr(p.entry.grid, 0);
        out += ", ";
        expr(p.entry.block, 0);
        out += ">>>(";
        for (size_t i = 0; i < p.entry.args.size(); i++) {
            if (i) out += ", ";
            expr(p.entry.args[i], 0);
        }
        out += ");\n";
    }

    void kernel(const ast::KernelDef& k) {
        out += "kernel ";
        out += k.name;
        out += "(";
        for (size_t i = 0; i < k.params.size(); i++) {
            if (i) out += ", ";
            out += k.params[i].type == ast::ScalarKind::Int ? "int " : "float ";
            out += k.params[i].name;
            if (k.params[i].isArray) out += "[]";
        }
        out += ") {\n";
        stmts(k.body, 1);
        out += "}\n";
    }

    void stmts(const std::vector<ast::Stmt>& body, int depth) {
        for (const auto& s : body) stmt(s, depth);
    }

    void stmt(const ast::Stmt& s, int depth) {
        using ast::StmtKind;
        switch (s.kind) {
            case StmtKind::Let:
                indent(depth);
                out += s.scalar == ast::ScalarKind::Int ? "int " : "float ";
                out += s.name;
                out += " = ";
                expr(s.exprs[0], 0);
                out += ";\n";
                break;
            case StmtKind::Assign:
                indent(depth);
                out += s.name;
                out += " = ";
                expr(s.exprs[0], 0);
                out += ";\n";
                break;
            case StmtKind::ArrayStore:
                indent(depth);
                out += s.name;
                out += "[";
                expr(s.exprs[0], 0);
                out += "] = ";
                expr(s.exprs[1], 0);
                out += ";\n";
                break;
            case StmtKind::AtomicAdd:
                indent(depth);
                out += "atomicAdd(";
                out += s.name;
                out += ", ";
                expr(s.exprs[0], 0);
                out += ", ";
                expr(s.exprs[1], 0);
                out += ");\n";
                break;
            case StmtKind::If:
                indent(depth);
                out += "if (";
                expr(s.exprs[0], 0);
                out += ") {\n";
                stmts(s.body, depth + 1);
                indent(depth);
                if (!s.elseBody.empty()) {
                    out += "} else {\n";
                    stmts(s.elseBody, depth + 1);
                    indent(depth);
                }
                out += "}\n";
                break;
            case StmtKind::For:
                indent(depth);
                out += "for (int ";
                out += s.name;
                out += " = ";
                expr(s.exprs[0], 0);
                out += "; ";
                out += s.name;
                out += " < ";
                expr(s.exprs[1], 0);
                out += "; ";
                out += s.name;
                out += " += ";
                expr(s.exprs[2], 0);
                out += ") {\n";
                stmts(s.body, depth + 1);
                indent(depth);
                out += "}\n";
                break;
            case StmtKind::BlockBarrier:
                indent(depth);
                out += "barrier_block;\n";
                break;
            case StmtKind::SyncDevice:
                indent(depth);
                out += "sync_device;\n";
                break;
            case StmtKind::GridBarrier:
                indent(depth);
                out += "dp_grid_barrier;\n";
                break;
            case StmtKind::Return:
                indent(depth);
                out += "return;\n";
                break;
            case StmtKind::Launch: {
                if (s.directive) {
                    indent(depth);
                    directive(*s.directive);
                }
                indent(depth);
                out += s.name;
                out += "<<<";
                expr(s.exprs[0], 0);
                out += ", ";
                expr(s.exprs[1], 0);
                out += ">>>(";
                for (size_t i = 2; i < s.exprs.size(); i++) {
                    if (i > 2) out += ", ";
                    expr(s.exprs[i], 0);
                }
                out += ");\n";
                break;
            }
            case StmtKind::BufDecl: {
                indent(depth);
                out += "dp_buffers(";
                out += ast::to_string(s.gran);
                out += ", ";
                out += s.bufType == ast::BufferType::Default  ? "default"
                       : s.bufType == ast::BufferType::Halloc ? "halloc"
                                                              : "prealloc";
                out += ", ";
                out += std::to_string(s.nvars);
                out += ", ";
                expr(s.exprs[0], 0);
                out += ", ";
                out += std::to_string(s.totalBytes);
                out += ");\n";
                break;
            }
            case StmtKind::BufInsert: {
                indent(depth);
                out += "dp_insert(";
                for (size_t i = 0; i < s.exprs.size(); i++) {
                    if (i) out += ", ";
                    expr(s.exprs[i], 0);
                }
                out += ");\n";
                break;
            }
        }
    }

    void directive(const ast::Directive& d) {
        out += "#pragma dp consltdt(";
        out += ast::to_string(d.granularity);
        out += ")";
        out += " buffer(";
        out += ast::to_string(d.bufferType);
        if (d.perBufferSizeLit) {
            out += ", " + std::to_string(*d.perBufferSizeLit);
        } else if (d.perBufferSizeVar) {
            out += ", " + *d.perBufferSizeVar;
        }
        if (d.totalSizeBytes != ast::Directive::kDefaultTotalSizeBytes) {
            if (!d.perBufferSizeLit && !d.perBufferSizeVar) out += ", 0";
            out += ", " + std::to_string(d.totalSizeBytes);
        }
        out += ")";
        out += " work(";
        for (size_t i = 0; i < d.workVars.size(); i++) {
            if (i) out += ", ";
            out += d.workVars[i];
        }
        out += ")";
        if (d.threadsOverride) out += " threads(" + std::to_string(*d.threadsOverride) + ")";
        if (d.blocksOverride) out += " blocks(" + std::to_string(*d.blocksOverride) + ")";
        out += "\n";
    }

    void expr(const ast::Expr& e, int parentPrec) {
        using ast::ExprKind;
        switch (e.kind) {
            case ExprKind::IntLit:
                out += std::to_string(e.ival);
                break;
            case ExprKind::FloatLit:
                out += float_text(e.fval);
                break;
            case ExprKind::Name:
            case ExprKind::Intrinsic:
                out += e.name;
                break;
            case ExprKind::ArrayIndex:
                out += e.name;
                out += "[";
                expr(e.args[0], 0);
                out += "]";
                break;
            case ExprKind::Unary:
                out += e.name;
                if (e.args[0].kind == ExprKind::Binary || e.args[0].kind == ExprKind::Unary) {
                    out += "(";
                    expr(e.args[0], 0);
                    out += ")";
                } else {
                    expr(e.args[0], 7);
                }
                break;
            case ExprKind::Binary: {
                int prec = binop_prec(e.name);
                bool paren = prec < parentPrec;
                if (paren) out += "(";
                expr(e.args[0], prec);
                out += " ";
                out += e.name;
                out += " ";
                expr(e.args[1], prec + 1);
                if (paren) out += ")";
                break;
            }
            case ExprKind::MinMax:
                out += e.name;
                out += "(";
                expr(e.args[0], 0);
                out += ", ";
                expr(e.args[1], 0);
                out += ")";
                break;
            case ExprKind::AtomicAdd:
                out += "atomicAdd(";
                out += e.name;
                out += ", ";
                expr(e.args[0], 0);
                out += ", ";
                expr(e.args[1], 0);
                out += ")";
                break;
            case ExprKind::BufCount:
                out += "dp_buf_count()";
                break;
            case ExprKind::BufPending:
                out += "dp_buf_pending()";
                break;
            case ExprKind::GridLast:
                out += "dp_grid_last()";
                break;
            case ExprKind::BufGet:
                out += "dp_buf_get(";
                expr(e.args[0], 0);
                out += ", ";
                out += std::to_string(e.args[1].ival);
                out += ")";
                break;
            case ExprKind::BufCfgGrid:
                out += "dp_buf_cfg_grid(";
                expr(e.args[0], 0);
                out += ")";
                break;
            case ExprKind::BufCfgBlock:
                out += "dp_buf_cfg_block(";
                expr(e.args[0], 0);
                out += ")";
                break;
        }
    }

    void indent(int depth) {
        for (int i = 0; i < depth; i++) out += "  ";
    }
};

} // namespace detail

inline std::string unparse(const ast::Program& p) {
    detail::Printer pr;
    pr.program(p);
    return pr.out;
}

inline std::string unparse(const ast::KernelDef& k) {
    detail::Printer pr;
    pr.kernel(k);
    return pr.out;
}

} // namespace dpcons
