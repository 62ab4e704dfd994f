// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dpcons/ast.hpp"

namespace dpcons {

// Static checks over a parsed Program. Returns an empty list iff the program
// is well-formed and (when annotated) transformable:
//   - launch targets exist, exactly resolvable; entry kernel exists
//   - every name is declared before use; no shadowing; types are consistent
//   - barrier_block never sits under a conditional (divergent) branch
//   - at most one directive-annotated launch site per kernel, not inside a for
//   - directive work vars are in scope at the launch site and appear as
//     launch arguments; perBufferSize variables are in scope
inline DiagList validate(const ast::Program& prog);

namespace detail {

enum class SymType { Int, Float, IntArray, FloatArray };

struct Scope {
    std::vector<std::map<std::string, SymType>> levels;

    void push() { levels.emplace_back(); }
    void pop() { levels.pop_back(); }

    bool declare(const std::string& n, SymType t) {
        for (const auto& lvl : levels)
            if (lvl.count(n)) return false;
        levels.back()[n] = t;
        return true;
    }

    const SymType* lookup(const std::string& n) const {
        for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
            auto f = it->find(n);
            if (f != it->end()) return &f->second;
        }
        return nullptr;
    }
};

class Validator {
public:
    explicit Validator(const ast::Program& prog) : prog_(prog) {}

    DiagList run() {
        if (!prog_.find_kernel(prog_.entry.kernel))
            diag("val.entry", "entry kernel '" + prog_.entry.kernel + "' is not declared",
                 prog_.entry.loc);
        {
            std::set<std::string> seen;
            for (const auto& g : prog_.globals)
                if (!seen.insert(g.name).second)
                    diag("val.dupglobal", "duplicate global array '" + g.name + "'", g.loc);
        }
        for (const auto& k : prog_.kernels) check_kernel(k);
        return diags_;
    }

private:
    const ast::Program& prog_;
    DiagList diags_;
    // per-kernel state
    Scope scope_;
    int annotatedSites_ = 0;
    const ast::KernelDef* kernel_ = nullptr;

    void diag(std::string code, std::string msg, SourceLoc loc) {
        diags_.push_back(make_diag(std::move(code), std::move(msg), loc));
    }

    static SymType param_type(const ast::Param& p) {
        if (p.isArray)
            return p.type == ast::ScalarKind::Int ? SymType::IntArray : SymType::FloatArray;
        return p.type == ast::ScalarKind::Int ? SymType::Int : SymType::Float;
    }

    void check_kernel(const ast::KernelDef& k) {
        kernel_ = &k;
        annotatedSites_ = 0;
        scope_.levels.clear();
        scope_.push();
        for (const auto& g : prog_.globals)
            scope_.declare(g.name, g.type == ast::ScalarKind::Int ? SymType::IntArray
                                                                  : SymType::FloatArray);
        scope_.push();
        for (const auto& p : k.params)
            if (!scope_.declare(p.name, param_type(p)))
                diag("val.shadow", "parameter '" + p.name + "' shadows another name", k.loc);
        check_body(k.body, /*divergent=*/false, /*inFor=*/false);
        scope_.pop();
        scope_.pop();
    }

    void check_body(const std::vector<ast::Stmt>& body, bool divergent, bool inFor) {
        scope_.push();
        for (const auto& s : body) check_stmt(s, divergent, inFor);
        scope_.pop();
    }

    void check_stmt(const ast::Stmt& s, bool divergent, bool inFor) {
        using ast::StmtKind;
        switch (s.kind) {
            case StmtKind::Let:
                check_expr(s.exprs[0]);
                if (!scope_.declare(s.name, s.scalar == ast::ScalarKind::Int ? SymType::Int
                                                                             : SymType::Float))
                    diag("val.shadow", "declaration of '" + s.name + "' shadows another name",
                         s.loc);
                break;
            case StmtKind::Assign: {
                const SymType* t = scope_.lookup(s.name);
                if (!t) diag("val.undeclared", "assignment to undeclared '" + s.name + "'", s.loc);
                else if (*t == SymType::IntArray || *t == SymType::FloatArray)
                    diag("val.type", "cannot assign to array '" + s.name + "'", s.loc);
                check_expr(s.exprs[0]);
                break;
            }
            case StmtKind::ArrayStore:
            case StmtKind::AtomicAdd: {
                const SymType* t = scope_.lookup(s.name);
                if (!t) diag("val.undeclared", "use of undeclared array '" + s.name + "'", s.loc);
                else if (*t != SymType::IntArray && *t != SymType::FloatArray)
                    diag("val.type", "'" + s.name + "' is not an array", s.loc);
                check_expr(s.exprs[0]);
                check_expr(s.exprs[1]);
                break;
            }
            case StmtKind::If:
                check_expr(s.exprs[0]);
                check_body(s.body, /*divergent=*/true, inFor);
                check_body(s.elseBody, /*divergent=*/true, inFor);
                break;
            case StmtKind::For: {
                check_expr(s.exprs[0]);
                scope_.push();
                if (!scope_.declare(s.name, SymType::Int))
                    diag("val.shadow", "loop variable '" + s.name + "' shadows another name",
                         s.loc);
                check_expr(s.exprs[1]);
                check_expr(s.exprs[2]);
                for (const auto& inner : s.body) check_stmt(inner, divergent, /*inFor=*/true);
                scope_.pop();
                break;
            }
            case StmtKind::BlockBarrier:
                if (divergent)
                    diag("val.barrier", "barrier in divergent code", s.loc);
                break;
            case StmtKind::SyncDevice:
            case StmtKind::GridBarrier:
            case StmtKind::Return:
                break;
            case StmtKind::Launch:
                check_launch(s, inFor);
                break;
            case StmtKind::BufDecl:
                check_expr(s.exprs[0]);
                break;
            case StmtKind::BufInsert:
                for (const auto& e : s.exprs) check_expr(e);
                break;
        }
    }

    void check_launch(const ast::Stmt& s, bool inFor) {
        const ast::KernelDef* target = prog_.find_kernel(s.name);
        if (!target) {
            diag("val.launchtarget", "launch of undeclared kernel '" + s.name + "'", s.loc);
            return;
        }
        for (const auto& e : s.exprs) check_expr(e);
        size_t argc = s.exprs.size() - 2;
        if (argc != target->params.size()) {
            diag("val.launchargs",
                 "kernel '" + s.name + "' expects " + std::to_string(target->params.size()) +
                     " arguments, got " + std::to_string(argc),
                 s.loc);
        } else {
            for (size_t i = 0; i < argc; i++) {
                const ast::Param& p = target->params[i];
                if (p.isArray) {
                    const ast::Expr& a = s.exprs[i + 2];
                    const SymType* t =
                        a.kind == ast::ExprKind::Name ? scope_.lookup(a.name) : nullptr;
                    bool okArr = t && ((*t == SymType::IntArray &&
                                        p.type == ast::ScalarKind::Int) ||
                                       (*t == SymType::FloatArray &&
                                        p.type == ast::ScalarKind::Float));
                    if (!okArr)
                        diag("val.launchargs",
                             "argument " + std::to_string(i + 1) + " of '" + s.name +
                                 "' must be a matching array name",
                             s.loc);
                }
            }
        }
        if (!s.directive) return;

        annotatedSites_++;
        if (annotatedSites_ > 1)
            diag("val.multisite", "multiple consolidation sites in kernel '" + kernel_->name + "'",
                 s.loc);
        if (inFor)
            diag("val.siteinloop", "annotated launch may not sit inside a for loop", s.loc);
        const ast::Directive& d = *s.directive;
        for (const auto& w : d.workVars) {
            if (!scope_.lookup(w)) {
                diag("val.workscope", "work variable not in scope: '" + w + "'", s.loc);
                continue;
            }
            bool found = false;
            for (size_t i = 2; i < s.exprs.size(); i++)
                if (s.exprs[i].kind == ast::ExprKind::Name && s.exprs[i].name == w) found = true;
            if (!found)
                diag("val.workarg",
                     "work variable '" + w + "' must be passed as a launch argument", s.loc);
        }
        if (d.perBufferSizeVar && !scope_.lookup(*d.perBufferSizeVar))
            diag("val.bufsizescope",
                 "perBufferSize variable not in scope: '" + *d.perBufferSizeVar + "'", s.loc);
    }

    void check_expr(const ast::Expr& e) {
        using ast::ExprKind;
        switch (e.kind) {
            case ExprKind::Name: {
                if (!scope_.lookup(e.name))
                    diag("val.undeclared", "use of undeclared '" + e.name + "'", e.loc);
                break;
            }
            case ExprKind::ArrayIndex:
            case ExprKind::AtomicAdd: {
                const SymType* t = scope_.lookup(e.name);
                if (!t)
                    diag("val.undeclared", "use of undeclared array '" + e.name + "'", e.loc);
                else if (*t != SymType::IntArray && *t != SymType::FloatArray)
                    diag("val.type", "'" + e.name + "' is not an array", e.loc);
                break;
            }
            default:
                break;
        }
        for (const auto& a : e.args) check_expr(a);
    }
};

} // namespace detail

inline DiagList validate(const ast::Program& prog) {
    detail::Validator v(prog);
    return v.run();
}

} // namespace dpcons
