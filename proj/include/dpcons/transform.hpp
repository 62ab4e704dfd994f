// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dpcons/ast.hpp"
#include "dpcons/config.hpp"
#include "dpcons/validate.hpp"

// Workload-consolidation rewrite. An annotated launch site is replaced by
// buffer insertions; the child kernel is rewritten to drain the buffer; a
// selected thread per warp/block/grid launches the consolidated child. At
// grid level the postwork is extracted into its own kernel and the global
// barrier is realized by the counter/exit protocol.

namespace dpcons {

struct ChildShape {
    enum class Kind { SoloThread, SoloBlock, MultiBlock };
    Kind kind = Kind::SoloThread;
    bool moldable = true;

    const char* name() const {
        switch (kind) {
            case Kind::SoloThread: return "solo-thread";
            case Kind::SoloBlock: return "solo-block";
            case Kind::MultiBlock: return "multi-block";
        }
        return "?";
    }
};

namespace detail {

inline bool is_static_one(const ast::Expr& e) {
    return e.kind == ast::ExprKind::IntLit && e.ival == 1;
}

// Canonical grid-stride forms: `blockIdx * blockDim + threadIdx` and
// `gridDim * blockDim`. Any other use of gridDim/blockDim makes a
// multi-block child non-moldable.
inline bool is_canonical_gts(const ast::Expr& e) {
    using ast::ExprKind;
    if (e.kind != ExprKind::Binary) return false;
    if (e.name == "+") {
        const ast::Expr& l = e.args[0];
        const ast::Expr& r = e.args[1];
        return l.kind == ExprKind::Binary && l.name == "*" &&
               l.args[0].kind == ExprKind::Intrinsic && l.args[0].name == "blockIdx" &&
               l.args[1].kind == ExprKind::Intrinsic && l.args[1].name == "blockDim" &&
               r.kind == ExprKind::Intrinsic && r.name == "threadIdx";
    }
    if (e.name == "*") {
        return e.args[0].kind == ExprKind::Intrinsic && e.args[0].name == "gridDim" &&
               e.args[1].kind == ExprKind::Intrinsic && e.args[1].name == "blockDim";
    }
    return false;
}

inline bool only_canonical_dims(const ast::Expr& e) {
    using ast::ExprKind;
    if (is_canonical_gts(e)) return true;
    if (e.kind == ExprKind::Intrinsic && (e.name == "gridDim" || e.name == "blockDim"))
        return false;
    for (const auto& a : e.args)
        if (!only_canonical_dims(a)) return false;
    return true;
}

inline bool body_only_canonical_dims(const std::vector<ast::Stmt>& body) {
    for (const auto& s : body) {
        for (const auto& e : s.exprs)
            if (!only_canonical_dims(e)) return false;
        if (!body_only_canonical_dims(s.body)) return false;
        if (!body_only_canonical_dims(s.elseBody)) return false;
    }
    return true;
}

// ---- expression / statement rewriting ----

using IntrinsicSubst = std::map<std::string, ast::Expr>;

inline ast::Expr subst_expr(const ast::Expr& e, const IntrinsicSubst& subst) {
    if (e.kind == ast::ExprKind::Intrinsic) {
        auto it = subst.find(e.name);
        if (it != subst.end()) return it->second;
    }
    ast::Expr out = e;
    out.args.clear();
    for (const auto& a : e.args) out.args.push_back(subst_expr(a, subst));
    return out;
}

inline std::vector<ast::Stmt> subst_stmts(const std::vector<ast::Stmt>& body,
                                          const IntrinsicSubst& subst) {
    std::vector<ast::Stmt> out;
    out.reserve(body.size());
    for (const auto& s : body) {
        ast::Stmt n = s;
        n.exprs.clear();
        for (const auto& e : s.exprs) n.exprs.push_back(subst_expr(e, subst));
        n.body = subst_stmts(s.body, subst);
        n.elseBody = subst_stmts(s.elseBody, subst);
        out.push_back(std::move(n));
    }
    return out;
}

// Replace the (unique) annotated launch with replacement statements.
inline bool replace_annotated_launch(std::vector<ast::Stmt>& body,
                                     const std::vector<ast::Stmt>& replacement) {
    for (size_t i = 0; i < body.size(); i++) {
        if (body[i].kind == ast::StmtKind::Launch && body[i].directive) {
            body.erase(body.begin() + static_cast<std::ptrdiff_t>(i));
            body.insert(body.begin() + static_cast<std::ptrdiff_t>(i), replacement.begin(),
                        replacement.end());
            return true;
        }
        if (replace_annotated_launch(body[i].body, replacement)) return true;
        if (replace_annotated_launch(body[i].elseBody, replacement)) return true;
    }
    return false;
}

inline const ast::Stmt* find_annotated_launch(const std::vector<ast::Stmt>& body) {
    for (const auto& s : body) {
        if (s.kind == ast::StmtKind::Launch && s.directive) return &s;
        if (const ast::Stmt* r = find_annotated_launch(s.body)) return r;
        if (const ast::Stmt* r = find_annotated_launch(s.elseBody)) return r;
    }
    return nullptr;
}

inline bool body_contains(const std::vector<ast::Stmt>& body, ast::StmtKind kind) {
    for (const auto& s : body) {
        if (s.kind == kind) return true;
        if (body_contains(s.body, kind) || body_contains(s.elseBody, kind)) return true;
    }
    return false;
}

// ---- read/write sets (name level, statement granularity) ----

inline void expr_names(const ast::Expr& e, std::set<std::string>& scalars,
                       std::set<std::string>& arrays) {
    if (e.kind == ast::ExprKind::Name) scalars.insert(e.name);
    if (e.kind == ast::ExprKind::ArrayIndex || e.kind == ast::ExprKind::AtomicAdd)
        arrays.insert(e.name);
    for (const auto& a : e.args) expr_names(a, scalars, arrays);
}

struct RwSets {
    std::set<std::string> scalarReads;
    std::set<std::string> scalarWrites;
    std::set<std::string> arrayReads;
    std::set<std::string> arrayWrites;
};

inline void stmt_rw(const ast::Stmt& s, RwSets& rw) {
    using ast::StmtKind;
    for (const auto& e : s.exprs) expr_names(e, rw.scalarReads, rw.arrayReads);
    switch (s.kind) {
        case StmtKind::Let:
        case StmtKind::Assign:
            rw.scalarWrites.insert(s.name);
            break;
        case StmtKind::For:
            rw.scalarWrites.insert(s.name);
            break;
        case StmtKind::ArrayStore:
        case StmtKind::AtomicAdd:
            rw.arrayWrites.insert(s.name);
            rw.arrayReads.insert(s.name);
            break;
        default:
            break;
    }
    for (const auto& inner : s.body) stmt_rw(inner, rw);
    for (const auto& inner : s.elseBody) stmt_rw(inner, rw);
}

inline RwSets body_rw(const std::vector<ast::Stmt>& body) {
    RwSets rw;
    for (const auto& s : body) stmt_rw(s, rw);
    return rw;
}

} // namespace detail

// Shape classification is purely static: both launch extents literally 1 is a
// solo-thread child; a literal-1 grid with a wider block is a solo-block
// child; anything else is multi-block. Solo shapes become moldable through
// the rewrite itself; multi-block children stay moldable only when their use
// of gridDim/blockDim is canonical grid-stride arithmetic.
inline ChildShape classify_child(const ast::KernelDef& /*parent*/, const ast::Stmt& launchSite,
                                 const ast::KernelDef& child) {
    ChildShape shape;
    const ast::Expr& grid = launchSite.exprs[0];
    const ast::Expr& block = launchSite.exprs[1];
    if (detail::is_static_one(grid) && detail::is_static_one(block)) {
        shape.kind = ChildShape::Kind::SoloThread;
        shape.moldable = true;
    } else if (detail::is_static_one(grid)) {
        shape.kind = ChildShape::Kind::SoloBlock;
        shape.moldable = true;
    } else {
        shape.kind = ChildShape::Kind::MultiBlock;
        shape.moldable = detail::body_only_canonical_dims(child.body);
    }
    return shape;
}

struct TransformOptions {
    std::optional<ast::Granularity> granularityOverride;
    ConfigChoice config = ConfigChoice::kc_default();
    SimConfig sim;                  // device limits + resource stubs for KC sizing
    bool naiveGridBarrier = false;  // demonstration mode for the global barrier
    std::int64_t defaultChildThreads = 256;
};

struct TransformResult {
    std::optional<ast::Program> program;
    DiagList diags;
    bool ok() const { return program.has_value() && diags.empty(); }
};

namespace detail {

struct WorkParam {
    std::string name;
    ast::ScalarKind type = ast::ScalarKind::Int;
    size_t paramIndex = 0; // position in the child's parameter list
    size_t slot = 0;       // buffered slot
};

struct SitePlan {
    std::string parentName;
    std::string childName;
    ast::Granularity granularity = ast::Granularity::Warp;
    ast::Directive directive;
    ChildShape shape;
    std::vector<WorkParam> workParams;
    bool recursive = false;
    ast::Stmt launch; // copy of the annotated launch
};

class Consolidator {
public:
    Consolidator(const ast::Program& prog, const TransformOptions& opts)
        : prog_(prog), opts_(opts) {}

    TransformResult run() {
        TransformResult res;
        std::vector<const ast::KernelDef*> annotated;
        for (const auto& k : prog_.kernels)
            if (find_annotated_launch(k.body)) annotated.push_back(&k);
        if (annotated.empty()) {
            res.program = prog_; // nothing to consolidate
            return res;
        }

        ast::Program out = prog_;
        std::set<std::string> consolidatedChildren;
        for (const ast::KernelDef* parent : annotated) {
            auto planOpt = plan_site(*parent);
            if (!planOpt) {
                res.diags = std::move(diags_);
                return res;
            }
            SitePlan plan = std::move(*planOpt);
            if (consolidatedChildren.count(plan.childName)) {
                diag("tf.multiparent",
                     "kernel '" + plan.childName + "' is consolidated from more than one site");
                res.diags = std::move(diags_);
                return res;
            }
            consolidatedChildren.insert(plan.childName);
            apply_site(out, plan);
            if (!diags_.empty()) {
                res.diags = std::move(diags_);
                return res;
            }
        }
        // Any remaining launch of a dropped kernel is un-transformable.
        for (const auto& k : out.kernels) check_dangling(out, k.body);
        if (!diags_.empty()) {
            res.diags = std::move(diags_);
            return res;
        }
        res.program = std::move(out);
        return res;
    }

private:
    const ast::Program& prog_;
    const TransformOptions& opts_;
    DiagList diags_;

    void diag(std::string code, std::string msg, SourceLoc loc = {}) {
        diags_.push_back(make_diag(std::move(code), std::move(msg), loc));
    }

    void check_dangling(const ast::Program& out, const std::vector<ast::Stmt>& body) {
        for (const auto& s : body) {
            if (s.kind == ast::StmtKind::Launch && !out.find_kernel(s.name))
                diag("tf.dangling", "launch targets consolidated-away kernel '" + s.name + "'",
                     s.loc);
            check_dangling(out, s.body);
            check_dangling(out, s.elseBody);
        }
    }

    std::optional<SitePlan> plan_site(const ast::KernelDef& parent) {
        const ast::Stmt* launch = find_annotated_launch(parent.body);
        SitePlan plan;
        plan.parentName = parent.name;
        plan.childName = launch->name;
        plan.directive = *launch->directive;
        plan.granularity = opts_.granularityOverride.value_or(plan.directive.granularity);
        plan.launch = *launch;
        plan.recursive = (launch->name == parent.name);
        const ast::KernelDef* child = prog_.find_kernel(launch->name);
        if (!child) {
            diag("tf.target", "annotated launch targets unknown kernel '" + launch->name + "'",
                 launch->loc);
            return std::nullopt;
        }
        if (!plan.recursive && find_annotated_launch(child->body)) {
            diag("tf.chain",
                 "kernel '" + plan.childName +
                     "' is both a consolidation target and an annotated parent; chained "
                     "consolidation is unsupported",
                 launch->loc);
            return std::nullopt;
        }
        plan.shape = classify_child(parent, *launch, *child);

        // Map each buffered work variable to a child parameter position.
        size_t slot = 0;
        for (const auto& w : plan.directive.workVars) {
            bool found = false;
            for (size_t i = 2; i < launch->exprs.size(); i++) {
                if (launch->exprs[i].kind == ast::ExprKind::Name && launch->exprs[i].name == w) {
                    size_t pidx = i - 2;
                    const ast::Param& p = child->params[pidx];
                    if (p.isArray) {
                        diag("tf.workarray",
                             "work variable '" + w + "' binds an array parameter; only scalar "
                             "indices can be buffered",
                             launch->loc);
                        return std::nullopt;
                    }
                    plan.workParams.push_back(WorkParam{p.name, p.type, pidx, slot});
                    found = true;
                    break;
                }
            }
            if (!found) {
                diag("val.workarg", "work variable '" + w + "' must be passed as a launch argument",
                     launch->loc);
                return std::nullopt;
            }
            slot++;
        }

        if (plan.shape.kind == ChildShape::Kind::MultiBlock && !plan.shape.moldable) {
            bool reconfigured = plan.directive.threadsOverride.has_value() ||
                                plan.directive.blocksOverride.has_value() ||
                                opts_.config.scheme == ConfigScheme::Explicit ||
                                opts_.config.scheme == ConfigScheme::OneToOne;
            if (reconfigured) {
                diag("tf.nonmoldable", "non-moldable child cannot be reconfigured", launch->loc);
                return std::nullopt;
            }
        }
        return plan;
    }

    static bool is_work_param(const SitePlan& plan, size_t paramIndex) {
        for (const auto& w : plan.workParams)
            if (w.paramIndex == paramIndex) return true;
        return false;
    }

    // Launch arguments that survive into the consolidated launch must be
    // uniform across items: literals, parent parameters or array names.
    bool check_uniform_arg(const ast::KernelDef& parent, const ast::Expr& e) {
        using ast::ExprKind;
        switch (e.kind) {
            case ExprKind::IntLit:
            case ExprKind::FloatLit:
                return true;
            case ExprKind::Name: {
                for (const auto& p : parent.params)
                    if (p.name == e.name) return true;
                if (prog_.find_global(e.name)) return true;
                return false;
            }
            default:
                return false;
        }
    }

    // Resolved (B, T) expressions for a consolidated kernel launch.
    struct LaunchCfg {
        ast::Expr grid;
        ast::Expr block;
        std::int64_t staticThreads = 0;
    };

    LaunchCfg resolve_config(const SitePlan& plan, const std::string& consName) {
        LaunchCfg cfg;
        std::int64_t T = opts_.defaultChildThreads;
        if (opts_.config.scheme == ConfigScheme::Explicit) T = opts_.config.explicitThreads;
        if (plan.directive.threadsOverride) T = *plan.directive.threadsOverride;
        cfg.staticThreads = T;

        auto pendingExpr = [] { return ast::call0(ast::ExprKind::BufPending); };

        if (opts_.config.scheme == ConfigScheme::OneToOne &&
            !plan.directive.blocksOverride) {
            if (plan.shape.kind == ChildShape::Kind::SoloThread) {
                // thread-mapped: as many threads as buffered items
                ast::Expr clamped;
                clamped.kind = ast::ExprKind::MinMax;
                clamped.name = "max";
                clamped.args.push_back(pendingExpr());
                clamped.args.push_back(ast::int_lit(1));
                ast::Expr tExpr;
                tExpr.kind = ast::ExprKind::MinMax;
                tExpr.name = "min";
                tExpr.args.push_back(clamped);
                tExpr.args.push_back(ast::int_lit(T));
                cfg.block = tExpr;
                cfg.grid = ast::binary(
                    "/", ast::binary("+", clamped, ast::int_lit(T - 1)), ast::int_lit(T));
                return cfg;
            }
            // block-mapped: as many blocks as buffered items
            ast::Expr clamped;
            clamped.kind = ast::ExprKind::MinMax;
            clamped.name = "max";
            clamped.args.push_back(pendingExpr());
            clamped.args.push_back(ast::int_lit(1));
            cfg.grid = clamped;
            cfg.block = ast::int_lit(T);
            return cfg;
        }

        std::int64_t B = 1;
        if (opts_.config.scheme == ConfigScheme::Explicit) {
            B = opts_.config.explicitBlocks;
        } else {
            std::int64_t X = opts_.config.scheme == ConfigScheme::KcExplicit
                                 ? opts_.config.concurrency
                                 : default_concurrency(plan.granularity);
            auto occ = occupancy(opts_.sim.usage_for(consName, T), opts_.sim.device);
            if (!occ.ok()) {
                diag("tf.config", "cannot size consolidated kernel '" + consName +
                                      "': " + occ.error);
                return cfg;
            }
            B = kc_config(occ.value->occupancyBlocks, T, X).blocks;
        }
        if (plan.directive.blocksOverride) B = *plan.directive.blocksOverride;
        cfg.grid = ast::int_lit(B);
        cfg.block = ast::int_lit(T);
        return cfg;
    }

    // per-buffer entry expression for the emitted dp_buffers statement
    ast::Expr per_buffer_expr(const SitePlan& plan) {
        if (plan.granularity == ast::Granularity::Grid) return ast::int_lit(0); // whole pool
        if (plan.directive.perBufferSizeLit) return ast::int_lit(*plan.directive.perBufferSizeLit);
        if (plan.directive.perBufferSizeVar) return ast::name_ref(*plan.directive.perBufferSizeVar);
        std::int64_t nv = static_cast<std::int64_t>(plan.directive.workVars.size());
        if (plan.granularity == ast::Granularity::Warp)
            return ast::int_lit(per_buffer_size(kWarpSize, nv));
        return ast::binary("*", ast::intrinsic("blockDim"),
                           ast::int_lit(nv * kDefaultSizeConst));
    }

    ast::Stmt buf_decl(const SitePlan& plan) {
        ast::Stmt s;
        s.kind = ast::StmtKind::BufDecl;
        s.gran = plan.granularity;
        s.bufType = plan.directive.bufferType;
        s.nvars = static_cast<std::int64_t>(plan.directive.workVars.size());
        s.totalBytes = plan.directive.totalSizeBytes;
        s.exprs.push_back(per_buffer_expr(plan));
        return s;
    }

    // dp_insert(cfgG, cfgB, work...) carrying the original launch extents.
    ast::Stmt make_insert(const SitePlan& plan) {
        ast::Stmt ins;
        ins.kind = ast::StmtKind::BufInsert;
        ins.exprs.push_back(plan.launch.exprs[0]);
        ins.exprs.push_back(plan.launch.exprs[1]);
        for (const auto& w : plan.directive.workVars) ins.exprs.push_back(ast::name_ref(w));
        return ins;
    }

    // The buffer-draining skeleton around a per-item body. `itemBody` must
    // already reference work values by the child's parameter names.
    std::vector<ast::Stmt> drain_loop(const SitePlan& plan,
                                      const std::vector<ast::Stmt>& origBody) {
        using ast::Granularity;
        std::vector<ast::Stmt> out;
        out.push_back(ast::let_stmt(ast::ScalarKind::Int, "__n",
                                    ast::call0(ast::ExprKind::BufCount)));

        // per-item prologue: bind buffered work values to the original names
        std::vector<ast::Stmt> item;
        for (const auto& w : plan.workParams)
            item.push_back(ast::let_stmt(w.type, w.name,
                                         ast::buf_get(ast::name_ref("__i"),
                                                      static_cast<std::int64_t>(w.slot))));

        IntrinsicSubst subst;
        switch (plan.shape.kind) {
            case ChildShape::Kind::SoloThread: {
                subst["threadIdx"] = ast::int_lit(0);
                subst["blockIdx"] = ast::int_lit(0);
                subst["blockDim"] = ast::int_lit(1);
                subst["gridDim"] = ast::int_lit(1);
                for (auto& s : subst_stmts(origBody, subst)) item.push_back(std::move(s));
                out.push_back(ast::for_stmt(
                    "__i",
                    ast::binary("+",
                                ast::binary("*", ast::intrinsic("blockIdx"),
                                            ast::intrinsic("blockDim")),
                                ast::intrinsic("threadIdx")),
                    ast::name_ref("__n"),
                    ast::binary("*", ast::intrinsic("gridDim"), ast::intrinsic("blockDim")),
                    std::move(item)));
                break;
            }
            case ChildShape::Kind::SoloBlock: {
                item.push_back(ast::let_stmt(ast::ScalarKind::Int, "__ob", [] {
                    ast::Expr e;
                    e.kind = ast::ExprKind::BufCfgBlock;
                    e.args.push_back(ast::name_ref("__i"));
                    return e;
                }()));
                subst["threadIdx"] = ast::name_ref("__vt");
                subst["blockIdx"] = ast::int_lit(0);
                subst["blockDim"] = ast::name_ref("__ob");
                subst["gridDim"] = ast::int_lit(1);
                item.push_back(ast::for_stmt("__vt", ast::intrinsic("threadIdx"),
                                             ast::name_ref("__ob"), ast::intrinsic("blockDim"),
                                             subst_stmts(origBody, subst)));
                out.push_back(ast::for_stmt("__i", ast::intrinsic("blockIdx"),
                                            ast::name_ref("__n"), ast::intrinsic("gridDim"),
                                            std::move(item)));
                break;
            }
            case ChildShape::Kind::MultiBlock: {
                if (plan.shape.moldable) {
                    for (const auto& s : origBody) item.push_back(s);
                } else {
                    item.push_back(ast::let_stmt(ast::ScalarKind::Int, "__og", [] {
                        ast::Expr e;
                        e.kind = ast::ExprKind::BufCfgGrid;
                        e.args.push_back(ast::name_ref("__i"));
                        return e;
                    }()));
                    item.push_back(ast::let_stmt(ast::ScalarKind::Int, "__ob", [] {
                        ast::Expr e;
                        e.kind = ast::ExprKind::BufCfgBlock;
                        e.args.push_back(ast::name_ref("__i"));
                        return e;
                    }()));
                    subst["threadIdx"] = ast::binary("%", ast::name_ref("__vt"),
                                                     ast::name_ref("__ob"));
                    subst["blockIdx"] = ast::binary("/", ast::name_ref("__vt"),
                                                    ast::name_ref("__ob"));
                    subst["blockDim"] = ast::name_ref("__ob");
                    subst["gridDim"] = ast::name_ref("__og");
                    item.push_back(ast::for_stmt(
                        "__vt",
                        ast::binary("+",
                                    ast::binary("*", ast::intrinsic("blockIdx"),
                                                ast::intrinsic("blockDim")),
                                    ast::intrinsic("threadIdx")),
                        ast::binary("*", ast::name_ref("__og"), ast::name_ref("__ob")),
                        ast::binary("*", ast::intrinsic("gridDim"), ast::intrinsic("blockDim")),
                        subst_stmts(origBody, subst)));
                }
                out.push_back(ast::for_stmt("__i", ast::int_lit(0), ast::name_ref("__n"),
                                            ast::int_lit(1), std::move(item)));
                break;
            }
        }
        return out;
    }

    // Launch tail: the selected thread launches the consolidated kernel.
    // `launchArgs` must be uniform expressions.
    std::vector<ast::Stmt> launch_tail(const SitePlan& plan, const std::string& target,
                                       std::vector<ast::Expr> launchArgs, const LaunchCfg& cfg,
                                       bool guardOnPending) {
        ast::Stmt launch = ast::launch_stmt(target, cfg.grid, cfg.block, std::move(launchArgs));
        std::vector<ast::Stmt> sel;
        switch (plan.granularity) {
            case ast::Granularity::Warp:
                sel.push_back(ast::if_stmt(
                    ast::binary("==",
                                ast::binary("%", ast::intrinsic("threadIdx"), ast::int_lit(32)),
                                ast::int_lit(0)),
                    {std::move(launch)}));
                break;
            case ast::Granularity::Block:
            case ast::Granularity::Grid:
                sel.push_back(ast::if_stmt(
                    ast::binary("==", ast::intrinsic("threadIdx"), ast::int_lit(0)),
                    {std::move(launch)}));
                break;
        }
        if (!guardOnPending) return sel;
        std::vector<ast::Stmt> out;
        out.push_back(ast::if_stmt(
            ast::binary(">", ast::call0(ast::ExprKind::BufPending), ast::int_lit(0)),
            std::move(sel)));
        return out;
    }

    // ---- per-site application ----

    void apply_site(ast::Program& out, const SitePlan& plan) {
        if (plan.recursive) {
            apply_recursive(out, plan);
            return;
        }
        const ast::KernelDef* child = out.find_kernel(plan.childName);
        ast::KernelDef cons = build_consolidated_child(plan, *child);
        if (!diags_.empty()) return;
        std::optional<ast::KernelDef> postK;
        {
            ast::KernelDef* parent = out.find_kernel(plan.parentName);
            postK = rewrite_parent(plan, *parent, cons.name);
            if (!diags_.empty()) return;
        }
        // swap the original child for the consolidated one
        for (auto& k : out.kernels) {
            if (k.name == plan.childName) {
                k = std::move(cons);
                break;
            }
        }
        if (postK) out.kernels.push_back(std::move(*postK));
    }

    ast::KernelDef build_consolidated_child(const SitePlan& plan, const ast::KernelDef& child) {
        if (body_contains(child.body, ast::StmtKind::Return)) {
            diag("tf.childreturn",
                 "child kernel '" + child.name + "' uses return; the drain loop cannot keep its "
                 "early-exit semantics");
            return {};
        }
        ast::KernelDef cons;
        cons.name = child.name + "_cons";
        for (size_t i = 0; i < child.params.size(); i++)
            if (!is_work_param(plan, i)) cons.params.push_back(child.params[i]);
        cons.body = drain_loop(plan, child.body);
        return cons;
    }

    std::optional<ast::KernelDef> rewrite_parent(const SitePlan& plan, ast::KernelDef& parent,
                                                 const std::string& consName) {
        // locate the top-level statement holding the annotated launch
        size_t siteIdx = parent.body.size();
        for (size_t i = 0; i < parent.body.size(); i++) {
            std::vector<ast::Stmt> probe{parent.body[i]};
            if (find_annotated_launch(probe)) {
                siteIdx = i;
                break;
            }
        }

        // separator: a device sync directly after the site is the original
        // parent/child synchronization and is re-expressed below
        bool origSync = false;
        size_t postIdx = siteIdx + 1;
        if (postIdx < parent.body.size() &&
            parent.body[postIdx].kind == ast::StmtKind::SyncDevice) {
            origSync = true;
            postIdx++;
        }
        std::vector<ast::Stmt> prework(parent.body.begin(),
                                       parent.body.begin() + static_cast<std::ptrdiff_t>(siteIdx));
        std::vector<ast::Stmt> siteStmt{parent.body[siteIdx]};
        std::vector<ast::Stmt> postwork(parent.body.begin() + static_cast<std::ptrdiff_t>(postIdx),
                                        parent.body.end());
        bool postworkPresent = !postwork.empty();

        // consolidated launch arguments: the original non-work arguments
        std::vector<ast::Expr> launchArgs;
        for (size_t i = 2; i < plan.launch.exprs.size(); i++) {
            size_t pidx = i - 2;
            if (is_work_param(plan, pidx)) continue;
            if (!check_uniform_arg(parent, plan.launch.exprs[i])) {
                diag("tf.arg",
                     "launch argument " + std::to_string(pidx + 1) +
                         " is not uniform across consolidated items (must be a literal, "
                         "parameter or array name)",
                     plan.launch.loc);
                return std::nullopt;
            }
            launchArgs.push_back(plan.launch.exprs[i]);
        }
        LaunchCfg cfg = resolve_config(plan, consName);
        if (!diags_.empty()) return std::nullopt;
        std::optional<ast::KernelDef> postKernel;

        std::vector<ast::Stmt> body;
        body.push_back(buf_decl(plan));
        for (auto& s : prework) body.push_back(std::move(s));
        replace_annotated_launch(siteStmt, {make_insert(plan)});
        for (auto& s : siteStmt) body.push_back(std::move(s));

        switch (plan.granularity) {
            case ast::Granularity::Warp: {
                for (auto& s : launch_tail(plan, consName, launchArgs, cfg, true))
                    body.push_back(std::move(s));
                if (origSync) body.push_back(ast::bare_stmt(ast::StmtKind::SyncDevice));
                for (auto& s : postwork) body.push_back(std::move(s));
                break;
            }
            case ast::Granularity::Block: {
                body.push_back(ast::bare_stmt(ast::StmtKind::BlockBarrier));
                for (auto& s : launch_tail(plan, consName, launchArgs, cfg, true))
                    body.push_back(std::move(s));
                if (origSync) body.push_back(ast::bare_stmt(ast::StmtKind::SyncDevice));
                else if (postworkPresent) body.push_back(ast::bare_stmt(ast::StmtKind::BlockBarrier));
                for (auto& s : postwork) body.push_back(std::move(s));
                break;
            }
            case ast::Granularity::Grid: {
                if (opts_.naiveGridBarrier) {
                    emit_naive_grid(body, plan, consName, launchArgs, cfg, origSync, postwork);
                    break;
                }
                if (postworkPresent) {
                    postKernel = build_postwork_kernel(plan, parent, prework, siteStmt, postwork);
                    if (!diags_.empty()) return std::nullopt;
                }
                body.push_back(ast::bare_stmt(ast::StmtKind::BlockBarrier));
                {
                    ast::Stmt gate = ast::if_stmt(
                        ast::binary("==", ast::call0(ast::ExprKind::GridLast), ast::int_lit(0)),
                        {ast::return_stmt()});
                    body.push_back(std::move(gate));
                }
                std::vector<ast::Stmt> lastBlock;
                lastBlock.push_back(
                    ast::launch_stmt(consName, cfg.grid, cfg.block, launchArgs));
                if (postworkPresent) {
                    lastBlock.push_back(ast::bare_stmt(ast::StmtKind::SyncDevice));
                    std::vector<ast::Expr> postArgs;
                    for (const auto& p : parent.params) postArgs.push_back(ast::name_ref(p.name));
                    postArgs.push_back(ast::intrinsic("gridDim"));
                    postArgs.push_back(ast::intrinsic("blockDim"));
                    lastBlock.push_back(ast::launch_stmt(parent.name + "_post", cfg.grid,
                                                         cfg.block, std::move(postArgs)));
                }
                body.push_back(ast::if_stmt(
                    ast::binary("==", ast::intrinsic("threadIdx"), ast::int_lit(0)),
                    std::move(lastBlock)));
                break;
            }
        }
        parent.body = std::move(body);
        return postKernel;
    }

    void emit_naive_grid(std::vector<ast::Stmt>& body, const SitePlan& /*plan*/,
                         const std::string& consName, const std::vector<ast::Expr>& launchArgs,
                         const LaunchCfg& cfg, bool origSync, std::vector<ast::Stmt>& postwork) {
        body.push_back(ast::bare_stmt(ast::StmtKind::BlockBarrier));
        body.push_back(ast::bare_stmt(ast::StmtKind::GridBarrier));
        std::vector<ast::Stmt> sel;
        sel.push_back(ast::launch_stmt(consName, cfg.grid, cfg.block, launchArgs));
        if (origSync || !postwork.empty()) sel.push_back(ast::bare_stmt(ast::StmtKind::SyncDevice));
        body.push_back(ast::if_stmt(
            ast::binary("&&",
                        ast::binary("==", ast::intrinsic("blockIdx"), ast::int_lit(0)),
                        ast::binary("==", ast::intrinsic("threadIdx"), ast::int_lit(0))),
            std::move(sel)));
        if (!postwork.empty()) {
            body.push_back(ast::bare_stmt(ast::StmtKind::GridBarrier));
            for (auto& s : postwork) body.push_back(std::move(s));
        }
    }

    // Grid-level postwork extraction. The emitted kernel re-runs the
    // duplicated prework plus the postwork for every original parent thread,
    // using a virtual-thread loop over the parent geometry.
    std::optional<ast::KernelDef> build_postwork_kernel(const SitePlan& plan,
                                                        const ast::KernelDef& parent,
                                                        const std::vector<ast::Stmt>& prework,
                                                        const std::vector<ast::Stmt>& siteStmt,
                                                        const std::vector<ast::Stmt>& postwork) {
        RwSets postRw = body_rw(postwork);
        RwSets preRw = body_rw(prework);
        RwSets siteRw = body_rw(siteStmt);

        // conservative cross-thread dependence check
        std::set<std::string> preReadArrays = preRw.arrayReads;
        preReadArrays.insert(siteRw.arrayReads.begin(), siteRw.arrayReads.end());
        for (const auto& a : postRw.arrayWrites) {
            if (preReadArrays.count(a)) {
                diag("tf.postdep",
                     "irreducible prework/postwork dependence: postwork writes '" + a +
                         "' which the prework phase reads",
                     plan.launch.loc);
                return std::nullopt;
            }
        }

        // def-use closure over prework top-level statements
        std::set<std::string> paramNames;
        for (const auto& p : parent.params) paramNames.insert(p.name);
        std::set<std::string> needed;
        for (const auto& n : postRw.scalarReads)
            if (!paramNames.count(n)) needed.insert(n);
        std::vector<bool> keep(prework.size(), false);
        for (size_t ri = prework.size(); ri-- > 0;) {
            RwSets rw;
            stmt_rw(prework[ri], rw);
            bool defines = false;
            for (const auto& w : rw.scalarWrites)
                if (needed.count(w)) defines = true;
            if (!defines) continue;
            keep[ri] = true;
            for (const auto& r : rw.scalarReads)
                if (!paramNames.count(r)) needed.insert(r);
        }

        std::vector<ast::Stmt> dup;
        for (size_t i = 0; i < prework.size(); i++)
            if (keep[i]) dup.push_back(prework[i]);
        for (const auto& s : postwork) dup.push_back(s);

        IntrinsicSubst subst;
        subst["threadIdx"] = ast::binary("%", ast::name_ref("__v"), ast::name_ref("__ob"));
        subst["blockIdx"] = ast::binary("/", ast::name_ref("__v"), ast::name_ref("__ob"));
        subst["blockDim"] = ast::name_ref("__ob");
        subst["gridDim"] = ast::name_ref("__og");

        ast::KernelDef post;
        post.name = parent.name + "_post";
        post.params = parent.params;
        post.params.push_back(ast::Param{"__og", ast::ScalarKind::Int, false});
        post.params.push_back(ast::Param{"__ob", ast::ScalarKind::Int, false});
        post.body.push_back(ast::for_stmt(
            "__v",
            ast::binary("+",
                        ast::binary("*", ast::intrinsic("blockIdx"), ast::intrinsic("blockDim")),
                        ast::intrinsic("threadIdx")),
            ast::binary("*", ast::name_ref("__og"), ast::name_ref("__ob")),
            ast::binary("*", ast::intrinsic("gridDim"), ast::intrinsic("blockDim")),
            subst_stmts(dup, subst)));
        return post;
    }

    // Recursive case: pop and re-insert in one kernel, then launch itself.
    void apply_recursive(ast::Program& out, const SitePlan& plan) {
        const ast::KernelDef parent = *out.find_kernel(plan.parentName); // copy; out mutates below
        if (body_contains(parent.body, ast::StmtKind::SyncDevice)) {
            diag("tf.recsync",
                 "device synchronization inside a recursive consolidation target is unsupported");
            return;
        }
        if (body_contains(parent.body, ast::StmtKind::Return)) {
            diag("tf.childreturn",
                 "kernel '" + parent.name + "' uses return; the drain loop cannot keep its "
                 "early-exit semantics");
            return;
        }
        std::string consName = parent.name + "_cons";

        // body with the launch replaced by an insertion, retargeted later
        std::vector<ast::Stmt> inner = parent.body;
        replace_annotated_launch(inner, {make_insert(plan)});

        LaunchCfg cfg = resolve_config(plan, consName);
        if (!diags_.empty()) return;
        std::vector<ast::Expr> selfArgs;
        for (size_t i = 0; i < parent.params.size(); i++)
            if (!is_work_param(plan, i)) selfArgs.push_back(ast::name_ref(parent.params[i].name));

        ast::KernelDef cons;
        cons.name = consName;
        for (size_t i = 0; i < parent.params.size(); i++)
            if (!is_work_param(plan, i)) cons.params.push_back(parent.params[i]);
        cons.body.push_back(buf_decl(plan));
        for (auto& s : drain_loop(plan, inner)) cons.body.push_back(std::move(s));
        append_recursive_tail(cons.body, plan, consName, selfArgs, cfg);

        // bootstrap kernel: buffers the entry work item, then starts level 0
        ast::KernelDef boot;
        boot.name = parent.name + "_boot";
        boot.params = parent.params;
        boot.params.push_back(ast::Param{"__og", ast::ScalarKind::Int, false});
        boot.params.push_back(ast::Param{"__ob", ast::ScalarKind::Int, false});
        boot.body.push_back(buf_decl(plan));
        {
            ast::Stmt ins;
            ins.kind = ast::StmtKind::BufInsert;
            ins.exprs.push_back(ast::name_ref("__og"));
            ins.exprs.push_back(ast::name_ref("__ob"));
            for (const auto& w : plan.workParams) ins.exprs.push_back(ast::name_ref(w.name));
            boot.body.push_back(std::move(ins));
        }
        append_recursive_tail(boot.body, plan, consName, selfArgs, cfg);

        if (out.entry.kernel == parent.name) {
            out.entry.kernel = boot.name;
            out.entry.args.push_back(out.entry.grid);
            out.entry.args.push_back(out.entry.block);
            out.entry.grid = ast::int_lit(1);
            out.entry.block = ast::int_lit(1);
        }
        for (auto& k : out.kernels) {
            if (k.name == plan.parentName) {
                k = std::move(cons);
                break;
            }
        }
        out.kernels.push_back(std::move(boot));
    }

    void append_recursive_tail(std::vector<ast::Stmt>& body, const SitePlan& plan,
                               const std::string& consName,
                               const std::vector<ast::Expr>& selfArgs, const LaunchCfg& cfg) {
        switch (plan.granularity) {
            case ast::Granularity::Warp:
                for (auto& s : launch_tail(plan, consName, selfArgs, cfg, true))
                    body.push_back(std::move(s));
                break;
            case ast::Granularity::Block:
                body.push_back(ast::bare_stmt(ast::StmtKind::BlockBarrier));
                for (auto& s : launch_tail(plan, consName, selfArgs, cfg, true))
                    body.push_back(std::move(s));
                break;
            case ast::Granularity::Grid: {
                body.push_back(ast::bare_stmt(ast::StmtKind::BlockBarrier));
                body.push_back(ast::if_stmt(
                    ast::binary("==", ast::call0(ast::ExprKind::GridLast), ast::int_lit(0)),
                    {ast::return_stmt()}));
                // recursion must stop when no new work was buffered
                for (auto& s : launch_tail(plan, consName, selfArgs, cfg, true))
                    body.push_back(std::move(s));
                break;
            }
        }
    }
};

} // namespace detail

// Public per-operation entry points (the full pipeline is consolidate()).

inline TransformResult consolidate(const ast::Program& prog, const TransformOptions& opts = {}) {
    detail::Consolidator c(prog, opts);
    return c.run();
}

// Rewrites one child kernel into its buffer-draining consolidated form.
struct ChildTransformResult {
    std::optional<ast::KernelDef> kernel;
    DiagList diags;
    bool ok() const { return kernel.has_value() && diags.empty(); }
};

inline ChildTransformResult transform_child(const ast::Program& prog,
                                            const ast::KernelDef& parent,
                                            const ast::KernelDef& child,
                                            const TransformOptions& opts = {}) {
    ChildTransformResult res;
    TransformOptions o = opts;
    detail::Consolidator c(prog, o);
    TransformResult whole = c.run();
    if (!whole.ok()) {
        res.diags = whole.diags;
        return res;
    }
    const ast::KernelDef* k = whole.program->find_kernel(child.name + "_cons");
    if (!k) k = whole.program->find_kernel(parent.name + "_cons");
    if (!k) {
        res.diags.push_back(make_diag("tf.nochild", "no consolidated kernel was produced"));
        return res;
    }
    res.kernel = *k;
    return res;
}

} // namespace dpcons
