// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "dpcons/ast.hpp"
#include "dpcons/config.hpp"
#include "dpcons/device.hpp"
#include "dpcons/memplan.hpp"

// Deterministic device simulator. Warps advance one statement per event in
// lockstep SIMT; every race (atomics, buffer insertions, admission ties) is
// resolved in canonical order: ascending instance sequence, then block id,
// then warp id, then lane id. Repeated runs are byte-identical.

namespace dpcons {

struct Workload {
    std::map<std::string, std::int64_t> intScalars;
    std::map<std::string, double> floatScalars;
    std::map<std::string, std::vector<std::int64_t>> intArrays;
    std::map<std::string, std::vector<double>> floatArrays;
};

struct Metrics {
    std::int64_t childLaunchCount = 0;
    std::int64_t fixedPoolPeak = 0;
    std::int64_t virtualPoolPeak = 0;
    double warpExecEfficiency = 1.0;
    double smOccupancyAchieved = 0.0;
    std::int64_t dramTransactions = 0;
    std::int64_t simulatedCycles = 0;
    std::int64_t parentSwapEvents = 0;
    std::int64_t maxConcurrentObserved = 0;
    std::int64_t bufferItemsInserted = 0;
    std::int64_t allocCyclesCharged = 0;
    bool deadlockDetected = false;
};

struct SimFault {
    std::string kind; // nesting | overflow | deadlock | oom | runtime | config
    std::string message;
};

struct GlobalArrayState {
    std::string name;
    bool isFloat = false;
    std::vector<std::int64_t> ints;
    std::vector<double> floats;
};

struct SimResult {
    std::vector<GlobalArrayState> globals;
    Metrics metrics;
    std::optional<SimFault> fault;
    bool ok() const { return !fault.has_value(); }
};

namespace simdetail {

// ---------- values ----------

struct Value {
    bool isFloat = false;
    std::int64_t i = 0;
    double f = 0.0;

    static Value of_int(std::int64_t v) { return Value{false, v, 0.0}; }
    static Value of_float(double v) { return Value{true, 0, v}; }
    double as_double() const { return isFloat ? f : static_cast<double>(i); }
};

// ---------- compiled program ----------

enum class Op {
    Add, Sub, Mul, Div, Mod, Lt, Le, Gt, Ge, Eq, Ne, And, Or, Neg, Not, Min, Max
};

inline Op binop_of(const std::string& s) {
    if (s == "+") return Op::Add;
    if (s == "-") return Op::Sub;
    if (s == "*") return Op::Mul;
    if (s == "/") return Op::Div;
    if (s == "%") return Op::Mod;
    if (s == "<") return Op::Lt;
    if (s == "<=") return Op::Le;
    if (s == ">") return Op::Gt;
    if (s == ">=") return Op::Ge;
    if (s == "==") return Op::Eq;
    if (s == "!=") return Op::Ne;
    if (s == "&&") return Op::And;
    return Op::Or;
}

enum class RK {
    IntLit, FloatLit, Local, ArrayLoad, Unary, Binary, MinMax, AtomicAdd,
    ThreadIdx, BlockIdx, BlockDim, GridDim,
    BufCount, BufPending, BufGet, BufCfgGrid, BufCfgBlock, GridLast
};

struct ArrayRef {
    int globalIdx = -1; // program global
    int slot = -1;      // array-handle parameter slot
};

struct RExpr {
    RK k = RK::IntLit;
    Op op = Op::Add;
    std::int64_t ival = 0;
    double fval = 0.0;
    int slot = -1;
    ArrayRef aref;
    std::vector<RExpr> args;
};

enum class SK {
    Let, Assign, Store, AtomicAdd, If, For, Barrier, SyncDevice, GridBarrier,
    Launch, Return, BufDecl, BufInsert
};

struct RStmt {
    SK k = SK::Return;
    int slot = -1;
    bool letFloat = false;
    ArrayRef aref;
    int targetKernel = -1;
    ast::Granularity gran = ast::Granularity::Warp;
    AllocatorKind alloc = AllocatorKind::Prealloc;
    int nvars = 0;
    std::int64_t totalBytes = 0;
    bool perSizeDeferred = false; // per-buffer size references a local
    std::vector<RExpr> exprs;
    std::vector<RStmt> body;
    std::vector<RStmt> elseBody;
};

struct RKernel {
    std::string name;
    int paramCount = 0;
    int slotCount = 0;
    std::vector<bool> paramIsArray;
    std::vector<bool> paramIsFloat;
    std::vector<RStmt> body;
    bool hasBufDecl = false;
};

struct CompileError {
    std::string message;
};

class Compiler {
public:
    explicit Compiler(const ast::Program& prog) : prog_(prog) {}

    std::optional<CompileError> run(std::vector<RKernel>& out,
                                    std::map<std::string, int>& kernelIdx) {
        for (size_t i = 0; i < prog_.kernels.size(); i++)
            kernelIdx[prog_.kernels[i].name] = static_cast<int>(i);
        kernelIdx_ = &kernelIdx;
        for (const auto& k : prog_.kernels) {
            RKernel rk;
            rk.name = k.name;
            slots_.clear();
            for (const auto& p : k.params) {
                int s = slot_for(p.name);
                rk.paramIsArray.push_back(p.isArray);
                rk.paramIsFloat.push_back(p.type == ast::ScalarKind::Float);
                (void)s;
            }
            rk.paramCount = static_cast<int>(k.params.size());
            arrayParamSlots_.clear();
            for (size_t i = 0; i < k.params.size(); i++)
                if (k.params[i].isArray) arrayParamSlots_.insert(k.params[i].name);
            rk.body = compile_body(k.body);
            if (err_) return err_;
            rk.slotCount = static_cast<int>(slots_.size());
            rk.hasBufDecl = has_bufdecl(rk.body);
            out.push_back(std::move(rk));
        }
        return std::nullopt;
    }

private:
    const ast::Program& prog_;
    const std::map<std::string, int>* kernelIdx_ = nullptr;
    std::map<std::string, int> slots_;
    std::set<std::string> arrayParamSlots_;
    std::optional<CompileError> err_;

    static bool has_bufdecl(const std::vector<RStmt>& body) {
        for (const auto& s : body) {
            if (s.k == SK::BufDecl) return true;
            if (has_bufdecl(s.body) || has_bufdecl(s.elseBody)) return true;
        }
        return false;
    }

    int slot_for(const std::string& n) {
        auto it = slots_.find(n);
        if (it != slots_.end()) return it->second;
        int s = static_cast<int>(slots_.size());
        slots_[n] = s;
        return s;
    }

    ArrayRef resolve_array(const std::string& n) {
        ArrayRef a;
        if (arrayParamSlots_.count(n)) {
            a.slot = slot_for(n);
            return a;
        }
        for (size_t i = 0; i < prog_.globals.size(); i++) {
            if (prog_.globals[i].name == n) {
                a.globalIdx = static_cast<int>(i);
                return a;
            }
        }
        err_ = CompileError{"unknown array '" + n + "'"};
        return a;
    }

    RExpr compile_expr(const ast::Expr& e) {
        RExpr r;
        using ast::ExprKind;
        switch (e.kind) {
            case ExprKind::IntLit:
                r.k = RK::IntLit;
                r.ival = e.ival;
                break;
            case ExprKind::FloatLit:
                r.k = RK::FloatLit;
                r.fval = e.fval;
                break;
            case ExprKind::Name: {
                // a global array's name used as a value denotes its handle
                if (!arrayParamSlots_.count(e.name)) {
                    for (size_t i = 0; i < prog_.globals.size(); i++) {
                        if (prog_.globals[i].name == e.name) {
                            r.k = RK::IntLit;
                            r.ival = static_cast<std::int64_t>(i);
                            return r;
                        }
                    }
                }
                r.k = RK::Local;
                r.slot = slot_for(e.name);
                break;
            }
            case ExprKind::ArrayIndex:
                r.k = RK::ArrayLoad;
                r.aref = resolve_array(e.name);
                r.args.push_back(compile_expr(e.args[0]));
                break;
            case ExprKind::Unary:
                r.k = RK::Unary;
                r.op = e.name == "-" ? Op::Neg : Op::Not;
                r.args.push_back(compile_expr(e.args[0]));
                break;
            case ExprKind::Binary:
                r.k = RK::Binary;
                r.op = binop_of(e.name);
                r.args.push_back(compile_expr(e.args[0]));
                r.args.push_back(compile_expr(e.args[1]));
                break;
            case ExprKind::Intrinsic:
                r.k = e.name == "threadIdx"  ? RK::ThreadIdx
                      : e.name == "blockIdx" ? RK::BlockIdx
                      : e.name == "blockDim" ? RK::BlockDim
                                             : RK::GridDim;
                break;
            case ExprKind::MinMax:
                r.k = RK::MinMax;
                r.op = e.name == "min" ? Op::Min : Op::Max;
                r.args.push_back(compile_expr(e.args[0]));
                r.args.push_back(compile_expr(e.args[1]));
                break;
            case ExprKind::AtomicAdd:
                r.k = RK::AtomicAdd;
                r.aref = resolve_array(e.name);
                r.args.push_back(compile_expr(e.args[0]));
                r.args.push_back(compile_expr(e.args[1]));
                break;
            case ExprKind::BufCount: r.k = RK::BufCount; break;
            case ExprKind::BufPending: r.k = RK::BufPending; break;
            case ExprKind::BufGet:
                r.k = RK::BufGet;
                r.args.push_back(compile_expr(e.args[0]));
                r.ival = e.args[1].ival;
                break;
            case ExprKind::BufCfgGrid:
                r.k = RK::BufCfgGrid;
                r.args.push_back(compile_expr(e.args[0]));
                break;
            case ExprKind::BufCfgBlock:
                r.k = RK::BufCfgBlock;
                r.args.push_back(compile_expr(e.args[0]));
                break;
            case ExprKind::GridLast: r.k = RK::GridLast; break;
        }
        return r;
    }

    static bool expr_has_local(const ast::Expr& e) {
        if (e.kind == ast::ExprKind::Name) return true;
        for (const auto& a : e.args)
            if (expr_has_local(a)) return true;
        return false;
    }

    std::vector<RStmt> compile_body(const std::vector<ast::Stmt>& body) {
        std::vector<RStmt> out;
        for (const auto& s : body) {
            RStmt r;
            using ast::StmtKind;
            switch (s.kind) {
                case StmtKind::Let:
                    r.k = SK::Let;
                    r.slot = slot_for(s.name);
                    r.letFloat = s.scalar == ast::ScalarKind::Float;
                    r.exprs.push_back(compile_expr(s.exprs[0]));
                    break;
                case StmtKind::Assign:
                    r.k = SK::Assign;
                    r.slot = slot_for(s.name);
                    r.exprs.push_back(compile_expr(s.exprs[0]));
                    break;
                case StmtKind::ArrayStore:
                    r.k = SK::Store;
                    r.aref = resolve_array(s.name);
                    r.exprs.push_back(compile_expr(s.exprs[0]));
                    r.exprs.push_back(compile_expr(s.exprs[1]));
                    break;
                case StmtKind::AtomicAdd:
                    r.k = SK::AtomicAdd;
                    r.aref = resolve_array(s.name);
                    r.exprs.push_back(compile_expr(s.exprs[0]));
                    r.exprs.push_back(compile_expr(s.exprs[1]));
                    break;
                case StmtKind::If:
                    r.k = SK::If;
                    r.exprs.push_back(compile_expr(s.exprs[0]));
                    r.body = compile_body(s.body);
                    r.elseBody = compile_body(s.elseBody);
                    break;
                case StmtKind::For:
                    r.k = SK::For;
                    r.slot = slot_for(s.name);
                    r.exprs.push_back(compile_expr(s.exprs[0]));
                    r.exprs.push_back(compile_expr(s.exprs[1]));
                    r.exprs.push_back(compile_expr(s.exprs[2]));
                    r.body = compile_body(s.body);
                    break;
                case StmtKind::BlockBarrier: r.k = SK::Barrier; break;
                case StmtKind::SyncDevice: r.k = SK::SyncDevice; break;
                case StmtKind::GridBarrier: r.k = SK::GridBarrier; break;
                case StmtKind::Return: r.k = SK::Return; break;
                case StmtKind::Launch: {
                    r.k = SK::Launch;
                    auto it = kernelIdx_->find(s.name);
                    if (it == kernelIdx_->end()) {
                        err_ = CompileError{"launch of unknown kernel '" + s.name + "'"};
                        return out;
                    }
                    r.targetKernel = it->second;
                    for (const auto& e : s.exprs) r.exprs.push_back(compile_expr(e));
                    break;
                }
                case StmtKind::BufDecl:
                    r.k = SK::BufDecl;
                    r.gran = s.gran;
                    r.alloc = allocator_for(s.bufType);
                    r.nvars = static_cast<int>(s.nvars);
                    r.totalBytes = s.totalBytes;
                    r.perSizeDeferred = expr_has_local(s.exprs[0]);
                    r.exprs.push_back(compile_expr(s.exprs[0]));
                    break;
                case StmtKind::BufInsert:
                    r.k = SK::BufInsert;
                    for (const auto& e : s.exprs) r.exprs.push_back(compile_expr(e));
                    break;
            }
            if (err_) return out;
            out.push_back(std::move(r));
        }
        return out;
    }
};

// ---------- runtime structures ----------

struct SimBuffer {
    std::int64_t capacity = -1; // -1: not bound yet
    int nvars = 1;
    AllocatorKind alloc = AllocatorKind::Prealloc;
    std::int64_t totalBytes = 0;
    std::int64_t count = 0;
    std::vector<Value> storage;               // nvars values per item
    std::vector<std::pair<std::int64_t, std::int64_t>> cfgs; // recorded (grid, block)
};

struct BufferSetInfo {
    bool declared = false;
    ast::Granularity gran = ast::Granularity::Warp;
    AllocatorKind alloc = AllocatorKind::Prealloc;
    int nvars = 1;
    std::int64_t totalBytes = 0;
    const RStmt* decl = nullptr;
};

struct Frame {
    const std::vector<RStmt>* stmts = nullptr;
    size_t idx = 0;
    std::uint32_t mask = 0;
    const RStmt* loop = nullptr; // non-null for For frames
};

struct WarpState {
    int laneCount = 0;
    std::uint32_t existMask = 0;
    std::vector<Frame> stack;
    bool done = false;
    bool blocked = false;
    std::int64_t pendingExtraCycles = 0;
};

enum class BlockPhase { NotStarted, Running, AtBarrier, AtSync, Swapped, AtGridBarrier, Finished };

struct BlockState {
    int id = 0;
    bool resident = false;
    BlockPhase phase = BlockPhase::NotStarted;
    std::vector<WarpState> warps;
    std::vector<std::vector<Value>> lanes; // [thread][slot]
    int liveWarps = 0;
    int arrivedWarps = 0;
    std::int64_t outstandingChildren = 0;
    bool gridLastKnown = false;
    std::int64_t gridLastVal = 0;
    std::int64_t depthAtSwap = 0;
};

enum class InstPhase { Pending, Running, Drained, Completed };

struct Instance {
    std::int64_t seq = 0;
    int kernel = -1;
    std::int64_t gridDim = 0;
    std::int64_t blockDim = 0;
    std::int64_t depth = 1;
    std::vector<Value> args;
    std::int64_t parentSeq = -1;
    int parentBlock = -1;
    InstPhase phase = InstPhase::Pending;
    bool virtualized = false;
    std::int64_t admissionExtra = 0;
    std::int64_t nextBlockToStart = 0;
    std::int64_t blocksFinished = 0;
    std::int64_t liveChildren = 0;
    std::int64_t barrierCounter = 0; // grid-last protocol
    std::int64_t naiveArrivedBlocks = 0;
    std::int64_t perKernelResidentCap = 0;
    std::int64_t residentBlocks = 0;
    BufferSetInfo bufInfo;
    // own buffers keyed by owner id (warp global index / block id / 0)
    std::map<std::int64_t, SimBuffer> buffers;
    // inherited buffer: (instanceSeq, ownerKey) into the owner instance
    std::int64_t inheritedFromSeq = -1;
    std::int64_t inheritedOwnerKey = 0;
    std::map<std::int64_t, std::unique_ptr<BlockState>> blocks;
};

struct Event {
    std::int64_t cycle = 0;
    std::int64_t instSeq = 0;
    std::int64_t block = 0;
    std::int64_t warp = 0;
    bool operator>(const Event& o) const {
        if (cycle != o.cycle) return cycle > o.cycle;
        if (instSeq != o.instSeq) return instSeq > o.instSeq;
        if (block != o.block) return block > o.block;
        return warp > o.warp;
    }
};

} // namespace simdetail

class Simulator {
public:
    Simulator(const ast::Program& prog, const Workload& wl, const DeviceModel& dev,
              const CostModel& cost)
        : prog_(prog), wl_(wl), dev_(dev), cost_(cost), simCfg_() {}

    // Resource stubs for occupancy-based residency caps.
    void set_resource_stubs(const SimConfig& cfg) { simCfg_ = cfg; }

    SimResult run() {
        bind_globals();
        if (fault_) return finish();
        compile();
        if (fault_) return finish();
        start_entry();
        if (fault_) return finish();
        main_loop();
        return finish();
    }

private:
    using Value = simdetail::Value;
    using RExpr = simdetail::RExpr;
    using RStmt = simdetail::RStmt;
    using RKernel = simdetail::RKernel;
    using Instance = simdetail::Instance;
    using BlockState = simdetail::BlockState;
    using WarpState = simdetail::WarpState;
    using Frame = simdetail::Frame;
    using SimBuffer = simdetail::SimBuffer;
    using Event = simdetail::Event;

    const ast::Program& prog_;
    const Workload& wl_;
    DeviceModel dev_;
    CostModel cost_;
    SimConfig simCfg_;

    std::vector<GlobalArrayState> globals_;
    std::vector<RKernel> kernels_;
    std::map<std::string, int> kernelIdx_;

    std::map<std::int64_t, Instance> instances_;
    std::deque<std::int64_t> pendingQueue_;
    std::vector<std::pair<std::int64_t, std::int64_t>> resumeQueue_; // (instSeq, blockId)
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> events_;

    std::int64_t nextSeq_ = 1;
    std::int64_t clock_ = 0;
    std::int64_t runningCount_ = 0;
    std::int64_t residentBlocks_ = 0;
    std::int64_t residentWarps_ = 0;
    std::int64_t pendingCount_ = 0;
    std::int64_t poolLiveBytes_ = 0;
    std::map<std::int64_t, std::int64_t> swappedPerDepth_;

    // metrics accumulators
    Metrics m_;
    double effActive_ = 0.0;
    double effTotal_ = 0.0;
    std::int64_t occIntegralNum_ = 0;
    std::int64_t occLastCycle_ = 0;

    std::optional<SimFault> fault_;

    // scratch for coalescing: (array id, element index)
    std::vector<std::pair<std::int64_t, std::int64_t>> accesses_;

    void fault(std::string kind, std::string msg) {
        if (!fault_) fault_ = SimFault{std::move(kind), std::move(msg)};
        if (kind == "deadlock") m_.deadlockDetected = true;
    }

    // ---------------- setup ----------------

    std::optional<std::int64_t> scalar_int(const std::string& n) const {
        auto it = wl_.intScalars.find(n);
        if (it != wl_.intScalars.end()) return it->second;
        return std::nullopt;
    }

    // Entry-scope expressions: literals, arithmetic, workload scalar names.
    std::optional<Value> eval_host(const ast::Expr& e) {
        using ast::ExprKind;
        switch (e.kind) {
            case ExprKind::IntLit: return Value::of_int(e.ival);
            case ExprKind::FloatLit: return Value::of_float(e.fval);
            case ExprKind::Name: {
                if (auto v = scalar_int(e.name)) return Value::of_int(*v);
                auto f = wl_.floatScalars.find(e.name);
                if (f != wl_.floatScalars.end()) return Value::of_float(f->second);
                fault("runtime", "workload does not define scalar '" + e.name + "'");
                return std::nullopt;
            }
            case ExprKind::Unary: {
                auto a = eval_host(e.args[0]);
                if (!a) return std::nullopt;
                if (e.name == "-")
                    return a->isFloat ? Value::of_float(-a->f) : Value::of_int(-a->i);
                return Value::of_int(a->as_double() == 0.0 ? 1 : 0);
            }
            case ExprKind::Binary: {
                auto a = eval_host(e.args[0]);
                auto b = eval_host(e.args[1]);
                if (!a || !b) return std::nullopt;
                return apply_binary(simdetail::binop_of(e.name), *a, *b);
            }
            case ExprKind::MinMax: {
                auto a = eval_host(e.args[0]);
                auto b = eval_host(e.args[1]);
                if (!a || !b) return std::nullopt;
                bool mn = e.name == "min";
                if (a->isFloat || b->isFloat)
                    return Value::of_float(mn ? std::min(a->as_double(), b->as_double())
                                              : std::max(a->as_double(), b->as_double()));
                return Value::of_int(mn ? std::min(a->i, b->i) : std::max(a->i, b->i));
            }
            default:
                fault("runtime", "entry-scope expression uses device-only construct");
                return std::nullopt;
        }
    }

    void bind_globals() {
        for (const auto& g : prog_.globals) {
            auto len = eval_host(g.length);
            if (!len) return;
            if (len->isFloat || len->i < 0) {
                fault("runtime", "global '" + g.name + "' has invalid length");
                return;
            }
            GlobalArrayState st;
            st.name = g.name;
            st.isFloat = g.type == ast::ScalarKind::Float;
            auto n = static_cast<size_t>(len->i);
            if (st.isFloat) {
                st.floats.assign(n, 0.0);
                auto it = wl_.floatArrays.find(g.name);
                if (it != wl_.floatArrays.end()) {
                    if (it->second.size() != n) {
                        fault("runtime", "workload array '" + g.name + "' has wrong length");
                        return;
                    }
                    st.floats = it->second;
                }
            } else {
                st.ints.assign(n, 0);
                auto it = wl_.intArrays.find(g.name);
                if (it != wl_.intArrays.end()) {
                    if (it->second.size() != n) {
                        fault("runtime", "workload array '" + g.name + "' has wrong length");
                        return;
                    }
                    st.ints = it->second;
                }
            }
            globals_.push_back(std::move(st));
        }
    }

    void compile() {
        simdetail::Compiler c(prog_);
        auto err = c.run(kernels_, kernelIdx_);
        if (err) fault("config", err->message);
    }

    void start_entry() {
        auto it = kernelIdx_.find(prog_.entry.kernel);
        if (it == kernelIdx_.end()) {
            fault("config", "entry kernel not found");
            return;
        }
        auto g = eval_host(prog_.entry.grid);
        auto b = eval_host(prog_.entry.block);
        if (!g || !b) return;
        std::vector<Value> args;
        for (const auto& a : prog_.entry.args) {
            auto v = eval_host(a);
            if (!v) return;
            args.push_back(*v);
        }
        create_instance(it->second, g->i, b->i, std::move(args), -1, -1, 1);
        admission_scan();
    }

    // ---------------- instance lifecycle ----------------

    Instance* create_instance(int kernel, std::int64_t grid, std::int64_t block,
                              std::vector<Value> args, std::int64_t parentSeq, int parentBlock,
                              std::int64_t depth) {
        if (grid < 1 || block < 1) {
            fault("runtime", "kernel '" + kernels_[static_cast<size_t>(kernel)].name +
                                 "' launched with non-positive geometry");
            return nullptr;
        }
        if (block > dev_.maxThreadsPerBlock) {
            fault("config", "kernel '" + kernels_[static_cast<size_t>(kernel)].name +
                                "' exceeds maxThreadsPerBlock");
            return nullptr;
        }
        if (depth > dev_.maxNestingDepth) {
            fault("nesting", "nesting depth " + std::to_string(depth) + " exceeds limit " +
                                 std::to_string(dev_.maxNestingDepth));
            return nullptr;
        }
        const RKernel& rk = kernels_[static_cast<size_t>(kernel)];
        if (static_cast<int>(args.size()) != rk.paramCount) {
            fault("runtime", "kernel '" + rk.name + "' launched with wrong argument count");
            return nullptr;
        }
        auto occ = occupancy(simCfg_.usage_for(rk.name, block), dev_);
        if (!occ.ok()) {
            fault("config", "kernel '" + rk.name + "': " + occ.error);
            return nullptr;
        }
        Instance inst;
        inst.seq = nextSeq_++;
        inst.kernel = kernel;
        inst.gridDim = grid;
        inst.blockDim = block;
        inst.depth = depth;
        inst.args = std::move(args);
        inst.parentSeq = parentSeq;
        inst.parentBlock = parentBlock;
        inst.barrierCounter = grid;
        inst.perKernelResidentCap = occ.value->blocksPerSM * dev_.smCount;

        // child kernels see the launching owner's buffer
        if (parentSeq >= 0) {
            Instance& p = instances_.at(parentSeq);
            p.liveChildren++;
            m_.childLaunchCount++;
        }
        std::int64_t seq = inst.seq;
        instances_[seq] = std::move(inst);
        pendingQueue_.push_back(seq);
        pendingCount_++;
        Instance& stored = instances_.at(seq);
        if (pendingCount_ > dev_.pendingFixedPoolCapacity) {
            stored.virtualized = true;
            stored.admissionExtra = cost_.virtualPoolExtraCyclesPerKernel;
        }
        m_.fixedPoolPeak = std::max(m_.fixedPoolPeak,
                                    std::min(pendingCount_, dev_.pendingFixedPoolCapacity));
        m_.virtualPoolPeak = std::max(
            m_.virtualPoolPeak, std::max<std::int64_t>(0, pendingCount_ -
                                                              dev_.pendingFixedPoolCapacity));
        return &stored;
    }

    std::int64_t warp_count(const Instance& inst) const {
        return (inst.blockDim + kWarpSize - 1) / kWarpSize;
    }

    void note_occupancy_change() {
        if (clock_ > occLastCycle_) {
            occIntegralNum_ += residentWarps_ * (clock_ - occLastCycle_);
            occLastCycle_ = clock_;
        }
    }

    bool can_start_block(const Instance& inst) const {
        if (residentBlocks_ >= dev_.resident_block_capacity()) return false;
        if (inst.residentBlocks >= inst.perKernelResidentCap) return false;
        if (residentWarps_ + warp_count(inst) > dev_.resident_warp_capacity()) return false;
        return true;
    }

    void start_block(Instance& inst, std::int64_t blockId, std::int64_t delay) {
        note_occupancy_change();
        auto blk = std::make_unique<BlockState>();
        blk->id = static_cast<int>(blockId);
        blk->resident = true;
        blk->phase = simdetail::BlockPhase::Running;
        std::int64_t threads = inst.blockDim;
        std::int64_t warps = warp_count(inst);
        const RKernel& rk = kernels_[static_cast<size_t>(inst.kernel)];
        blk->lanes.assign(static_cast<size_t>(threads),
                          std::vector<Value>(static_cast<size_t>(rk.slotCount)));
        for (std::int64_t t = 0; t < threads; t++)
            for (int p = 0; p < rk.paramCount; p++) blk->lanes[static_cast<size_t>(t)][static_cast<size_t>(p)] = inst.args[static_cast<size_t>(p)];
        blk->warps.resize(static_cast<size_t>(warps));
        for (std::int64_t w = 0; w < warps; w++) {
            WarpState& ws = blk->warps[static_cast<size_t>(w)];
            std::int64_t lanes = std::min<std::int64_t>(kWarpSize, threads - w * kWarpSize);
            ws.laneCount = static_cast<int>(lanes);
            ws.existMask = lanes >= 32 ? 0xffffffffu : ((1u << lanes) - 1u);
            Frame f;
            f.stmts = &rk.body;
            f.idx = 0;
            f.mask = ws.existMask;
            ws.stack.push_back(f);
        }
        blk->liveWarps = static_cast<int>(warps);
        residentBlocks_++;
        residentWarps_ += warps;
        inst.residentBlocks++;
        for (std::int64_t w = 0; w < warps; w++)
            events_.push(Event{clock_ + delay, inst.seq, blockId, w});
        inst.blocks[blockId] = std::move(blk);
    }

    void admission_scan() {
        bool progress = true;
        while (progress && !fault_) {
            progress = false;
            // resume swapped blocks first (they belong to running kernels)
            for (size_t i = 0; i < resumeQueue_.size();) {
                auto [iseq, blockId] = resumeQueue_[i];
                Instance& inst = instances_.at(iseq);
                if (residentBlocks_ < dev_.resident_block_capacity() &&
                    inst.residentBlocks < inst.perKernelResidentCap &&
                    residentWarps_ + warp_count(inst) <= dev_.resident_warp_capacity()) {
                    resume_block(inst, blockId);
                    resumeQueue_.erase(resumeQueue_.begin() + static_cast<std::ptrdiff_t>(i));
                    progress = true;
                } else {
                    i++;
                }
            }
            // rotate unstarted blocks of running instances, ascending seq
            for (std::int64_t seq : runningSet_) {
                Instance& inst = instances_.at(seq);
                while (inst.nextBlockToStart < inst.gridDim && can_start_block(inst)) {
                    start_block(inst, inst.nextBlockToStart, 0);
                    inst.nextBlockToStart++;
                    progress = true;
                }
            }
            // admit pending kernels FIFO while the concurrency cap allows
            while (!pendingQueue_.empty() && runningCount_ < dev_.maxConcurrentKernels) {
                Instance& inst = instances_.at(pendingQueue_.front());
                if (!can_start_block(inst)) break;
                pendingQueue_.pop_front();
                pendingCount_--;
                inst.phase = simdetail::InstPhase::Running;
                runningSet_.insert(inst.seq);
                runningCount_++;
                m_.maxConcurrentObserved = std::max(m_.maxConcurrentObserved, runningCount_);
                while (inst.nextBlockToStart < inst.gridDim && can_start_block(inst)) {
                    start_block(inst, inst.nextBlockToStart, inst.admissionExtra);
                    inst.nextBlockToStart++;
                }
                progress = true;
            }
        }
    }

    void resume_block(Instance& inst, std::int64_t blockId) {
        note_occupancy_change();
        BlockState& blk = *inst.blocks.at(blockId);
        blk.resident = true;
        blk.phase = simdetail::BlockPhase::Running;
        residentBlocks_++;
        residentWarps_ += warp_count(inst);
        inst.residentBlocks++;
        auto d = swappedPerDepth_.find(inst.depth);
        if (d != swappedPerDepth_.end()) {
            if (--d->second == 0) swappedPerDepth_.erase(d);
        }
        for (std::int64_t w = 0; w < warp_count(inst); w++) {
            WarpState& ws = blk.warps[static_cast<size_t>(w)];
            if (!ws.done) {
                ws.blocked = false;
                events_.push(Event{clock_ + cost_.swapCostCyclesPerLevel, inst.seq, blockId, w});
            }
        }
    }

    void free_block_residency(Instance& inst, BlockState& blk) {
        note_occupancy_change();
        blk.resident = false;
        residentBlocks_--;
        residentWarps_ -= warp_count(inst);
        inst.residentBlocks--;
    }

    void block_finished(Instance& inst, BlockState& blk) {
        blk.phase = simdetail::BlockPhase::Finished;
        if (blk.resident) free_block_residency(inst, blk);
        blk.lanes.clear();
        blk.lanes.shrink_to_fit();
        inst.blocksFinished++;
        if (inst.blocksFinished == inst.gridDim) {
            inst.phase = simdetail::InstPhase::Drained;
            runningCount_--;
            if (inst.liveChildren == 0) complete_instance(inst);
        }
        admission_scan();
    }

    void complete_instance(Instance& inst) {
        inst.phase = simdetail::InstPhase::Completed;
        // release pooled buffer storage
        for (auto& [key, buf] : inst.buffers) {
            if (buf.alloc == AllocatorKind::Prealloc && buf.capacity > 0)
                poolLiveBytes_ -= buf.capacity * buf.nvars * kEntryBytes;
        }
        if (inst.parentSeq >= 0) {
            Instance& p = instances_.at(inst.parentSeq);
            p.liveChildren--;
            if (inst.parentBlock >= 0) {
                auto bit = p.blocks.find(inst.parentBlock);
                if (bit != p.blocks.end()) {
                    BlockState& pb = *bit->second;
                    pb.outstandingChildren--;
                    // AtSync means not all warps arrived yet; the last arrival
                    // re-checks the child count itself.
                    if (pb.phase == simdetail::BlockPhase::Swapped &&
                        pb.outstandingChildren == 0)
                        release_sync_block(p, pb);
                }
            }
            if (p.phase == simdetail::InstPhase::Drained && p.liveChildren == 0)
                complete_instance(p);
        }
    }

    void release_sync_block(Instance& inst, BlockState& blk) {
        if (blk.phase == simdetail::BlockPhase::AtSync) {
            // never lost residency; resume immediately
            blk.phase = simdetail::BlockPhase::Running;
            for (std::int64_t w = 0; w < warp_count(inst); w++) {
                WarpState& ws = blk.warps[static_cast<size_t>(w)];
                if (!ws.done) {
                    ws.blocked = false;
                    events_.push(Event{clock_ + cost_.instructionCycles, inst.seq, blk.id, w});
                }
            }
        } else { // swapped out: wait for a residency slot
            resumeQueue_.push_back({inst.seq, blk.id});
            admission_scan();
        }
    }

    // ---------------- main loop ----------------

    void main_loop() {
        while (!events_.empty() && !fault_) {
            Event ev = events_.top();
            events_.pop();
            clock_ = std::max(clock_, ev.cycle);
            auto it = instances_.find(ev.instSeq);
            if (it == instances_.end()) continue;
            Instance& inst = it->second;
            auto bit = inst.blocks.find(ev.block);
            if (bit == inst.blocks.end()) continue;
            advance_warp(inst, *bit->second, ev.warp);
        }
        if (fault_) return;
        for (const auto& [seq, inst] : instances_) {
            if (inst.phase != simdetail::InstPhase::Completed) {
                fault("deadlock",
                      "no runnable work but kernel '" +
                          kernels_[static_cast<size_t>(inst.kernel)].name +
                          "' instance " + std::to_string(seq) + " has not completed");
                m_.deadlockDetected = true;
                return;
            }
        }
    }

    // ---------------- warp execution ----------------

    struct StepCharge {
        std::int64_t cycles = 0;
        double effActive = 0.0;
        double effWeight = 0.0;
    };

    void advance_warp(Instance& inst, BlockState& blk, std::int64_t warpId) {
        WarpState& ws = blk.warps[static_cast<size_t>(warpId)];
        if (ws.done || ws.blocked) return;
        // run zero-cost control ops until a costing statement, block, or end
        while (!fault_) {
            if (ws.stack.empty()) {
                warp_done(inst, blk, ws);
                return;
            }
            Frame& f = ws.stack.back();
            if (f.mask == 0) {
                ws.stack.pop_back();
                continue;
            }
            if (f.idx >= f.stmts->size()) {
                if (f.loop) {
                    loop_step(inst, blk, warpId, f);
                    continue;
                }
                ws.stack.pop_back();
                continue;
            }
            const RStmt& s = (*f.stmts)[f.idx];
            switch (s.k) {
                case simdetail::SK::If: {
                    f.idx++;
                    std::uint32_t thenMask = 0;
                    for (int lane = 0; lane < ws.laneCount; lane++) {
                        if (!(f.mask & (1u << lane))) continue;
                        Value c = eval(inst, blk, warpId, lane, s.exprs[0]);
                        if (fault_) return;
                        if (truthy(c)) thenMask |= (1u << lane);
                    }
                    std::uint32_t elseMask = f.mask & ~thenMask;
                    if (!s.elseBody.empty() && elseMask) {
                        Frame e;
                        e.stmts = &s.elseBody;
                        e.mask = elseMask;
                        ws.stack.push_back(e);
                    }
                    if (!s.body.empty() && thenMask) {
                        Frame t;
                        t.stmts = &s.body;
                        t.mask = thenMask;
                        ws.stack.push_back(t);
                    }
                    continue;
                }
                case simdetail::SK::For: {
                    f.idx++;
                    std::uint32_t mask = f.mask;
                    std::uint32_t liveMask = 0;
                    for (int lane = 0; lane < ws.laneCount; lane++) {
                        if (!(mask & (1u << lane))) continue;
                        Value init = eval(inst, blk, warpId, lane, s.exprs[0]);
                        if (fault_) return;
                        lane_slot(blk, warpId, lane, s.slot) = init;
                        Value lim = eval(inst, blk, warpId, lane, s.exprs[1]);
                        if (fault_) return;
                        if (cmp_lt(init, lim)) liveMask |= (1u << lane);
                    }
                    if (liveMask) {
                        Frame lf;
                        lf.stmts = &s.body;
                        lf.mask = liveMask;
                        lf.loop = &s;
                        ws.stack.push_back(lf);
                    }
                    continue;
                }
                case simdetail::SK::Return: {
                    std::uint32_t gone = f.mask;
                    for (auto& fr : ws.stack) fr.mask &= ~gone;
                    continue;
                }
                case simdetail::SK::Barrier: {
                    f.idx++;
                    ws.blocked = true;
                    blk.arrivedWarps++;
                    check_block_barrier(inst, blk);
                    return;
                }
                case simdetail::SK::SyncDevice: {
                    f.idx++;
                    ws.blocked = true;
                    blk.arrivedWarps++;
                    check_sync_device(inst, blk);
                    return;
                }
                case simdetail::SK::GridBarrier: {
                    f.idx++;
                    ws.blocked = true;
                    blk.arrivedWarps++;
                    check_grid_barrier(inst, blk);
                    return;
                }
                default: {
                    StepCharge charge = exec_costing(inst, blk, warpId, s, f.mask);
                    f.idx++;
                    if (fault_) return;
                    effActive_ += charge.effActive;
                    effTotal_ += charge.effWeight;
                    events_.push(Event{clock_ + std::max<std::int64_t>(charge.cycles, 1), inst.seq,
                                       blk.id, warpId});
                    return;
                }
            }
        }
    }

    void loop_step(Instance& inst, BlockState& blk, std::int64_t warpId, Frame& f) {
        WarpState& ws = blk.warps[static_cast<size_t>(warpId)];
        const RStmt& s = *f.loop;
        std::uint32_t live = 0;
        for (int lane = 0; lane < ws.laneCount; lane++) {
            if (!(f.mask & (1u << lane))) continue;
            Value cur = lane_slot(blk, warpId, lane, s.slot);
            Value step = eval(inst, blk, warpId, lane, s.exprs[2]);
            if (fault_) return;
            Value next = add_values(cur, step);
            lane_slot(blk, warpId, lane, s.slot) = next;
            Value lim = eval(inst, blk, warpId, lane, s.exprs[1]);
            if (fault_) return;
            if (cmp_lt(next, lim)) live |= (1u << lane);
        }
        f.mask = live;
        f.idx = 0;
        if (!live) ws.stack.pop_back();
    }

    void warp_done(Instance& inst, BlockState& blk, WarpState& ws) {
        ws.done = true;
        blk.liveWarps--;
        // a warp ending while others wait at a barrier can complete the set
        if (blk.liveWarps > 0) {
            if (blk.phase == simdetail::BlockPhase::AtBarrier) check_block_barrier(inst, blk);
            if (blk.phase == simdetail::BlockPhase::AtSync) check_sync_device(inst, blk);
            if (blk.phase == simdetail::BlockPhase::AtGridBarrier) check_grid_barrier(inst, blk);
            if (blk.phase == simdetail::BlockPhase::Running && blk.arrivedWarps > 0) {
                check_block_barrier(inst, blk);
            }
            return;
        }
        block_finished(inst, blk);
    }

    void check_block_barrier(Instance& inst, BlockState& blk) {
        blk.phase = simdetail::BlockPhase::AtBarrier;
        if (blk.arrivedWarps < blk.liveWarps) return;
        blk.arrivedWarps = 0;
        blk.phase = simdetail::BlockPhase::Running;
        for (std::int64_t w = 0; w < warp_count(inst); w++) {
            WarpState& ws = blk.warps[static_cast<size_t>(w)];
            if (!ws.done && ws.blocked) {
                ws.blocked = false;
                events_.push(Event{clock_ + cost_.blockBarrierCycles, inst.seq, blk.id, w});
            }
        }
    }

    void check_sync_device(Instance& inst, BlockState& blk) {
        blk.phase = simdetail::BlockPhase::AtSync;
        if (blk.arrivedWarps < blk.liveWarps) return;
        blk.arrivedWarps = 0;
        if (blk.outstandingChildren == 0) {
            release_sync_block(inst, blk);
            return;
        }
        // swap the parent block out while its children run
        m_.parentSwapEvents++;
        blk.phase = simdetail::BlockPhase::Swapped;
        free_block_residency(inst, blk);
        swappedPerDepth_[inst.depth]++;
        std::int64_t reserved =
            static_cast<std::int64_t>(swappedPerDepth_.size()) * dev_.swapReservationBytesPerLevel;
        if (reserved + poolLiveBytes_ > dev_.globalMemBytes) {
            fault("oom", "swap reservations plus pool exceed device global memory");
            return;
        }
        admission_scan();
    }

    void check_grid_barrier(Instance& inst, BlockState& blk) {
        blk.phase = simdetail::BlockPhase::AtGridBarrier;
        if (blk.arrivedWarps < blk.liveWarps) return;
        blk.arrivedWarps = 0;
        inst.naiveArrivedBlocks++;
        if (inst.naiveArrivedBlocks < inst.gridDim) return; // keep spinning, stay resident
        inst.naiveArrivedBlocks = 0;
        for (auto& [bid, b] : inst.blocks) {
            if (b->phase != simdetail::BlockPhase::AtGridBarrier) continue;
            b->phase = simdetail::BlockPhase::Running;
            for (std::int64_t w = 0; w < warp_count(inst); w++) {
                WarpState& ws = b->warps[static_cast<size_t>(w)];
                if (!ws.done && ws.blocked) {
                    ws.blocked = false;
                    events_.push(Event{clock_ + cost_.globalBarrierCyclesPerBlock, inst.seq,
                                       b->id, w});
                }
            }
        }
    }

    // ---------------- costing statements ----------------

    Value& lane_slot(BlockState& blk, std::int64_t warpId, int lane, int slot) {
        return blk.lanes[static_cast<size_t>(warpId * kWarpSize + lane)][static_cast<size_t>(slot)];
    }

    StepCharge exec_costing(Instance& inst, BlockState& blk, std::int64_t warpId, const RStmt& s,
                            std::uint32_t mask) {
        StepCharge ch;
        accesses_.clear();
        int active = 0;
        for (int l = 0; l < 32; l++)
            if (mask & (1u << l)) active++;

        switch (s.k) {
            case simdetail::SK::Let:
            case simdetail::SK::Assign: {
                for (int lane = 0; lane < 32; lane++) {
                    if (!(mask & (1u << lane))) continue;
                    Value v = eval(inst, blk, warpId, lane, s.exprs[0]);
                    if (fault_) return ch;
                    Value& dst = lane_slot(blk, warpId, lane, s.slot);
                    if (s.k == simdetail::SK::Let) {
                        if (s.letFloat)
                            dst = Value::of_float(v.as_double());
                        else if (v.isFloat) {
                            fault("runtime", "assigning float value to int variable");
                            return ch;
                        } else
                            dst = v;
                    } else {
                        if (dst.isFloat)
                            dst = Value::of_float(v.as_double());
                        else if (v.isFloat) {
                            fault("runtime", "assigning float value to int variable");
                            return ch;
                        } else
                            dst = v;
                    }
                }
                break;
            }
            case simdetail::SK::Store: {
                for (int lane = 0; lane < 32; lane++) {
                    if (!(mask & (1u << lane))) continue;
                    Value idx = eval(inst, blk, warpId, lane, s.exprs[0]);
                    Value val = eval(inst, blk, warpId, lane, s.exprs[1]);
                    if (fault_) return ch;
                    array_store(inst, blk, warpId, lane, s.aref, idx, val);
                    if (fault_) return ch;
                }
                break;
            }
            case simdetail::SK::AtomicAdd: {
                for (int lane = 0; lane < 32; lane++) {
                    if (!(mask & (1u << lane))) continue;
                    Value idx = eval(inst, blk, warpId, lane, s.exprs[0]);
                    Value val = eval(inst, blk, warpId, lane, s.exprs[1]);
                    if (fault_) return ch;
                    atomic_add(inst, blk, warpId, lane, s.aref, idx, val);
                    if (fault_) return ch;
                }
                break;
            }
            case simdetail::SK::Launch: {
                std::int64_t launches = 0;
                for (int lane = 0; lane < 32; lane++) {
                    if (!(mask & (1u << lane))) continue;
                    Value g = eval(inst, blk, warpId, lane, s.exprs[0]);
                    Value b = eval(inst, blk, warpId, lane, s.exprs[1]);
                    std::vector<Value> args;
                    for (size_t a = 2; a < s.exprs.size(); a++) {
                        args.push_back(eval(inst, blk, warpId, lane, s.exprs[a]));
                        if (fault_) return ch;
                    }
                    if (fault_) return ch;
                    if (g.isFloat || b.isFloat) {
                        fault("runtime", "launch geometry must be integer");
                        return ch;
                    }
                    Instance* child = create_instance(s.targetKernel, g.i, b.i, std::move(args),
                                                      inst.seq, blk.id, inst.depth + 1);
                    if (fault_) return ch;
                    bind_inherited(inst, blk, warpId, lane, *child);
                    blk.outstandingChildren++;
                    launches++;
                }
                // launches serialize within the warp and count as single-lane work
                std::int64_t launchCycles = launches * cost_.launchOverheadCycles;
                ch.cycles += launchCycles;
                ch.effActive += static_cast<double>(launchCycles);
                ch.effWeight += 32.0 * static_cast<double>(launchCycles);
                admission_scan();
                break;
            }
            case simdetail::SK::BufDecl: {
                std::int64_t allocCycles = declare_buffers(inst, blk, warpId, s);
                if (fault_) return ch;
                ch.cycles += allocCycles;
                ch.effActive += static_cast<double>(allocCycles);
                ch.effWeight += 32.0 * static_cast<double>(allocCycles);
                break;
            }
            case simdetail::SK::BufInsert: {
                std::int64_t inserts = 0;
                for (int lane = 0; lane < 32; lane++) {
                    if (!(mask & (1u << lane))) continue;
                    buffer_insert(inst, blk, warpId, lane, s);
                    if (fault_) return ch;
                    inserts++;
                }
                std::int64_t w = inserts * cost_.insertionCycles;
                ch.cycles += w;
                ch.effActive += static_cast<double>(active) * static_cast<double>(w);
                ch.effWeight += 32.0 * static_cast<double>(w);
                break;
            }
            default:
                break;
        }
        std::int64_t tx = coalesce_accesses();
        std::int64_t vec = cost_.instructionCycles + tx * cost_.dramTxCycles;
        ch.cycles += vec;
        m_.dramTransactions += tx;
        ch.effActive += static_cast<double>(active) * static_cast<double>(vec);
        ch.effWeight += 32.0 * static_cast<double>(vec);
        // deferred protocol charges (grid-last counter decrements)
        WarpState& ws = blk.warps[static_cast<size_t>(warpId)];
        if (ws.pendingExtraCycles > 0) {
            ch.cycles += ws.pendingExtraCycles;
            ws.pendingExtraCycles = 0;
        }
        return ch;
    }

    // 32-byte segment coalescing across the lanes of one statement
    std::int64_t coalesce_accesses() {
        if (accesses_.empty()) return 0;
        for (auto& a : accesses_) a.second /= 4; // 4 eight-byte elements per segment
        std::sort(accesses_.begin(), accesses_.end());
        accesses_.erase(std::unique(accesses_.begin(), accesses_.end()), accesses_.end());
        return static_cast<std::int64_t>(accesses_.size());
    }

    // ---------------- memory ----------------

    GlobalArrayState* resolve_array(Instance&, BlockState& blk, std::int64_t warpId, int lane,
                                    const simdetail::ArrayRef& aref) {
        if (aref.globalIdx >= 0) return &globals_[static_cast<size_t>(aref.globalIdx)];
        Value h = lane_slot(blk, warpId, lane, aref.slot);
        if (h.isFloat || h.i < 0 || h.i >= static_cast<std::int64_t>(globals_.size())) {
            fault("runtime", "invalid array handle");
            return nullptr;
        }
        return &globals_[static_cast<size_t>(h.i)];
    }

    std::int64_t array_id(const GlobalArrayState* g) const {
        return g - globals_.data();
    }

    Value array_load(Instance& inst, BlockState& blk, std::int64_t warpId, int lane,
                     const simdetail::ArrayRef& aref, Value idx) {
        GlobalArrayState* g = resolve_array(inst, blk, warpId, lane, aref);
        if (!g) return Value::of_int(0);
        if (idx.isFloat) {
            fault("runtime", "array index must be an integer");
            return Value::of_int(0);
        }
        std::int64_t n = g->isFloat ? static_cast<std::int64_t>(g->floats.size())
                                    : static_cast<std::int64_t>(g->ints.size());
        if (idx.i < 0 || idx.i >= n) {
            fault("runtime", "array '" + g->name + "' index " + std::to_string(idx.i) +
                                 " out of bounds (length " + std::to_string(n) + ")");
            return Value::of_int(0);
        }
        accesses_.push_back({array_id(g), idx.i});
        return g->isFloat ? Value::of_float(g->floats[static_cast<size_t>(idx.i)])
                          : Value::of_int(g->ints[static_cast<size_t>(idx.i)]);
    }

    void array_store(Instance& inst, BlockState& blk, std::int64_t warpId, int lane,
                     const simdetail::ArrayRef& aref, Value idx, Value val) {
        GlobalArrayState* g = resolve_array(inst, blk, warpId, lane, aref);
        if (!g) return;
        if (idx.isFloat) {
            fault("runtime", "array index must be an integer");
            return;
        }
        std::int64_t n = g->isFloat ? static_cast<std::int64_t>(g->floats.size())
                                    : static_cast<std::int64_t>(g->ints.size());
        if (idx.i < 0 || idx.i >= n) {
            fault("runtime", "array '" + g->name + "' index " + std::to_string(idx.i) +
                                 " out of bounds (length " + std::to_string(n) + ")");
            return;
        }
        accesses_.push_back({array_id(g), idx.i});
        if (g->isFloat) {
            g->floats[static_cast<size_t>(idx.i)] = val.as_double();
        } else {
            if (val.isFloat) {
                fault("runtime", "storing float value into int array '" + g->name + "'");
                return;
            }
            g->ints[static_cast<size_t>(idx.i)] = val.i;
        }
    }

    Value atomic_add(Instance& inst, BlockState& blk, std::int64_t warpId, int lane,
                     const simdetail::ArrayRef& aref, Value idx, Value val) {
        GlobalArrayState* g = resolve_array(inst, blk, warpId, lane, aref);
        if (!g) return Value::of_int(0);
        if (idx.isFloat) {
            fault("runtime", "array index must be an integer");
            return Value::of_int(0);
        }
        std::int64_t n = g->isFloat ? static_cast<std::int64_t>(g->floats.size())
                                    : static_cast<std::int64_t>(g->ints.size());
        if (idx.i < 0 || idx.i >= n) {
            fault("runtime", "array '" + g->name + "' index " + std::to_string(idx.i) +
                                 " out of bounds (length " + std::to_string(n) + ")");
            return Value::of_int(0);
        }
        accesses_.push_back({array_id(g), idx.i});
        if (g->isFloat) {
            double old = g->floats[static_cast<size_t>(idx.i)];
            g->floats[static_cast<size_t>(idx.i)] = old + val.as_double();
            return Value::of_float(old);
        }
        if (val.isFloat) {
            fault("runtime", "atomicAdd of float value on int array '" + g->name + "'");
            return Value::of_int(0);
        }
        std::int64_t old = g->ints[static_cast<size_t>(idx.i)];
        g->ints[static_cast<size_t>(idx.i)] = old + val.i;
        return Value::of_int(old);
    }

    // ---------------- buffers ----------------

    std::int64_t owner_key(const Instance& inst, std::int64_t blockId, std::int64_t warpId) const {
        switch (inst.bufInfo.gran) {
            case ast::Granularity::Warp: return blockId * warp_count(inst) + warpId;
            case ast::Granularity::Block: return blockId;
            case ast::Granularity::Grid: return 0;
        }
        return 0;
    }

    std::int64_t declare_buffers(Instance& inst, BlockState& blk, std::int64_t warpId,
                                 const RStmt& s) {
        if (!inst.bufInfo.declared) {
            inst.bufInfo.declared = true;
            inst.bufInfo.gran = s.gran;
            inst.bufInfo.alloc = s.alloc;
            inst.bufInfo.nvars = s.nvars;
            inst.bufInfo.totalBytes = s.totalBytes;
            inst.bufInfo.decl = &s;
        }
        // one allocation per owner; the owning representative warp pays
        bool representative = false;
        switch (s.gran) {
            case ast::Granularity::Warp: representative = true; break;
            case ast::Granularity::Block: representative = (warpId == 0); break;
            case ast::Granularity::Grid: representative = (blk.id == 0 && warpId == 0); break;
        }
        if (!representative) return 0;
        const AllocatorModel& am = cost_.allocator(s.alloc);
        std::int64_t allocCycles = am.perAllocCostCycles + am.perFreeCostCycles;
        m_.allocCyclesCharged += allocCycles;
        // eagerly bind capacity when the size expression has no locals
        std::int64_t key = owner_key(inst, blk.id, warpId);
        SimBuffer& buf = inst.buffers[key];
        buf.nvars = s.nvars;
        buf.alloc = s.alloc;
        buf.totalBytes = s.totalBytes;
        if (!s.perSizeDeferred && buf.capacity < 0) {
            std::int64_t cap;
            if (s.gran == ast::Granularity::Grid) {
                cap = s.totalBytes / (s.nvars * kEntryBytes);
            } else {
                Value v = eval(inst, blk, warpId, 0, s.exprs[0]);
                if (fault_) return allocCycles;
                cap = v.i;
            }
            bind_capacity(inst, buf, cap);
        }
        return allocCycles;
    }

    void bind_capacity(Instance& inst, SimBuffer& buf, std::int64_t cap) {
        if (cap < 1) {
            fault("overflow", "consolidation buffer capacity must be positive");
            return;
        }
        buf.capacity = cap;
        if (buf.alloc == AllocatorKind::Prealloc) {
            poolLiveBytes_ += cap * buf.nvars * kEntryBytes;
            if (poolLiveBytes_ > buf.totalBytes) {
                fault("overflow", "pool overflow: live buffers need " +
                                      std::to_string(poolLiveBytes_) + " bytes, pool holds " +
                                      std::to_string(buf.totalBytes) + " (deficit " +
                                      std::to_string(poolLiveBytes_ - buf.totalBytes) + ")");
            }
        }
        (void)inst;
    }

    SimBuffer* own_buffer(Instance& inst, BlockState& blk, std::int64_t warpId, bool createIfMissing) {
        if (!inst.bufInfo.declared) return nullptr;
        std::int64_t key = owner_key(inst, blk.id, warpId);
        auto it = inst.buffers.find(key);
        if (it == inst.buffers.end()) {
            if (!createIfMissing) return nullptr;
            SimBuffer& buf = inst.buffers[key];
            buf.nvars = inst.bufInfo.nvars;
            buf.alloc = inst.bufInfo.alloc;
            buf.totalBytes = inst.bufInfo.totalBytes;
            return &buf;
        }
        return &it->second;
    }

    void buffer_insert(Instance& inst, BlockState& blk, std::int64_t warpId, int lane,
                       const RStmt& s) {
        if (!inst.bufInfo.declared) {
            fault("runtime", "dp_insert without dp_buffers");
            return;
        }
        SimBuffer* buf = own_buffer(inst, blk, warpId, true);
        if (buf->capacity < 0) {
            // deferred runtime-variable size: bound by the first inserting lane
            std::int64_t cap;
            if (inst.bufInfo.gran == ast::Granularity::Grid) {
                cap = inst.bufInfo.totalBytes / (inst.bufInfo.nvars * kEntryBytes);
            } else {
                Value v = eval(inst, blk, warpId, lane, inst.bufInfo.decl->exprs[0]);
                if (fault_) return;
                cap = v.isFloat ? static_cast<std::int64_t>(v.f) : v.i;
            }
            bind_capacity(inst, *buf, cap);
            if (fault_) return;
        }
        if (buf->count >= buf->capacity) {
            fault("overflow", "consolidation buffer overflow: owner " +
                                  std::to_string(owner_key(inst, blk.id, warpId)) +
                                  " at capacity " + std::to_string(buf->capacity));
            return;
        }
        Value g = eval(inst, blk, warpId, lane, s.exprs[0]);
        Value b = eval(inst, blk, warpId, lane, s.exprs[1]);
        if (fault_) return;
        buf->cfgs.push_back({g.i, b.i});
        for (size_t a = 2; a < s.exprs.size(); a++) {
            buf->storage.push_back(eval(inst, blk, warpId, lane, s.exprs[a]));
            if (fault_) return;
        }
        buf->count++;
        m_.bufferItemsInserted++;
    }

    void bind_inherited(Instance& parent, BlockState& blk, std::int64_t warpId, int /*lane*/,
                        Instance& child) {
        if (parent.bufInfo.declared) {
            // make sure the owner buffer object exists, even when empty
            own_buffer(parent, blk, warpId, true);
            child.inheritedFromSeq = parent.seq;
            child.inheritedOwnerKey = owner_key(parent, blk.id, warpId);
        } else {
            child.inheritedFromSeq = parent.inheritedFromSeq;
            child.inheritedOwnerKey = parent.inheritedOwnerKey;
        }
    }

    SimBuffer* inherited_buffer(Instance& inst) {
        if (inst.inheritedFromSeq < 0) return nullptr;
        auto it = instances_.find(inst.inheritedFromSeq);
        if (it == instances_.end()) return nullptr;
        auto bit = it->second.buffers.find(inst.inheritedOwnerKey);
        if (bit == it->second.buffers.end()) return nullptr;
        return &bit->second;
    }

    // ---------------- expression evaluation ----------------

    static bool truthy(const Value& v) { return v.as_double() != 0.0; }

    static bool cmp_lt(const Value& a, const Value& b) {
        if (a.isFloat || b.isFloat) return a.as_double() < b.as_double();
        return a.i < b.i;
    }

    static Value add_values(const Value& a, const Value& b) {
        if (a.isFloat || b.isFloat) return Value::of_float(a.as_double() + b.as_double());
        return Value::of_int(a.i + b.i);
    }

    Value apply_binary(simdetail::Op op, const Value& a, const Value& b) {
        using simdetail::Op;
        bool flt = a.isFloat || b.isFloat;
        switch (op) {
            case Op::Add: return flt ? Value::of_float(a.as_double() + b.as_double())
                                     : Value::of_int(a.i + b.i);
            case Op::Sub: return flt ? Value::of_float(a.as_double() - b.as_double())
                                     : Value::of_int(a.i - b.i);
            case Op::Mul: return flt ? Value::of_float(a.as_double() * b.as_double())
                                     : Value::of_int(a.i * b.i);
            case Op::Div:
                if (flt) return Value::of_float(a.as_double() / b.as_double());
                if (b.i == 0) {
                    fault("runtime", "integer division by zero");
                    return Value::of_int(0);
                }
                return Value::of_int(a.i / b.i);
            case Op::Mod:
                if (flt) {
                    fault("runtime", "modulo requires integer operands");
                    return Value::of_int(0);
                }
                if (b.i == 0) {
                    fault("runtime", "integer modulo by zero");
                    return Value::of_int(0);
                }
                return Value::of_int(a.i % b.i);
            case Op::Lt: return Value::of_int(flt ? a.as_double() < b.as_double() : a.i < b.i);
            case Op::Le: return Value::of_int(flt ? a.as_double() <= b.as_double() : a.i <= b.i);
            case Op::Gt: return Value::of_int(flt ? a.as_double() > b.as_double() : a.i > b.i);
            case Op::Ge: return Value::of_int(flt ? a.as_double() >= b.as_double() : a.i >= b.i);
            case Op::Eq: return Value::of_int(flt ? a.as_double() == b.as_double() : a.i == b.i);
            case Op::Ne: return Value::of_int(flt ? a.as_double() != b.as_double() : a.i != b.i);
            case Op::And: return Value::of_int(truthy(a) && truthy(b) ? 1 : 0);
            case Op::Or: return Value::of_int(truthy(a) || truthy(b) ? 1 : 0);
            case Op::Min:
                return flt ? Value::of_float(std::min(a.as_double(), b.as_double()))
                           : Value::of_int(std::min(a.i, b.i));
            case Op::Max:
                return flt ? Value::of_float(std::max(a.as_double(), b.as_double()))
                           : Value::of_int(std::max(a.i, b.i));
            default: return Value::of_int(0);
        }
    }

    Value eval(Instance& inst, BlockState& blk, std::int64_t warpId, int lane, const RExpr& e) {
        using simdetail::RK;
        switch (e.k) {
            case RK::IntLit: return Value::of_int(e.ival);
            case RK::FloatLit: return Value::of_float(e.fval);
            case RK::Local: return lane_slot(blk, warpId, lane, e.slot);
            case RK::ArrayLoad: {
                Value idx = eval(inst, blk, warpId, lane, e.args[0]);
                if (fault_) return Value::of_int(0);
                return array_load(inst, blk, warpId, lane, e.aref, idx);
            }
            case RK::Unary: {
                Value a = eval(inst, blk, warpId, lane, e.args[0]);
                if (fault_) return Value::of_int(0);
                if (e.op == simdetail::Op::Neg)
                    return a.isFloat ? Value::of_float(-a.f) : Value::of_int(-a.i);
                return Value::of_int(truthy(a) ? 0 : 1);
            }
            case RK::Binary: {
                // short-circuit keeps div-by-zero guards usable
                if (e.op == simdetail::Op::And) {
                    Value a = eval(inst, blk, warpId, lane, e.args[0]);
                    if (fault_ || !truthy(a)) return Value::of_int(0);
                    Value b = eval(inst, blk, warpId, lane, e.args[1]);
                    return Value::of_int(truthy(b) ? 1 : 0);
                }
                if (e.op == simdetail::Op::Or) {
                    Value a = eval(inst, blk, warpId, lane, e.args[0]);
                    if (fault_) return Value::of_int(0);
                    if (truthy(a)) return Value::of_int(1);
                    Value b = eval(inst, blk, warpId, lane, e.args[1]);
                    return Value::of_int(truthy(b) ? 1 : 0);
                }
                Value a = eval(inst, blk, warpId, lane, e.args[0]);
                Value b = eval(inst, blk, warpId, lane, e.args[1]);
                if (fault_) return Value::of_int(0);
                return apply_binary(e.op, a, b);
            }
            case RK::MinMax: {
                Value a = eval(inst, blk, warpId, lane, e.args[0]);
                Value b = eval(inst, blk, warpId, lane, e.args[1]);
                if (fault_) return Value::of_int(0);
                return apply_binary(e.op, a, b);
            }
            case RK::AtomicAdd: {
                Value idx = eval(inst, blk, warpId, lane, e.args[0]);
                Value val = eval(inst, blk, warpId, lane, e.args[1]);
                if (fault_) return Value::of_int(0);
                return atomic_add(inst, blk, warpId, lane, e.aref, idx, val);
            }
            case RK::ThreadIdx: return Value::of_int(warpId * kWarpSize + lane);
            case RK::BlockIdx: return Value::of_int(blk.id);
            case RK::BlockDim: return Value::of_int(inst.blockDim);
            case RK::GridDim: return Value::of_int(inst.gridDim);
            case RK::BufCount: {
                SimBuffer* b = inherited_buffer(inst);
                if (!b) {
                    fault("runtime", "dp_buf_count: no inherited consolidation buffer");
                    return Value::of_int(0);
                }
                return Value::of_int(b->count);
            }
            case RK::BufPending: {
                SimBuffer* b = own_buffer(inst, blk, warpId, false);
                return Value::of_int(b ? b->count : 0);
            }
            case RK::BufGet: {
                SimBuffer* b = inherited_buffer(inst);
                if (!b) {
                    fault("runtime", "dp_buf_get: no inherited consolidation buffer");
                    return Value::of_int(0);
                }
                Value idx = eval(inst, blk, warpId, lane, e.args[0]);
                if (fault_) return Value::of_int(0);
                std::int64_t slot = e.ival;
                if (idx.i < 0 || idx.i >= b->count || slot < 0 || slot >= b->nvars) {
                    fault("runtime", "dp_buf_get out of range");
                    return Value::of_int(0);
                }
                return b->storage[static_cast<size_t>(idx.i * b->nvars + slot)];
            }
            case RK::BufCfgGrid:
            case RK::BufCfgBlock: {
                SimBuffer* b = inherited_buffer(inst);
                if (!b) {
                    fault("runtime", "dp_buf_cfg: no inherited consolidation buffer");
                    return Value::of_int(0);
                }
                Value idx = eval(inst, blk, warpId, lane, e.args[0]);
                if (fault_) return Value::of_int(0);
                if (idx.i < 0 || idx.i >= b->count) {
                    fault("runtime", "dp_buf_cfg out of range");
                    return Value::of_int(0);
                }
                const auto& cfg = b->cfgs[static_cast<size_t>(idx.i)];
                return Value::of_int(e.k == RK::BufCfgGrid ? cfg.first : cfg.second);
            }
            case RK::GridLast: {
                if (!blk.gridLastKnown) {
                    blk.gridLastKnown = true;
                    inst.barrierCounter--;
                    blk.gridLastVal = inst.barrierCounter == 0 ? 1 : 0;
                    // the counter decrement is a global-memory protocol step
                    m_.dramTransactions += 1;
                }
                return Value::of_int(blk.gridLastVal);
            }
        }
        return Value::of_int(0);
    }

    // ---------------- teardown ----------------

    SimResult finish() {
        note_occupancy_change();
        SimResult res;
        res.globals = globals_;
        m_.simulatedCycles = clock_;
        if (effTotal_ > 0.0) m_.warpExecEfficiency = effActive_ / effTotal_;
        std::int64_t denom = clock_ * dev_.smCount * dev_.maxWarpsPerSM;
        m_.smOccupancyAchieved =
            denom > 0 ? static_cast<double>(occIntegralNum_) / static_cast<double>(denom) : 0.0;
        res.metrics = m_;
        res.fault = fault_;
        return res;
    }
};

inline SimResult simulate(const ast::Program& prog, const Workload& wl, const DeviceModel& dev,
                          const CostModel& cost, const SimConfig* stubs = nullptr) {
    Simulator sim(prog, wl, dev, cost);
    if (stubs) sim.set_resource_stubs(*stubs);
    return sim.run();
}

inline SimResult simulate(const ast::Program& prog, const Workload& wl, const SimConfig& cfg) {
    Simulator sim(prog, wl, cfg.device, cfg.cost);
    sim.set_resource_stubs(cfg);
    return sim.run();
}

} // namespace dpcons
