#include "revsnn/engine.hpp"

#include <atomic>
#include <deque>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace revsnn {

namespace {

// Single-assignment tensor slots shared by graph tasks. Each task declares
// the slots it reads when it is wired; the declarations double as consumer
// counts, and the last consumer frees an owned tensor. Reads of unpublished
// or freed slots throw, which turns any wiring mistake into a deterministic
// failure instead of a race. Slots are working memory of the running pass;
// the meter counts retained storage only, so slots are never metered.
class SlotArena {
public:
    int add_external(const Tensor* t) {
        slots_.emplace_back();
        slots_.back().ext = t;
        return static_cast<int>(slots_.size()) - 1;
    }

    int add_owned() {
        slots_.emplace_back();
        return static_cast<int>(slots_.size()) - 1;
    }

    // Wiring-time only (single thread).
    void expect(int id, int reads) { slots_[id].remaining += reads; }

    void publish(int id, Tensor t) {
        Slot& s = slots_[id];
        if (s.ext || s.has.load(std::memory_order_relaxed))
            throw std::logic_error("SlotArena: slot published twice");
        s.own = std::move(t);
        s.has.store(true, std::memory_order_release);
    }

    const Tensor& get(int id) const {
        const Slot& s = slots_[id];
        if (s.ext) return *s.ext;
        if (!s.has.load(std::memory_order_acquire))
            throw std::logic_error("SlotArena: slot read before publish or after free");
        return s.own;
    }

    // Post-run only: moves an owned tensor out (copies an external one).
    Tensor take(int id) {
        Slot& s = slots_[id];
        if (s.ext) return *s.ext;
        if (!s.has.load(std::memory_order_acquire))
            throw std::logic_error("SlotArena: slot taken before publish or after free");
        s.has.store(false, std::memory_order_relaxed);
        Tensor out = std::move(s.own);
        s.own = Tensor{};
        return out;
    }

    void consume(const std::vector<int>& ids) {
        for (int id : ids) {
            Slot& s = slots_[id];
            const int left = s.remaining.fetch_sub(1, std::memory_order_acq_rel) - 1;
            if (left < 0) throw std::logic_error("SlotArena: slot consumed more than declared");
            if (left == 0 && !s.ext) {
                s.has.store(false, std::memory_order_release);
                s.own = Tensor{};
            }
        }
    }

private:
    struct Slot {
        const Tensor* ext = nullptr;
        Tensor own;
        std::atomic<bool> has{false};
        std::atomic<int> remaining{0};
    };

    std::deque<Slot> slots_;  // deque keeps slot addresses stable
};

std::string tname(NodeKind k, int i) {
    return std::string(node_kind_name(k)) + std::to_string(i);
}

// Registers the task's reads as consumer counts and appends the matching
// consume to the body, so counts and actual reads share one source of truth.
void set_task(TaskGraph& g, SlotArena& arena, const std::string& name, std::vector<int> reads,
              std::function<void()> body) {
    for (int id : reads) arena.expect(id, 1);
    g.set_work(name, [&arena, reads = std::move(reads), body = std::move(body)]() {
        body();
        arena.consume(reads);
    });
}

void attach_interior_lease(FnCtx* ctx, MemoryMeter* meter) {
    if (ctx && meter) ctx->attach_lease(meter, MemCategory::ReversibleInterior);
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

void prepare_unfused_record(ChainRecord* rec, EvalMode mode, Policy policy, const StreamPair& x,
                            int blocks, MemoryMeter* meter) {
    if (!rec) return;
    rec->policy = policy;
    rec->chain_stats = ChainStats{};
    rec->chain_ctx = ChainCtx{};
    if (mode == EvalMode::Train) {
        rec->block_stats.assign(blocks, BlockStats{});
        rec->block_ctx.clear();
        if (policy == Policy::StoreAll) {
            rec->block_ctx.resize(blocks);
            rec->input = StreamPair{x.s1, x.s2};
            if (meter)
                rec->input_lease = MeterLease(meter, MemCategory::Boundary,
                                              rec->input.s1.bytes() + rec->input.s2.bytes());
        }
    } else if (mode == EvalMode::Replay) {
        if (static_cast<int>(rec->block_stats.size()) != blocks)
            throw std::invalid_argument("chain_forward: replay record does not match chain");
    }
}

StreamPair forward_unfused(const ParamStore& params, const ChainModules& chain,
                           const StreamPair& x, EvalMode mode, Policy policy, Executor& exec,
                           ChainRecord* rec, MemoryMeter* meter) {
    const int B = static_cast<int>(chain.fs.size());
    if (B == 0 || chain.gs.size() != chain.fs.size())
        throw std::invalid_argument("chain_forward: chain needs matching F and G lists");
    prepare_unfused_record(rec, mode, policy, x, B, meter);

    TaskGraph g = build_forward_chain_graph(B, chain.flavor);
    SlotArena arena;
    // y1s/y2s hold stream values, fout holds bare F outputs (stream-swapped
    // couplings fold the y1 additions into consumers instead).
    std::vector<int> fout(B + 1, -1), y1s(B + 1, -1), y2s(B + 1, -1);
    y1s[0] = arena.add_external(&x.s1);
    y2s[0] = arena.add_external(&x.s2);
    for (int k = 1; k <= B; ++k) {
        y2s[k] = arena.add_owned();
        if (chain.flavor == Flavor::Baseline) y1s[k] = arena.add_owned();
        else fout[k] = arena.add_owned();
    }

    const bool record_stats = rec && mode != EvalMode::Infer;
    const bool record_ctx = rec && mode == EvalMode::Train && policy == Policy::StoreAll;

    for (int k = 1; k <= B; ++k) {
        const StreamFn* F = chain.fs[k - 1];
        const StreamFn* G = chain.gs[k - 1];
        FnStats* fst = record_stats ? &rec->block_stats[k - 1].f : nullptr;
        FnStats* gst = record_stats ? &rec->block_stats[k - 1].g : nullptr;
        FnCtx* fcx = record_ctx ? &rec->block_ctx[k - 1].f : nullptr;
        FnCtx* gcx = record_ctx ? &rec->block_ctx[k - 1].g : nullptr;

        if (chain.flavor == Flavor::Baseline) {
            // y1_k = y1_k-1 + F(y2_k-1), y2_k = y2_k-1 + G(y1_k)
            set_task(g, arena, tname(NodeKind::F, k), {y1s[k - 1], y2s[k - 1]},
                     [&params, &arena, F, fst, fcx, meter, mode, in1 = y1s[k - 1],
                      in2 = y2s[k - 1], out = y1s[k]]() {
                         Tensor fv = F->forward(params, arena.get(in2), mode, fst, fcx);
                         attach_interior_lease(fcx, meter);
                         arena.publish(out, add(arena.get(in1), fv));
                     });
            set_task(g, arena, tname(NodeKind::G, k), {y1s[k], y2s[k - 1]},
                     [&params, &arena, G, gst, gcx, meter, mode, in1 = y1s[k],
                      in2 = y2s[k - 1], out = y2s[k]]() {
                         Tensor gv = G->forward(params, arena.get(in1), mode, gst, gcx);
                         attach_interior_lease(gcx, meter);
                         arena.publish(out, add(arena.get(in2), gv));
                     });
        } else {
            // F_k reads y1_k-1 and publishes only F(y1_k-1); consumers form
            // the stream sums themselves from slots that are already
            // published, which keeps F_k independent of G_k-1.
            std::vector<int> freads = k == 1 ? std::vector<int>{y1s[0]}
                                             : std::vector<int>{y2s[k - 2], fout[k - 1]};
            set_task(g, arena, tname(NodeKind::F, k), std::move(freads),
                     [&params, &arena, F, fst, fcx, meter, mode, k, x1id = y1s[0],
                      prev2 = k >= 2 ? y2s[k - 2] : -1, prevf = k >= 2 ? fout[k - 1] : -1,
                      out = fout[k]]() {
                         Tensor formed;
                         const Tensor* x1 = nullptr;
                         if (k == 1) x1 = &arena.get(x1id);
                         else {
                             formed = add(arena.get(prev2), arena.get(prevf));
                             x1 = &formed;
                         }
                         Tensor fv = F->forward(params, *x1, mode, fst, fcx);
                         attach_interior_lease(fcx, meter);
                         arena.publish(out, std::move(fv));
                     });
            std::vector<int> greads = {y2s[k - 1], fout[k]};
            if (k == 1) greads.push_back(y1s[0]);
            else {
                greads.push_back(y2s[k - 2]);
                greads.push_back(fout[k - 1]);
            }
            set_task(g, arena, tname(NodeKind::G, k), std::move(greads),
                     [&params, &arena, G, gst, gcx, meter, mode, k, x1id = y1s[0],
                      cur2 = y2s[k - 1], curf = fout[k], prev2 = k >= 2 ? y2s[k - 2] : -1,
                      prevf = k >= 2 ? fout[k - 1] : -1, out = y2s[k]]() {
                         Tensor y1k = add(arena.get(cur2), arena.get(curf));
                         Tensor gv = G->forward(params, y1k, mode, gst, gcx);
                         attach_interior_lease(gcx, meter);
                         Tensor x1k = k == 1 ? arena.get(x1id)
                                             : add(arena.get(prev2), arena.get(prevf));
                         arena.publish(out, add(x1k, gv));
                     });
        }
    }

    StreamPair out;
    if (chain.flavor == Flavor::Baseline) {
        arena.expect(y1s[B], 1);
        arena.expect(y2s[B], 1);
        exec.run(g);
        out.s1 = arena.take(y1s[B]);
        out.s2 = arena.take(y2s[B]);
    } else {
        arena.expect(y2s[B - 1], 1);
        arena.expect(fout[B], 1);
        arena.expect(y2s[B], 1);
        exec.run(g);
        out.s1 = add(arena.get(y2s[B - 1]), arena.get(fout[B]));
        out.s2 = arena.take(y2s[B]);
    }
    return out;
}

StreamPair forward_fused(const ParamStore& params, const ChainModules& chain, const StreamPair& x,
                         EvalMode mode, Policy policy, Executor& exec, ChainRecord* rec,
                         MemoryMeter* meter) {
    if (!chain.fused.f_first || !chain.fused.g_last)
        throw std::invalid_argument("chain_forward: fused chain endpoints missing");
    const int B = chain.fused.block_count();
    const int nm = B - 1;
    if (rec) {
        rec->policy = policy;
        rec->block_stats.clear();
        rec->block_ctx.clear();
        if (mode == EvalMode::Train) {
            rec->chain_stats = ChainStats{};
            rec->chain_stats.fused.assign(nm, FnStats{});
            rec->chain_ctx = ChainCtx{};
            if (policy == Policy::StoreAll) {
                rec->chain_ctx.fused.resize(nm);
                rec->input = StreamPair{x.s1, x.s2};
                if (meter)
                    rec->input_lease = MeterLease(meter, MemCategory::Boundary,
                                                  rec->input.s1.bytes() + rec->input.s2.bytes());
            }
        } else if (mode == EvalMode::Replay) {
            if (static_cast<int>(rec->chain_stats.fused.size()) != nm)
                throw std::invalid_argument("chain_forward: replay record does not match chain");
        }
    }

    TaskGraph g = build_forward_chain_graph(B, Flavor::ParaRevFused);
    SlotArena arena;
    // us[k] is y1 of block k; us[0] is the x1 input.
    std::vector<int> us(B + 1, -1);
    us[0] = arena.add_external(&x.s1);
    for (int k = 1; k <= B; ++k) us[k] = arena.add_owned();
    const int xs2 = arena.add_external(&x.s2);
    const int y2fin = arena.add_owned();

    const bool record_stats = rec && mode != EvalMode::Infer;
    const bool record_ctx = rec && mode == EvalMode::Train && policy == Policy::StoreAll;

    set_task(g, arena, tname(NodeKind::F, 1), {us[0], xs2},
             [&params, &arena, &chain, meter, mode, xs2, in = us[0], out = us[1],
              st = record_stats ? &rec->chain_stats.f_first : nullptr,
              cx = record_ctx ? &rec->chain_ctx.f_first : nullptr]() {
                 Tensor fv = chain.fused.f_first->forward(params, arena.get(in), mode, st, cx);
                 attach_interior_lease(cx, meter);
                 arena.publish(out, add(arena.get(xs2), fv));
             });
    for (int k = 1; k <= nm; ++k) {
        set_task(g, arena, tname(NodeKind::M, k), {us[k], us[k - 1]},
                 [&params, &arena, M = chain.fused.fused[k - 1], meter, mode, in = us[k],
                  prev = us[k - 1], out = us[k + 1],
                  st = record_stats ? &rec->chain_stats.fused[k - 1] : nullptr,
                  cx = record_ctx ? &rec->chain_ctx.fused[k - 1] : nullptr]() {
                     FusedFn::Out mo = M->forward(params, arena.get(in), mode, st, cx);
                     attach_interior_lease(cx, meter);
                     Tensor y2k = add(arena.get(prev), mo.g_part);
                     arena.publish(out, add(y2k, mo.f_part));
                 });
    }
    set_task(g, arena, tname(NodeKind::G, B), {us[B], us[B - 1]},
             [&params, &arena, &chain, meter, mode, in = us[B], prev = us[B - 1], out = y2fin,
              st = record_stats ? &rec->chain_stats.g_last : nullptr,
              cx = record_ctx ? &rec->chain_ctx.g_last : nullptr]() {
                 Tensor gv = chain.fused.g_last->forward(params, arena.get(in), mode, st, cx);
                 attach_interior_lease(cx, meter);
                 arena.publish(out, add(arena.get(prev), gv));
             });

    arena.expect(us[B], 1);
    arena.expect(y2fin, 1);
    exec.run(g);
    StreamPair out;
    out.s1 = arena.take(us[B]);
    out.s2 = arena.take(y2fin);
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

struct BackwardCommon {
    ParamStore& params;
    const StreamPair& y;
    const StreamPair& grad_y;
    ChainRecord& rec;
};

ChainBackwardResult backward_pararev(const ChainModules& chain, Executor& exec,
                                     BackwardCommon c) {
    const int B = static_cast<int>(chain.fs.size());
    const Policy policy = c.rec.policy;
    if (static_cast<int>(c.rec.block_stats.size()) != B)
        throw std::invalid_argument("chain_backward: record does not match chain");
    if (policy == Policy::StoreAll && static_cast<int>(c.rec.block_ctx.size()) != B)
        throw std::invalid_argument("chain_backward: store-all record is missing contexts");

    TaskGraph g = build_backward_chain_graph(B, Flavor::ParaRev, policy);
    SlotArena arena;
    const int sy2 = arena.add_external(&c.y.s2);
    const int sg1 = arena.add_external(&c.grad_y.s1);
    const int sg2 = arena.add_external(&c.grad_y.s2);

    std::vector<int> v1(B + 1, -1), fout(B + 1, -1), gout(B + 1, -1);
    std::vector<int> aval(B + 1, -1), bF(B + 1, -1), bG(B + 1, -1);
    for (int k = 1; k <= B; ++k) {
        aval[k] = arena.add_owned();
        bF[k] = arena.add_owned();
        bG[k] = arena.add_owned();
        if (policy == Policy::Recompute) {
            fout[k] = arena.add_owned();
            gout[k] = arena.add_owned();
            v1[k] = k == B ? arena.add_external(&c.y.s1)
                           : arena.add_owned();
        }
    }
    const int gx1 = arena.add_owned();
    const int x1rec = policy == Policy::Recompute
                          ? arena.add_owned()
                          : -1;

    std::vector<BlockCtx> inv_ctx;
    if (policy == Policy::Recompute) inv_ctx.resize(B);

    if (policy == Policy::Recompute) {
        for (int k = 1; k <= B; ++k) {
            const StreamFn* F = chain.fs[k - 1];
            const StreamFn* G = chain.gs[k - 1];
            // iG_k replays G_k(y1_k), forming y1_k = y2_k+1 - gout_k+1 with
            // y2_k+1 = v1_k+2 - fout_k+2; iF_k forms y1_k-1 the same way one
            // level down. The duplicated subtractions use identical slots,
            // so every formation of the same value is bit-identical.
            std::vector<int> greads;
            if (k == B) greads = {v1[B]};
            else if (k == B - 1) greads = {sy2, gout[B]};
            else greads = {v1[k + 2], fout[k + 2], gout[k + 1]};
            set_task(g, arena, tname(NodeKind::InvG, k), std::move(greads),
                     [&params = c.params, &arena, &rec = c.rec, G, k, B, sy2,
                      vnext = k + 2 <= B ? v1[k + 2] : -1, fnext = k + 2 <= B ? fout[k + 2] : -1,
                      gnext = k < B ? gout[k + 1] : -1, self = v1[k], out = gout[k],
                      ctx = &inv_ctx[k - 1].g]() {
                         Tensor formed;
                         const Tensor* y1k = nullptr;
                         if (k == B) y1k = &arena.get(self);
                         else {
                             Tensor y2next = k + 1 == B
                                                 ? arena.get(sy2)
                                                 : sub(arena.get(vnext), arena.get(fnext));
                             formed = sub(y2next, arena.get(gnext));
                             y1k = &formed;
                         }
                         Tensor gv = G->forward(params, *y1k, EvalMode::Replay,
                                                &rec.block_stats[k - 1].g, ctx);
                         arena.publish(out, std::move(gv));
                         if (k < B) arena.publish(self, std::move(formed));
                     });
            std::vector<int> freads;
            if (k == B) freads = {sy2, gout[B]};
            else freads = {v1[k + 1], fout[k + 1], gout[k]};
            set_task(g, arena, tname(NodeKind::InvF, k), std::move(freads),
                     [&params = c.params, &arena, &rec = c.rec, F, k, B, sy2,
                      vnext = k < B ? v1[k + 1] : -1, fnext = k < B ? fout[k + 1] : -1,
                      gcur = gout[k], out = fout[k], x1out = x1rec, ctx = &inv_ctx[k - 1].f]() {
                         Tensor y2k = k == B ? arena.get(sy2)
                                             : sub(arena.get(vnext), arena.get(fnext));
                         Tensor y1prev = sub(y2k, arena.get(gcur));
                         Tensor fv = F->forward(params, y1prev, EvalMode::Replay,
                                                &rec.block_stats[k - 1].f, ctx);
                         arena.publish(out, std::move(fv));
                         if (k == 1) arena.publish(x1out, std::move(y1prev));
                     });
        }
    }

    for (int k = 1; k <= B; ++k) {
        const StreamFn* F = chain.fs[k - 1];
        const StreamFn* G = chain.gs[k - 1];
        FnCtx* fctx = policy == Policy::StoreAll ? &c.rec.block_ctx[k - 1].f : &inv_ctx[k - 1].f;
        FnCtx* gctx = policy == Policy::StoreAll ? &c.rec.block_ctx[k - 1].g : &inv_ctx[k - 1].g;

        set_task(g, arena, tname(NodeKind::VjpG, k), {k == B ? sg2 : aval[k + 1]},
                 [&params = c.params, &arena, &rec = c.rec, G, k, gctx,
                  seed = k == B ? sg2 : aval[k + 1], out = bG[k]]() {
                     Tensor gi = G->backward(params, *gctx, rec.block_stats[k - 1].g,
                                             arena.get(seed));
                     *gctx = FnCtx{};
                     arena.publish(out, std::move(gi));
                 });

        // a_k = bG_k + bF_k+1 + a_k+2, where a_B+1 is the incoming y2
        // gradient and a_B additionally absorbs the incoming y1 gradient.
        std::vector<int> areads = {bG[k]};
        if (k + 1 <= B) areads.push_back(bF[k + 1]);
        if (k + 2 <= B) areads.push_back(aval[k + 2]);
        if (k == B) areads.push_back(sg1);
        if (k == B - 1) areads.push_back(sg2);
        set_task(g, arena, "a" + std::to_string(k), std::move(areads),
                 [&arena, k, B, sg1, sg2, bgk = bG[k], bfn = k + 1 <= B ? bF[k + 1] : -1,
                  anext = k + 2 <= B ? aval[k + 2] : -1, out = aval[k]]() {
                     Tensor acc = arena.get(bgk);
                     if (bfn >= 0) add_into(acc, arena.get(bfn));
                     if (anext >= 0) add_into(acc, arena.get(anext));
                     if (k == B) add_into(acc, arena.get(sg1));
                     if (k == B - 1) add_into(acc, arena.get(sg2));
                     arena.publish(out, std::move(acc));
                 });

        set_task(g, arena, tname(NodeKind::VjpF, k), {aval[k]},
                 [&params = c.params, &arena, &rec = c.rec, F, k, fctx, seed = aval[k],
                  out = bF[k]]() {
                     Tensor fi = F->backward(params, *fctx, rec.block_stats[k - 1].f,
                                             arena.get(seed));
                     *fctx = FnCtx{};
                     arena.publish(out, std::move(fi));
                 });
    }

    set_task(g, arena, "ax1", B >= 2 ? std::vector<int>{bF[1], aval[2]}
                                     : std::vector<int>{bF[1], sg2},
             [&arena, B, sg2, bf1 = bF[1], a2 = B >= 2 ? aval[2] : -1, out = gx1]() {
                 Tensor acc = arena.get(bf1);
                 add_into(acc, a2 >= 0 ? arena.get(a2) : arena.get(sg2));
                 arena.publish(out, std::move(acc));
             });

    arena.expect(aval[1], 1);
    arena.expect(gx1, 1);
    if (policy == Policy::Recompute) {
        arena.expect(x1rec, 1);
        arena.expect(v1[1], 1);
        arena.expect(fout[1], 1);
    }

    exec.run(g);

    ChainBackwardResult res;
    res.grad_in.s1 = arena.take(gx1);
    res.grad_in.s2 = arena.take(aval[1]);
    if (policy == Policy::Recompute) {
        res.input.s1 = arena.take(x1rec);
        res.input.s2 = sub(arena.get(v1[1]), arena.get(fout[1]));
    } else {
        res.input = std::move(c.rec.input);
        c.rec.input_lease.release();
    }
    return res;
}

ChainBackwardResult backward_baseline(const ChainModules& chain, Executor& exec,
                                      BackwardCommon c) {
    const int B = static_cast<int>(chain.fs.size());
    const Policy policy = c.rec.policy;
    if (static_cast<int>(c.rec.block_stats.size()) != B)
        throw std::invalid_argument("chain_backward: record does not match chain");
    if (policy == Policy::StoreAll && static_cast<int>(c.rec.block_ctx.size()) != B)
        throw std::invalid_argument("chain_backward: store-all record is missing contexts");

    TaskGraph g = build_backward_chain_graph(B, Flavor::Baseline, policy);
    SlotArena arena;
    const int sy2 = arena.add_external(&c.y.s2);
    const int sg1 = arena.add_external(&c.grad_y.s1);
    const int sg2 = arena.add_external(&c.grad_y.s2);

    std::vector<int> v1(B + 1, -1), x2s(B + 1, -1), fout(B + 1, -1), gout(B + 1, -1);
    std::vector<int> uval(B + 1, -1), wval(B + 1, -1), bF(B + 1, -1), bG(B + 1, -1);
    for (int k = 1; k <= B; ++k) {
        uval[k] = arena.add_owned();
        if (k < B) wval[k] = arena.add_owned();
        bF[k] = arena.add_owned();
        bG[k] = arena.add_owned();
        if (policy == Policy::Recompute) {
            fout[k] = arena.add_owned();
            gout[k] = arena.add_owned();
            x2s[k] = arena.add_owned();
            v1[k] = k == B ? arena.add_external(&c.y.s1)
                           : arena.add_owned();
        }
    }
    const int gx2 = arena.add_owned();

    std::vector<BlockCtx> inv_ctx;
    if (policy == Policy::Recompute) inv_ctx.resize(B);

    if (policy == Policy::Recompute) {
        for (int k = 1; k <= B; ++k) {
            const StreamFn* F = chain.fs[k - 1];
            const StreamFn* G = chain.gs[k - 1];
            // Inversion walks y1_k-1 = y1_k - fout_k and x2_k = y2_k - gout_k
            // strictly backwards; unlike the stream-swapped coupling there is
            // no cross-block slack to exploit.
            set_task(g, arena, tname(NodeKind::InvG, k),
                     k == B ? std::vector<int>{v1[B]} : std::vector<int>{v1[k + 1], fout[k + 1]},
                     [&params = c.params, &arena, &rec = c.rec, G, k, B,
                      vnext = k < B ? v1[k + 1] : v1[B], fnext = k < B ? fout[k + 1] : -1,
                      self = v1[k], out = gout[k], ctx = &inv_ctx[k - 1].g]() {
                         Tensor formed;
                         const Tensor* y1k = nullptr;
                         if (k == B) y1k = &arena.get(self);
                         else {
                             formed = sub(arena.get(vnext), arena.get(fnext));
                             y1k = &formed;
                         }
                         Tensor gv = G->forward(params, *y1k, EvalMode::Replay,
                                                &rec.block_stats[k - 1].g, ctx);
                         arena.publish(out, std::move(gv));
                         if (k < B) arena.publish(self, std::move(formed));
                     });
            set_task(g, arena, tname(NodeKind::InvF, k),
                     k == B ? std::vector<int>{sy2, gout[B]}
                            : std::vector<int>{x2s[k + 1], gout[k]},
                     [&params = c.params, &arena, &rec = c.rec, F, k, B, sy2,
                      xnext = k < B ? x2s[k + 1] : -1, gcur = gout[k], out = fout[k],
                      self = x2s[k], ctx = &inv_ctx[k - 1].f]() {
                         Tensor x2k = sub(k == B ? arena.get(sy2) : arena.get(xnext),
                                          arena.get(gcur));
                         Tensor fv = F->forward(params, x2k, EvalMode::Replay,
                                                &rec.block_stats[k - 1].f, ctx);
                         arena.publish(out, std::move(fv));
                         arena.publish(self, std::move(x2k));
                     });
        }
    }

    for (int k = 1; k <= B; ++k) {
        const StreamFn* F = chain.fs[k - 1];
        const StreamFn* G = chain.gs[k - 1];
        FnCtx* fctx = policy == Policy::StoreAll ? &c.rec.block_ctx[k - 1].f : &inv_ctx[k - 1].f;
        FnCtx* gctx = policy == Policy::StoreAll ? &c.rec.block_ctx[k - 1].g : &inv_ctx[k - 1].g;

        set_task(g, arena, tname(NodeKind::VjpG, k), {k == B ? sg2 : wval[k]},
                 [&params = c.params, &arena, &rec = c.rec, G, k, gctx,
                  seed = k == B ? sg2 : wval[k], out = bG[k]]() {
                     Tensor gi = G->backward(params, *gctx, rec.block_stats[k - 1].g,
                                             arena.get(seed));
                     *gctx = FnCtx{};
                     arena.publish(out, std::move(gi));
                 });

        // u_k = bG_k + u_k+1 with u_B seeded by the incoming y1 gradient.
        set_task(g, arena, "u" + std::to_string(k),
                 {bG[k], k < B ? uval[k + 1] : sg1},
                 [&arena, bgk = bG[k], next = k < B ? uval[k + 1] : sg1, out = uval[k]]() {
                     Tensor acc = arena.get(bgk);
                     add_into(acc, arena.get(next));
                     arena.publish(out, std::move(acc));
                 });

        set_task(g, arena, tname(NodeKind::VjpF, k), {uval[k]},
                 [&params = c.params, &arena, &rec = c.rec, F, k, fctx, seed = uval[k],
                  out = bF[k]]() {
                     Tensor fi = F->backward(params, *fctx, rec.block_stats[k - 1].f,
                                             arena.get(seed));
                     *fctx = FnCtx{};
                     arena.publish(out, std::move(fi));
                 });

        // w_k = bF_k+1 + w_k+1 with w_B standing for the incoming y2 gradient.
        if (k < B)
            set_task(g, arena, "w" + std::to_string(k),
                     {bF[k + 1], k + 1 < B ? wval[k + 1] : sg2},
                     [&arena, bfn = bF[k + 1], next = k + 1 < B ? wval[k + 1] : sg2,
                      out = wval[k]]() {
                         Tensor acc = arena.get(bfn);
                         add_into(acc, arena.get(next));
                         arena.publish(out, std::move(acc));
                     });
    }

    set_task(g, arena, "ax2", {bF[1], B >= 2 ? wval[1] : sg2},
             [&arena, bf1 = bF[1], w1 = B >= 2 ? wval[1] : sg2, out = gx2]() {
                 Tensor acc = arena.get(bf1);
                 add_into(acc, arena.get(w1));
                 arena.publish(out, std::move(acc));
             });

    arena.expect(uval[1], 1);
    arena.expect(gx2, 1);
    if (policy == Policy::Recompute) {
        arena.expect(v1[1], 1);
        arena.expect(fout[1], 1);
        arena.expect(x2s[1], 1);
    }

    exec.run(g);

    ChainBackwardResult res;
    res.grad_in.s1 = arena.take(uval[1]);
    res.grad_in.s2 = arena.take(gx2);
    if (policy == Policy::Recompute) {
        res.input.s1 = sub(arena.get(v1[1]), arena.get(fout[1]));
        res.input.s2 = arena.take(x2s[1]);
    } else {
        res.input = std::move(c.rec.input);
        c.rec.input_lease.release();
    }
    return res;
}

ChainBackwardResult backward_fused(const ChainModules& chain, Executor& exec, BackwardCommon c) {
    if (!chain.fused.f_first || !chain.fused.g_last)
        throw std::invalid_argument("chain_backward: fused chain endpoints missing");
    const int B = chain.fused.block_count();
    const int nm = B - 1;
    const Policy policy = c.rec.policy;
    if (static_cast<int>(c.rec.chain_stats.fused.size()) != nm)
        throw std::invalid_argument("chain_backward: record does not match chain");
    if (policy == Policy::StoreAll && static_cast<int>(c.rec.chain_ctx.fused.size()) != nm)
        throw std::invalid_argument("chain_backward: store-all record is missing contexts");

    TaskGraph g = build_backward_chain_graph(B, Flavor::ParaRevFused, policy);
    SlotArena arena;
    const int sg1 = arena.add_external(&c.grad_y.s1);
    const int sg2 = arena.add_external(&c.grad_y.s2);

    std::vector<int> us(B + 1, -1), aval(B + 1, -1), bM(B + 1, -1);
    if (policy == Policy::Recompute) {
        for (int k = 0; k < B; ++k) us[k] = arena.add_owned();
        us[B] = arena.add_external(&c.y.s1);
    }
    for (int k = 1; k <= B; ++k) aval[k] = arena.add_owned();
    for (int k = 1; k <= nm; ++k) bM[k] = arena.add_owned();
    const int bGs = arena.add_owned();
    const int bFs = arena.add_owned();
    const int gx1 = arena.add_owned();
    const int x2rec = policy == Policy::Recompute
                          ? arena.add_owned()
                          : -1;

    FnCtx inv_first, inv_last;
    std::vector<FnCtx> inv_mods(policy == Policy::Recompute ? nm : 0);
    FnCtx* fctx = policy == Policy::StoreAll ? &c.rec.chain_ctx.f_first : &inv_first;
    FnCtx* gctx = policy == Policy::StoreAll ? &c.rec.chain_ctx.g_last : &inv_last;

    if (policy == Policy::Recompute) {
        const int sy2 = arena.add_external(&c.y.s2);
        set_task(g, arena, tname(NodeKind::InvG, B), {us[B], sy2},
                 [&params = c.params, &arena, &rec = c.rec, &chain, sy2,
                  in = us[B], out = us[B - 1], gctx]() {
                     Tensor gv = chain.fused.g_last->forward(params, arena.get(in),
                                                             EvalMode::Replay,
                                                             &rec.chain_stats.g_last, gctx);
                     arena.publish(out, sub(arena.get(sy2), gv));
                 });
        for (int k = nm; k >= 1; --k) {
            set_task(g, arena, tname(NodeKind::InvM, k), {us[k], us[k + 1]},
                     [&params = c.params, &arena, &rec = c.rec, M = chain.fused.fused[k - 1],
                      k, in = us[k], next = us[k + 1], out = us[k - 1],
                      ctx = &inv_mods[k - 1]]() {
                         FusedFn::Out mo = M->forward(params, arena.get(in), EvalMode::Replay,
                                                      &rec.chain_stats.fused[k - 1], ctx);
                         Tensor y2k = sub(arena.get(next), mo.f_part);
                         arena.publish(out, sub(y2k, mo.g_part));
                     });
        }
        set_task(g, arena, tname(NodeKind::InvF, 1), {us[0], us[1]},
                 [&params = c.params, &arena, &rec = c.rec, &chain, in = us[0],
                  y1first = us[1], out = x2rec, fctx]() {
                     Tensor fv = chain.fused.f_first->forward(params, arena.get(in),
                                                              EvalMode::Replay,
                                                              &rec.chain_stats.f_first, fctx);
                     arena.publish(out, sub(arena.get(y1first), fv));
                 });
    }

    set_task(g, arena, tname(NodeKind::VjpG, B), {sg2},
             [&params = c.params, &arena, &rec = c.rec, &chain, sg2, gctx, out = bGs]() {
                 Tensor gi = chain.fused.g_last->backward(params, *gctx, rec.chain_stats.g_last,
                                                          arena.get(sg2));
                 *gctx = FnCtx{};
                 arena.publish(out, std::move(gi));
             });
    set_task(g, arena, "a" + std::to_string(B), {bGs, sg1},
             [&arena, bGs, sg1, out = aval[B]]() {
                 Tensor acc = arena.get(bGs);
                 add_into(acc, arena.get(sg1));
                 arena.publish(out, std::move(acc));
             });
    for (int k = nm; k >= 1; --k) {
        // bM_k seeds both module halves with a_k+1: the G half reaches u_k+1
        // through y2_k, the F half directly.
        set_task(g, arena, tname(NodeKind::VjpM, k), {aval[k + 1]},
                 [&params = c.params, &arena, &rec = c.rec, M = chain.fused.fused[k - 1], k,
                  seed = aval[k + 1], out = bM[k],
                  ctx = policy == Policy::StoreAll ? &c.rec.chain_ctx.fused[k - 1]
                                                   : &inv_mods[k - 1]]() {
                     const Tensor& s = arena.get(seed);
                     Tensor gi = M->backward(params, *ctx, rec.chain_stats.fused[k - 1], s, s);
                     *ctx = FnCtx{};
                     arena.publish(out, std::move(gi));
                 });
        std::vector<int> areads = {bM[k]};
        if (k + 2 <= B) areads.push_back(aval[k + 2]);
        else areads.push_back(sg2);  // a_B+1 is the incoming y2 gradient
        set_task(g, arena, "a" + std::to_string(k), std::move(areads),
                 [&arena, bmk = bM[k], next = k + 2 <= B ? aval[k + 2] : sg2, out = aval[k]]() {
                     Tensor acc = arena.get(bmk);
                     add_into(acc, arena.get(next));
                     arena.publish(out, std::move(acc));
                 });
    }
    set_task(g, arena, tname(NodeKind::VjpF, 1), {aval[1]},
             [&params = c.params, &arena, &rec = c.rec, &chain, fctx, seed = aval[1],
              out = bFs]() {
                 Tensor fi = chain.fused.f_first->backward(params, *fctx,
                                                           rec.chain_stats.f_first,
                                                           arena.get(seed));
                 *fctx = FnCtx{};
                 arena.publish(out, std::move(fi));
             });
    set_task(g, arena, "ax1", B >= 2 ? std::vector<int>{bFs, aval[2]}
                                     : std::vector<int>{bFs, sg2},
             [&arena, bFs, sg2, B, a2 = B >= 2 ? aval[2] : -1, out = gx1]() {
                 Tensor acc = arena.get(bFs);
                 add_into(acc, a2 >= 0 ? arena.get(a2) : arena.get(sg2));
                 arena.publish(out, std::move(acc));
             });

    arena.expect(aval[1], 1);
    arena.expect(gx1, 1);
    if (policy == Policy::Recompute) {
        arena.expect(us[0], 1);
        arena.expect(x2rec, 1);
    }

    exec.run(g);

    ChainBackwardResult res;
    res.grad_in.s1 = arena.take(gx1);
    res.grad_in.s2 = arena.take(aval[1]);
    if (policy == Policy::Recompute) {
        res.input.s1 = arena.take(us[0]);
        res.input.s2 = arena.take(x2rec);
    } else {
        res.input = std::move(c.rec.input);
        c.rec.input_lease.release();
    }
    return res;
}

}  // namespace

StreamPair chain_forward(const ParamStore& params, const ChainModules& chain, const StreamPair& x,
                         EvalMode mode, Policy policy, Executor& exec, ChainRecord* rec,
                         MemoryMeter* meter) {
    if (mode == EvalMode::Train && !rec)
        throw std::invalid_argument("chain_forward: Train mode needs a record");
    if (chain.flavor == Flavor::ParaRevFused)
        return forward_fused(params, chain, x, mode, policy, exec, rec, meter);
    return forward_unfused(params, chain, x, mode, policy, exec, rec, meter);
}

StreamPair chain_inverse(const ParamStore& params, const ChainModules& chain, const StreamPair& y,
                         ChainRecord& rec) {
    if (chain.flavor == Flavor::ParaRevFused)
        return fused_chain_inverse(params, chain.fused, y, &rec.chain_stats, nullptr);
    const int B = static_cast<int>(chain.fs.size());
    if (static_cast<int>(rec.block_stats.size()) != B)
        throw std::invalid_argument("chain_inverse: record does not match chain");
    StreamPair cur = y;
    for (int k = B; k >= 1; --k) {
        BlockStats* st = &rec.block_stats[k - 1];
        cur = chain.flavor == Flavor::Baseline
                  ? rev_inverse(params, *chain.fs[k - 1], *chain.gs[k - 1], cur, st, nullptr)
                  : pararev_inverse(params, *chain.fs[k - 1], *chain.gs[k - 1], cur, st, nullptr);
    }
    return cur;
}

ChainBackwardResult chain_backward(ParamStore& params, const ChainModules& chain,
                                   const StreamPair& y, const StreamPair& grad_y, Executor& exec,
                                   ChainRecord& rec) {
    BackwardCommon c{params, y, grad_y, rec};
    switch (chain.flavor) {
        case Flavor::Baseline: return backward_baseline(chain, exec, c);
        case Flavor::ParaRev: return backward_pararev(chain, exec, c);
        case Flavor::ParaRevFused: return backward_fused(chain, exec, c);
    }
    throw std::invalid_argument("chain_backward: unknown flavor");
}

}  // namespace revsnn
