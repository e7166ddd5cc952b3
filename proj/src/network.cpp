#include "revsnn/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace revsnn {

namespace {

constexpr float kNormEps = 1e-5f;

const char* neuron_kind_name(NeuronKind k) { return k == NeuronKind::IF ? "if" : "lif"; }

NeuronKind parse_neuron_kind(const std::string& s) {
    if (s == "if") return NeuronKind::IF;
    if (s == "lif") return NeuronKind::LIF;
    throw std::invalid_argument("unknown neuron kind: " + s);
}

const char* surrogate_name(SurrogateKind k) {
    return k == SurrogateKind::Triangular ? "triangular" : "arctan";
}

SurrogateKind parse_surrogate(const std::string& s) {
    if (s == "triangular") return SurrogateKind::Triangular;
    if (s == "arctan") return SurrogateKind::Arctan;
    throw std::invalid_argument("unknown surrogate: " + s);
}

NormStats running_to_stats(const Tensor& rmean, const Tensor& rvar) {
    NormStats st;
    const int c = rmean.shape.c;
    st.mean.resize(c);
    st.invstd.resize(c);
    for (int i = 0; i < c; ++i) {
        st.mean[i] = rmean.at(0, i, 0, 0);
        st.invstd[i] = 1.0 / std::sqrt(static_cast<double>(rvar.at(0, i, 0, 0)) + kNormEps);
    }
    return st;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string float_text(float v) {
    std::ostringstream os;
    os << std::setprecision(9) << v;
    return os.str();
}

}  // namespace

void ArchSpec::validate() const {
    if (stage_blocks.empty()) throw std::invalid_argument("ArchSpec: no stages");
    if (stage_widths.size() != stage_blocks.size())
        throw std::invalid_argument("ArchSpec: stage_widths must match stage_blocks");
    for (int n : stage_blocks)
        if (n < 1) throw std::invalid_argument("ArchSpec: every stage needs at least one block");
    for (int w : stage_widths)
        if (w < 1) throw std::invalid_argument("ArchSpec: stage widths must be positive");
    if (stem_width != 2 * stage_widths[0])
        throw std::invalid_argument("ArchSpec: stem_width must be twice the first stage width");
    if (timesteps < 1) throw std::invalid_argument("ArchSpec: timesteps must be positive");
    if (num_classes < 2) throw std::invalid_argument("ArchSpec: need at least two classes");
    if (in_channels < 1) throw std::invalid_argument("ArchSpec: in_channels must be positive");
    neuron.validate();
}

int count_layers(const ArchSpec& spec) {
    int blocks = 0;
    for (int n : spec.stage_blocks) blocks += n;
    return 2 + (spec.stages() - 1) + 4 * blocks;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::string cur;
    std::istringstream is(csv);
    while (std::getline(is, cur, ',')) {
        cur = trim(cur);
        if (cur.empty() || cur.find_first_not_of("0123456789") != std::string::npos)
            throw std::invalid_argument("bad integer list: " + csv);
        out.push_back(std::stoi(cur));
    }
    if (out.empty()) throw std::invalid_argument("bad integer list: " + csv);
    return out;
}

std::vector<int> default_stage_widths(int stages) {
    switch (stages) {
        case 1: return {16};
        case 2: return {16, 32};
        case 3: return {16, 32, 64};
        case 4: return {64, 128, 256, 448};
        default:
            throw std::invalid_argument("no default widths for " + std::to_string(stages) +
                                        " stages; set stage_widths explicitly");
    }
}

ArchSpec make_arch(const std::string& blocks_csv, Flavor flavor, int timesteps, int num_classes,
                   int in_channels) {
    ArchSpec spec;
    spec.stage_blocks = parse_int_list(blocks_csv);
    spec.stage_widths = default_stage_widths(spec.stages());
    spec.stem_width = 2 * spec.stage_widths[0];
    spec.flavor = flavor;
    spec.timesteps = timesteps;
    spec.num_classes = num_classes;
    spec.in_channels = in_channels;
    spec.validate();
    return spec;
}

std::string arch_to_text(const ArchSpec& spec) {
    std::ostringstream os;
    os << "stage_blocks=" << join_ints(spec.stage_blocks) << "\n";
    os << "stage_widths=" << join_ints(spec.stage_widths) << "\n";
    os << "stem_width=" << spec.stem_width << "\n";
    os << "flavor=" << flavor_name(spec.flavor) << "\n";
    os << "neuron=" << neuron_kind_name(spec.neuron.kind) << "\n";
    os << "threshold=" << float_text(spec.neuron.threshold) << "\n";
    os << "decay=" << float_text(spec.neuron.decay) << "\n";
    os << "surrogate=" << surrogate_name(spec.neuron.surrogate) << "\n";
    os << "surrogate_width=" << float_text(spec.neuron.surrogate_width) << "\n";
    os << "timesteps=" << spec.timesteps << "\n";
    os << "num_classes=" << spec.num_classes << "\n";
    os << "in_channels=" << spec.in_channels << "\n";
    return os.str();
}

ArchSpec arch_from_text(const std::string& text) {
    ArchSpec spec;
    bool widths_set = false, stem_set = false;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("bad arch line: " + line);
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "stage_blocks") spec.stage_blocks = parse_int_list(val);
        else if (key == "stage_widths") { spec.stage_widths = parse_int_list(val); widths_set = true; }
        else if (key == "stem_width") { spec.stem_width = std::stoi(val); stem_set = true; }
        else if (key == "flavor") spec.flavor = flavor_from_string(val);
        else if (key == "neuron") spec.neuron.kind = parse_neuron_kind(val);
        else if (key == "threshold") spec.neuron.threshold = std::stof(val);
        else if (key == "decay") spec.neuron.decay = std::stof(val);
        else if (key == "surrogate") spec.neuron.surrogate = parse_surrogate(val);
        else if (key == "surrogate_width") spec.neuron.surrogate_width = std::stof(val);
        else if (key == "timesteps") spec.timesteps = std::stoi(val);
        else if (key == "num_classes") spec.num_classes = std::stoi(val);
        else if (key == "in_channels") spec.in_channels = std::stoi(val);
        else throw std::invalid_argument("unknown arch key: " + key);
    }
    if (!widths_set) spec.stage_widths = default_stage_widths(spec.stages());
    if (!stem_set) spec.stem_width = 2 * spec.stage_widths[0];
    spec.validate();
    return spec;
}

void ConvBnSpike::build(ParamStore& store, const std::string& prefix, int in_c, int out_c,
                        const NeuronConfig& cfg, Rng& rng) {
    ncfg = cfg;
    Tensor w(out_c, in_c, 3, 3);
    he_init_conv(rng, w);
    Tensor ones(1, out_c, 1, 1);
    std::fill(ones.data.begin(), ones.data.end(), 1.0f);
    conv = store.add(prefix + ".conv", std::move(w));
    gain = store.add(prefix + ".bn_gain", ones);
    bias = store.add(prefix + ".bn_bias", Tensor(1, out_c, 1, 1));
    rmean = store.add(prefix + ".bn_rmean", Tensor(1, out_c, 1, 1), false);
    rvar = store.add(prefix + ".bn_rvar", ones, false);
}

Tensor ConvBnSpike::forward(const ParamStore& params, const Tensor& x, EvalMode mode,
                            NormStats* stats, FnCtx* ctx) const {
    Tensor h = conv2d(x, params.value(conv), 2);
    Tensor n;
    if (mode == EvalMode::Train) {
        if (!stats) throw std::invalid_argument("ConvBnSpike: Train mode requires stats");
        n = batch_norm_forward(h, params.value(gain), params.value(bias), kNormEps, *stats);
    } else if (mode == EvalMode::Replay) {
        if (!stats || stats->mean.empty())
            throw std::invalid_argument("ConvBnSpike: Replay mode requires recorded stats");
        n = batch_norm_apply(h, params.value(gain), params.value(bias), *stats);
    } else {
        n = batch_norm_apply(h, params.value(gain), params.value(bias),
                             running_to_stats(params.value(rmean), params.value(rvar)));
    }
    Tensor out = spike_activation(n, ncfg);
    if (ctx) ctx->saved = {x, std::move(h), std::move(n)};
    return out;
}

Tensor ConvBnSpike::backward(ParamStore& params, const FnCtx& ctx, const NormStats& stats,
                             const Tensor& grad_out) const {
    if (ctx.saved.size() != 3)
        throw std::invalid_argument("ConvBnSpike: ctx does not hold the 3 saved activations");
    const Tensor& x = ctx.saved[0];
    const Tensor& h = ctx.saved[1];
    const Tensor& n = ctx.saved[2];
    Tensor gn = spike_activation_backward(grad_out, n, ncfg);
    Tensor gh;
    batch_norm_backward(h, params.value(gain), stats, gn, gh, params.grad(gain),
                        params.grad(bias));
    add_into(params.grad(conv), conv2d_backward_weights(gh, x, params.value(conv).shape, 2));
    return conv2d_backward_input(gh, params.value(conv), x.shape, 2);
}

void ConvBnSpike::fold_running_stats(ParamStore& params, const NormStats& stats,
                                     float momentum) const {
    if (stats.mean.empty()) return;
    Tensor& rm = params.value(rmean);
    Tensor& rv = params.value(rvar);
    for (int c = 0; c < rm.shape.c; ++c) {
        const double var = 1.0 / (stats.invstd[c] * stats.invstd[c]) - kNormEps;
        rm.at(0, c, 0, 0) = static_cast<float>((1.0 - momentum) * rm.at(0, c, 0, 0) +
                                               momentum * stats.mean[c]);
        rv.at(0, c, 0, 0) =
            static_cast<float>((1.0 - momentum) * rv.at(0, c, 0, 0) + momentum * var);
    }
}

Network::Network(const ArchSpec& spec, std::uint64_t init_seed) : spec_(spec) {
    spec_.validate();
    Rng rng(init_seed);
    const int S = spec_.stages();
    stem_.build(params_, "stem", spec_.in_channels, spec_.stem_width, spec_.neuron, rng);
    down_.resize(S - 1);
    fs_.resize(S);
    gs_.resize(S);
    ffirst_.resize(S);
    glast_.resize(S);
    mods_.resize(S);
    chains_.resize(S);
    for (int s = 1; s <= S; ++s) {
        const int w = spec_.stage_widths[s - 1];
        const std::string sp = "s" + std::to_string(s);
        if (s >= 2) {
            const std::string dp = "down" + std::to_string(s);
            down_[s - 2][0].build(params_, dp + ".s1", spec_.stage_widths[s - 2], w, spec_.neuron,
                                  rng);
            down_[s - 2][1].build(params_, dp + ".s2", spec_.stage_widths[s - 2], w, spec_.neuron,
                                  rng);
        }
        const int B = spec_.stage_blocks[s - 1];
        ChainModules& cm = chains_[s - 1];
        cm.flavor = spec_.flavor;
        if (spec_.flavor == Flavor::ParaRevFused) {
            ffirst_[s - 1] = std::make_unique<ResidualFn>(params_, sp + ".ffirst", w,
                                                          spec_.neuron, ActKind::Spike, &rng);
            for (int k = 1; k < B; ++k)
                mods_[s - 1].push_back(std::make_unique<FusedFn>(
                    params_, sp + ".m" + std::to_string(k), w, spec_.neuron, ActKind::Spike,
                    &rng));
            glast_[s - 1] = std::make_unique<ResidualFn>(params_, sp + ".glast", w, spec_.neuron,
                                                         ActKind::Spike, &rng);
            cm.fused.f_first = ffirst_[s - 1].get();
            for (auto& m : mods_[s - 1]) cm.fused.fused.push_back(m.get());
            cm.fused.g_last = glast_[s - 1].get();
        } else {
            for (int b = 1; b <= B; ++b) {
                const std::string bp = sp + ".b" + std::to_string(b);
                fs_[s - 1].push_back(std::make_unique<ResidualFn>(params_, bp + ".f", w,
                                                                  spec_.neuron, ActKind::Spike,
                                                                  &rng));
                gs_[s - 1].push_back(std::make_unique<ResidualFn>(params_, bp + ".g", w,
                                                                  spec_.neuron, ActKind::Spike,
                                                                  &rng));
            }
            for (auto& f : fs_[s - 1]) cm.fs.push_back(f.get());
            for (auto& g : gs_[s - 1]) cm.gs.push_back(g.get());
        }
    }
    const int head_in = 2 * spec_.stage_widths[S - 1];
    Tensor w(spec_.num_classes, head_in, 1, 1);
    rng.fill_normal(w, 0.0f, std::sqrt(1.0f / static_cast<float>(head_in)));
    fcw_ = params_.add("head.fc.w", std::move(w));
    fcb_ = params_.add("head.fc.b", Tensor(1, spec_.num_classes, 1, 1));
}

const Tensor& Network::step_input(const std::vector<Tensor>& steps, int t) const {
    return steps.size() == 1 ? steps[0] : steps[t];
}

StreamPair Network::downsample_forward(int stage, const StreamPair& x, EvalMode mode,
                                       std::array<NormStats, 2>* stats,
                                       std::array<FnCtx, 2>* ctx) const {
    const std::array<ConvBnSpike, 2>& d = down_[stage - 2];
    StreamPair out;
    out.s1 = d[0].forward(params_, x.s1, mode, stats ? &(*stats)[0] : nullptr,
                          ctx ? &(*ctx)[0] : nullptr);
    out.s2 = d[1].forward(params_, x.s2, mode, stats ? &(*stats)[1] : nullptr,
                          ctx ? &(*ctx)[1] : nullptr);
    return out;
}

Tensor Network::forward(const std::vector<Tensor>& steps, EvalMode mode, Policy policy,
                        Executor& exec, NetRecord* rec, MemoryMeter* meter) const {
    const int T = spec_.timesteps;
    const int S = spec_.stages();
    if (steps.size() != 1 && static_cast<int>(steps.size()) != T)
        throw std::invalid_argument("Network::forward: needs 1 or timesteps input tensors");
    if (mode == EvalMode::Train && !rec)
        throw std::invalid_argument("Network::forward: Train mode needs a record");
    if (mode == EvalMode::Replay)
        throw std::invalid_argument("Network::forward: Replay is a function-level mode");
    if (rec) {
        rec->policy = policy;
        rec->steps.clear();
        rec->steps.resize(T);
    }
    const bool scaffold_ctx = rec && mode == EvalMode::Train && policy == Policy::StoreAll;

    Tensor logits_sum;
    for (int t = 0; t < T; ++t) {
        const Tensor& x = step_input(steps, t);
        StepRecord* sr = rec ? &rec->steps[t] : nullptr;
        if (sr) {
            sr->down_stats.resize(S - 1);
            sr->stage_recs.resize(S);
            sr->pairs.resize(S + 1);
            if (scaffold_ctx) sr->down_ctx.resize(S - 1);
            if (meter) sr->retain_lease = MeterLease(meter, MemCategory::Boundary, 0);
        }
        NormStats* sst = sr && mode == EvalMode::Train ? &sr->stem_stats : nullptr;
        FnCtx* scx = scaffold_ctx ? &sr->stem_ctx : nullptr;
        Tensor stem_out = stem_.forward(params_, x, mode, sst, scx);
        if (scx && meter) scx->attach_lease(meter, MemCategory::Boundary);

        auto [x1, x2] = split_channels(stem_out, spec_.stage_widths[0]);
        StreamPair cur{std::move(x1), std::move(x2)};
        if (sr) {
            sr->pairs[0] = cur;
            sr->retain_lease.grow(cur.s1.bytes() + cur.s2.bytes());
        }
        for (int s = 1; s <= S; ++s) {
            if (s >= 2) {
                std::array<NormStats, 2>* dst =
                    sr && mode == EvalMode::Train ? &sr->down_stats[s - 2] : nullptr;
                std::array<FnCtx, 2>* dcx = scaffold_ctx ? &sr->down_ctx[s - 2] : nullptr;
                cur = downsample_forward(s, cur, mode, dst, dcx);
                if (dcx && meter) {
                    (*dcx)[0].attach_lease(meter, MemCategory::Boundary);
                    (*dcx)[1].attach_lease(meter, MemCategory::Boundary);
                }
            }
            ChainRecord* cr = sr ? &sr->stage_recs[s - 1] : nullptr;
            cur = chain_forward(params_, chains_[s - 1], cur, mode, policy, exec, cr, meter);
            if (sr) {
                sr->pairs[s] = cur;
                sr->retain_lease.grow(cur.s1.bytes() + cur.s2.bytes());
            }
        }
        Tensor pooled = avg_pool_global(concat_channels(cur.s1, cur.s2));
        Tensor logits_t = linear_forward(pooled, params_.value(fcw_), params_.value(fcb_));
        if (sr) {
            sr->retain_lease.grow(pooled.bytes());
            sr->pooled = std::move(pooled);
        }
        if (t == 0) logits_sum = std::move(logits_t);
        else add_into(logits_sum, logits_t);
    }
    return scale(logits_sum, 1.0f / static_cast<float>(T));
}

void Network::backward(const Tensor& grad_logits, const std::vector<Tensor>& steps,
                       Executor& exec, NetRecord& rec) {
    const int T = spec_.timesteps;
    const int S = spec_.stages();
    if (static_cast<int>(rec.steps.size()) != T)
        throw std::invalid_argument("Network::backward: record does not match timesteps");
    const bool stored = rec.policy == Policy::StoreAll;
    Tensor glt = scale(grad_logits, 1.0f / static_cast<float>(T));

    for (int t = T - 1; t >= 0; --t) {
        StepRecord& sr = rec.steps[t];
        Tensor gpool;
        linear_backward(glt, sr.pooled, params_.value(fcw_), gpool, params_.grad(fcw_),
                        params_.grad(fcb_));
        const Shape ps = sr.pairs[S].s1.shape;
        Tensor gcat = avg_pool_global_backward(gpool, Shape{ps.n, 2 * ps.c, ps.h, ps.w});
        auto [g1, g2] = split_channels(gcat, ps.c);
        StreamPair gy{std::move(g1), std::move(g2)};

        for (int s = S; s >= 1; --s) {
            ChainBackwardResult r = chain_backward(params_, chains_[s - 1], sr.pairs[s], gy,
                                                   exec, sr.stage_recs[s - 1]);
            gy = std::move(r.grad_in);
            if (s >= 2) {
                std::array<FnCtx, 2> local;
                std::array<FnCtx, 2>* ctx = stored ? &sr.down_ctx[s - 2] : &local;
                if (!stored)
                    downsample_forward(s, sr.pairs[s - 1], EvalMode::Replay,
                                       &sr.down_stats[s - 2], &local);
                gy.s1 = down_[s - 2][0].backward(params_, (*ctx)[0], sr.down_stats[s - 2][0],
                                                 gy.s1);
                gy.s2 = down_[s - 2][1].backward(params_, (*ctx)[1], sr.down_stats[s - 2][1],
                                                 gy.s2);
                if (stored) *ctx = {};
            }
        }
        Tensor gstem = concat_channels(gy.s1, gy.s2);
        FnCtx local;
        FnCtx* sctx = stored ? &sr.stem_ctx : &local;
        if (!stored)
            stem_.forward(params_, step_input(steps, t), EvalMode::Replay, &sr.stem_stats,
                          &local);
        stem_.backward(params_, *sctx, sr.stem_stats, gstem);
        if (stored) sr.stem_ctx = FnCtx{};

        sr.pairs.clear();
        sr.pooled = Tensor{};
        sr.retain_lease.release();
    }
}

void Network::fold_running_stats(const NetRecord& rec, float momentum) {
    const int S = spec_.stages();
    for (const StepRecord& sr : rec.steps) {
        stem_.fold_running_stats(params_, sr.stem_stats, momentum);
        for (int s = 2; s <= S; ++s) {
            down_[s - 2][0].fold_running_stats(params_, sr.down_stats[s - 2][0], momentum);
            down_[s - 2][1].fold_running_stats(params_, sr.down_stats[s - 2][1], momentum);
        }
        for (int s = 1; s <= S; ++s) {
            const ChainRecord& cr = sr.stage_recs[s - 1];
            if (spec_.flavor == Flavor::ParaRevFused) {
                ffirst_[s - 1]->fold_running_stats(params_, cr.chain_stats.f_first, momentum);
                for (std::size_t k = 0; k < mods_[s - 1].size(); ++k)
                    mods_[s - 1][k]->fold_running_stats(params_, cr.chain_stats.fused[k],
                                                        momentum);
                glast_[s - 1]->fold_running_stats(params_, cr.chain_stats.g_last, momentum);
            } else {
                for (std::size_t b = 0; b < fs_[s - 1].size(); ++b) {
                    fs_[s - 1][b]->fold_running_stats(params_, cr.block_stats[b].f, momentum);
                    gs_[s - 1][b]->fold_running_stats(params_, cr.block_stats[b].g, momentum);
                }
            }
        }
    }
}

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'E', 'V', 'S', 'N', 'N', '1', '\n'};

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw std::runtime_error("truncated checkpoint: " + path);
    return v;
}

std::string read_blob(std::istream& is, std::size_t len, const std::string& path) {
    std::string s(len, '\0');
    if (!is.read(s.data(), static_cast<std::streamsize>(len)))
        throw std::runtime_error("truncated checkpoint: " + path);
    return s;
}

void read_header(std::istream& is, const std::string& path, std::string& arch_text) {
    std::string magic = read_blob(is, sizeof(kCheckpointMagic), path);
    if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    arch_text = read_blob(is, read_u32(is, path), path);
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::string arch = arch_to_text(net.spec());
    write_u32(os, static_cast<std::uint32_t>(arch.size()));
    os.write(arch.data(), static_cast<std::streamsize>(arch.size()));
    const ParamStore& p = net.params();
    write_u32(os, static_cast<std::uint32_t>(p.count()));
    for (int i = 0; i < p.count(); ++i) {
        const std::string& name = p.name(i);
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(p.trainable(i) ? 1 : 0);
        const Tensor& v = p.value(i);
        write_u32(os, static_cast<std::uint32_t>(v.shape.n));
        write_u32(os, static_cast<std::uint32_t>(v.shape.c));
        write_u32(os, static_cast<std::uint32_t>(v.shape.h));
        write_u32(os, static_cast<std::uint32_t>(v.shape.w));
        os.write(reinterpret_cast<const char*>(v.data.data()),
                 static_cast<std::streamsize>(v.bytes()));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

ArchSpec load_checkpoint_arch(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string arch_text;
    read_header(is, path, arch_text);
    return arch_from_text(arch_text);
}

void load_checkpoint(Network& net, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string arch_text;
    read_header(is, path, arch_text);
    if (arch_text != arch_to_text(net.spec()))
        throw std::runtime_error("checkpoint architecture does not match the network: " + path);
    ParamStore& p = net.params();
    const std::uint32_t count = read_u32(is, path);
    if (count != static_cast<std::uint32_t>(p.count()))
        throw std::runtime_error("checkpoint parameter count mismatch: " + path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_blob(is, read_u32(is, path), path);
        const int slot = p.find(name);
        if (slot < 0) throw std::runtime_error("checkpoint names unknown parameter " + name);
        char trainable = 0;
        if (!is.get(trainable)) throw std::runtime_error("truncated checkpoint: " + path);
        if ((trainable != 0) != p.trainable(slot))
            throw std::runtime_error("checkpoint trainability mismatch for " + name);
        Shape sh{static_cast<int>(read_u32(is, path)), static_cast<int>(read_u32(is, path)),
                 static_cast<int>(read_u32(is, path)), static_cast<int>(read_u32(is, path))};
        Tensor& v = p.value(slot);
        if (!(sh == v.shape))
            throw std::runtime_error("checkpoint shape mismatch for " + name + ": file " +
                                     sh.str() + " vs network " + v.shape.str());
        if (!is.read(reinterpret_cast<char*>(v.data.data()),
                     static_cast<std::streamsize>(v.bytes())))
            throw std::runtime_error("truncated checkpoint: " + path);
    }
}

}  // namespace revsnn
