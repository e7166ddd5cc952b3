#include "revsnn/graph.hpp"

#include <algorithm>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace revsnn {

const char* flavor_name(Flavor f) {
    switch (f) {
        case Flavor::Baseline: return "baseline";
        case Flavor::ParaRev: return "pararev";
        case Flavor::ParaRevFused: return "pararev-fused";
    }
    return "unknown";
}

Flavor flavor_from_string(const std::string& s) {
    if (s == "baseline") return Flavor::Baseline;
    if (s == "pararev") return Flavor::ParaRev;
    if (s == "pararev-fused") return Flavor::ParaRevFused;
    throw std::invalid_argument("unknown flavor: " + s);
}

const char* policy_name(Policy p) {
    return p == Policy::StoreAll ? "store-all" : "recompute";
}

Policy policy_from_string(const std::string& s) {
    if (s == "store-all") return Policy::StoreAll;
    if (s == "recompute") return Policy::Recompute;
    throw std::invalid_argument("unknown policy: " + s);
}

const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::F: return "F";
        case NodeKind::G: return "G";
        case NodeKind::M: return "M";
        case NodeKind::InvF: return "iF";
        case NodeKind::InvG: return "iG";
        case NodeKind::InvM: return "iM";
        case NodeKind::VjpF: return "bF";
        case NodeKind::VjpG: return "bG";
        case NodeKind::VjpM: return "bM";
        case NodeKind::Add: return "add";
    }
    return "?";
}

namespace {

NodeKind node_kind_from_name(const std::string& s) {
    for (NodeKind k : {NodeKind::F, NodeKind::G, NodeKind::M, NodeKind::InvF, NodeKind::InvG,
                       NodeKind::InvM, NodeKind::VjpF, NodeKind::VjpG, NodeKind::VjpM,
                       NodeKind::Add})
        if (s == node_kind_name(k)) return k;
    throw std::invalid_argument("unknown node kind: " + s);
}

}  // namespace

int TaskGraph::add_node(std::string name, NodeKind kind, int index, double cost) {
    if (find(name) >= 0) throw std::invalid_argument("TaskGraph: duplicate node " + name);
    TaskNode n;
    n.name = std::move(name);
    n.kind = kind;
    n.index = index;
    n.cost = cost;
    nodes_.push_back(std::move(n));
    preds_.emplace_back();
    succs_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

void TaskGraph::add_edge(int from, int to) {
    if (from < 0 || to < 0 || from >= size() || to >= size() || from == to)
        throw std::invalid_argument("TaskGraph: bad edge");
    for (int p : preds_[to])
        if (p == from) return;  // edges are a set
    preds_[to].push_back(from);
    succs_[from].push_back(to);
}

void TaskGraph::set_work(const std::string& name, std::function<void()> fn) {
    const int i = find(name);
    if (i < 0) throw std::invalid_argument("TaskGraph: no node named " + name);
    nodes_[i].work = std::move(fn);
}

int TaskGraph::find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (nodes_[i].name == name) return i;
    return -1;
}

std::vector<int> TaskGraph::topo_order() const {
    std::vector<int> indeg(size());
    for (int i = 0; i < size(); ++i) indeg[i] = static_cast<int>(preds_[i].size());
    std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
    for (int i = 0; i < size(); ++i)
        if (indeg[i] == 0) ready.push(i);
    std::vector<int> order;
    order.reserve(size());
    while (!ready.empty()) {
        const int u = ready.top();
        ready.pop();
        order.push_back(u);
        for (int v : succs_[u])
            if (--indeg[v] == 0) ready.push(v);
    }
    if (static_cast<int>(order.size()) != size())
        throw std::runtime_error("TaskGraph: cycle detected");
    return order;
}

int TaskGraph::critical_path_length() const {
    std::vector<int> depth(size(), 1);
    int best = 0;
    for (int u : topo_order()) {
        for (int p : preds_[u]) depth[u] = std::max(depth[u], depth[p] + 1);
        best = std::max(best, depth[u]);
    }
    return best;
}

double TaskGraph::critical_path_cost() const {
    std::vector<double> depth(size(), 0.0);
    double best = 0.0;
    for (int u : topo_order()) {
        double in = 0.0;
        for (int p : preds_[u]) in = std::max(in, depth[p]);
        depth[u] = in + nodes_[u].cost;
        best = std::max(best, depth[u]);
    }
    return best;
}

namespace {

std::string nn(NodeKind k, int i) { return std::string(node_kind_name(k)) + std::to_string(i); }

}  // namespace

TaskGraph build_forward_chain_graph(int blocks, Flavor flavor) {
    if (blocks < 1) throw std::invalid_argument("build_forward_chain_graph: blocks must be >= 1");
    TaskGraph g;
    if (flavor == Flavor::ParaRevFused) {
        // F1 -> M1 -> ... -> M(B-1) -> G(B), one module per level.
        int prev = g.add_node(nn(NodeKind::F, 1), NodeKind::F, 1);
        for (int k = 1; k < blocks; ++k) {
            int m = g.add_node(nn(NodeKind::M, k), NodeKind::M, k);
            g.add_edge(prev, m);
            prev = m;
        }
        int last = g.add_node(nn(NodeKind::G, blocks), NodeKind::G, blocks);
        g.add_edge(prev, last);
        return g;
    }
    std::vector<int> fid(blocks + 1), gid(blocks + 1);
    for (int k = 1; k <= blocks; ++k) {
        fid[k] = g.add_node(nn(NodeKind::F, k), NodeKind::F, k);
        gid[k] = g.add_node(nn(NodeKind::G, k), NodeKind::G, k);
    }
    for (int k = 1; k <= blocks; ++k) {
        g.add_edge(fid[k], gid[k]);
        if (flavor == Flavor::Baseline) {
            if (k >= 2) {
                g.add_edge(gid[k - 1], fid[k]);  // F_k reads y2 published by G_k-1
                g.add_edge(gid[k - 1], gid[k]);
            }
        } else {
            if (k >= 2) {
                g.add_edge(fid[k - 1], fid[k]);  // F_k reads the previous F output
                g.add_edge(gid[k - 1], gid[k]);
            }
            if (k >= 3) g.add_edge(gid[k - 2], fid[k]);  // y2 published two levels back
        }
    }
    return g;
}

namespace {

// Reconstructed y1_j is formed from alternating published pieces
// gout_j+1, fout_j+2, gout_j+3, ... back to the stored chain outputs.
std::vector<std::string> pararev_y1_piece_names(int j, int blocks) {
    std::vector<std::string> out;
    int idx = j + 1;
    bool g_piece = true;
    while (idx <= blocks) {
        out.push_back(nn(g_piece ? NodeKind::InvG : NodeKind::InvF, idx));
        ++idx;
        g_piece = !g_piece;
    }
    return out;
}

void build_backward_pararev(TaskGraph& g, int B, Policy policy) {
    // Node ids descend with k so the single-worker min-id schedule consumes
    // each reconstruction context right after it is produced; live interiors
    // then stay bounded regardless of chain depth.
    for (int k = B; k >= 1; --k) {
        if (policy == Policy::Recompute) {
            g.add_node(nn(NodeKind::InvG, k), NodeKind::InvG, k);
            g.add_node(nn(NodeKind::InvF, k), NodeKind::InvF, k);
        }
        g.add_node(nn(NodeKind::VjpG, k), NodeKind::VjpG, k);
        g.add_node("a" + std::to_string(k), NodeKind::Add, k, 0.05);
        g.add_node(nn(NodeKind::VjpF, k), NodeKind::VjpF, k);
    }
    g.add_node("ax1", NodeKind::Add, 0, 0.05);
    auto edge = [&](const std::string& from, const std::string& to) {
        g.add_edge(g.find(from), g.find(to));
    };
    if (policy == Policy::Recompute) {
        for (int k = 1; k <= B; ++k) {
            for (const std::string& p : pararev_y1_piece_names(k, B))
                edge(p, nn(NodeKind::InvG, k));
            for (const std::string& p : pararev_y1_piece_names(k - 1, B))
                edge(p, nn(NodeKind::InvF, k));
            edge(nn(NodeKind::InvG, k), nn(NodeKind::VjpG, k));
            edge(nn(NodeKind::InvF, k), nn(NodeKind::VjpF, k));
        }
    }
    // a_k = bG_k + bF_k+1 + a_k+2, a_B seeded with the incoming y1 gradient,
    // a_B+1 is the incoming y2 gradient (a constant, no node).
    for (int k = 1; k <= B; ++k) {
        if (k < B) edge("a" + std::to_string(k + 1), nn(NodeKind::VjpG, k));
        edge("a" + std::to_string(k), nn(NodeKind::VjpF, k));
        edge(nn(NodeKind::VjpG, k), "a" + std::to_string(k));
        if (k + 1 <= B) edge(nn(NodeKind::VjpF, k + 1), "a" + std::to_string(k));
    }
    edge(nn(NodeKind::VjpF, 1), "ax1");
    if (B >= 2) edge("a2", "ax1");
}

void build_backward_baseline(TaskGraph& g, int B, Policy policy) {
    for (int k = B; k >= 1; --k) {
        if (policy == Policy::Recompute) {
            g.add_node(nn(NodeKind::InvG, k), NodeKind::InvG, k);
            g.add_node(nn(NodeKind::InvF, k), NodeKind::InvF, k);
        }
        if (k < B) g.add_node("w" + std::to_string(k), NodeKind::Add, k, 0.05);
        g.add_node(nn(NodeKind::VjpG, k), NodeKind::VjpG, k);
        g.add_node("u" + std::to_string(k), NodeKind::Add, k, 0.05);
        g.add_node(nn(NodeKind::VjpF, k), NodeKind::VjpF, k);
    }
    g.add_node("ax2", NodeKind::Add, 0, 0.05);
    auto edge = [&](const std::string& from, const std::string& to) {
        g.add_edge(g.find(from), g.find(to));
    };
    if (policy == Policy::Recompute) {
        // x2_k needs gout_k and y2_k; y2_k is rebuilt from gout_k+1..gout_B.
        // y1_k is rebuilt from fout_k+1..fout_B.
        for (int k = 1; k <= B; ++k) {
            for (int j = k + 1; j <= B; ++j) edge(nn(NodeKind::InvF, j), nn(NodeKind::InvG, k));
            for (int j = k; j <= B; ++j) edge(nn(NodeKind::InvG, j), nn(NodeKind::InvF, k));
            edge(nn(NodeKind::InvG, k), nn(NodeKind::VjpG, k));
            edge(nn(NodeKind::InvF, k), nn(NodeKind::VjpF, k));
        }
    }
    // u_k = bG_k + u_k+1, w_k = bF_k+1 + w_k+1, w_B is the incoming y2 grad.
    for (int k = 1; k <= B; ++k) {
        if (k < B) edge("w" + std::to_string(k), nn(NodeKind::VjpG, k));
        edge("u" + std::to_string(k), nn(NodeKind::VjpF, k));
        edge(nn(NodeKind::VjpG, k), "u" + std::to_string(k));
        if (k + 1 <= B) edge("u" + std::to_string(k + 1), "u" + std::to_string(k));
        if (k < B) {
            edge(nn(NodeKind::VjpF, k + 1), "w" + std::to_string(k));
            if (k + 1 < B) edge("w" + std::to_string(k + 1), "w" + std::to_string(k));
        }
    }
    edge(nn(NodeKind::VjpF, 1), "ax2");
    if (B >= 2) edge("w1", "ax2");
}

void build_backward_fused(TaskGraph& g, int B, Policy policy) {
    if (policy == Policy::Recompute) g.add_node(nn(NodeKind::InvG, B), NodeKind::InvG, B);
    g.add_node(nn(NodeKind::VjpG, B), NodeKind::VjpG, B);
    g.add_node("a" + std::to_string(B), NodeKind::Add, B, 0.05);
    for (int k = B - 1; k >= 1; --k) {
        if (policy == Policy::Recompute) g.add_node(nn(NodeKind::InvM, k), NodeKind::InvM, k);
        g.add_node(nn(NodeKind::VjpM, k), NodeKind::VjpM, k);
        g.add_node("a" + std::to_string(k), NodeKind::Add, k, 0.05);
    }
    if (policy == Policy::Recompute) g.add_node(nn(NodeKind::InvF, 1), NodeKind::InvF, 1);
    g.add_node(nn(NodeKind::VjpF, 1), NodeKind::VjpF, 1);
    g.add_node("ax1", NodeKind::Add, 0, 0.05);
    auto edge = [&](const std::string& from, const std::string& to) {
        g.add_edge(g.find(from), g.find(to));
    };
    if (policy == Policy::Recompute) {
        std::string prev = nn(NodeKind::InvG, B);
        for (int k = B - 1; k >= 1; --k) {
            edge(prev, nn(NodeKind::InvM, k));
            prev = nn(NodeKind::InvM, k);
        }
        edge(prev, nn(NodeKind::InvF, 1));
        edge(nn(NodeKind::InvG, B), nn(NodeKind::VjpG, B));
        for (int k = 1; k < B; ++k) edge(nn(NodeKind::InvM, k), nn(NodeKind::VjpM, k));
        edge(nn(NodeKind::InvF, 1), nn(NodeKind::VjpF, 1));
    }
    // a_k = bM_k + a_k+2 where bM_k consumes a_k+1 through both halves.
    edge(nn(NodeKind::VjpG, B), "a" + std::to_string(B));
    for (int k = 1; k < B; ++k) {
        edge("a" + std::to_string(k + 1), nn(NodeKind::VjpM, k));
        edge(nn(NodeKind::VjpM, k), "a" + std::to_string(k));
        if (k + 2 <= B) edge("a" + std::to_string(k + 2), "a" + std::to_string(k));
    }
    edge("a1", nn(NodeKind::VjpF, 1));
    edge(nn(NodeKind::VjpF, 1), "ax1");
    if (B >= 2) edge("a2", "ax1");
}

}  // namespace

TaskGraph build_backward_chain_graph(int blocks, Flavor flavor, Policy policy) {
    if (blocks < 1) throw std::invalid_argument("build_backward_chain_graph: blocks must be >= 1");
    TaskGraph g;
    switch (flavor) {
        case Flavor::Baseline: build_backward_baseline(g, blocks, policy); break;
        case Flavor::ParaRev: build_backward_pararev(g, blocks, policy); break;
        case Flavor::ParaRevFused: build_backward_fused(g, blocks, policy); break;
    }
    return g;
}

double simulate_makespan(const TaskGraph& g, int workers) {
    if (workers < 1) throw std::invalid_argument("simulate_makespan: workers must be >= 1");
    std::vector<int> indeg(g.size());
    for (int i = 0; i < g.size(); ++i) indeg[i] = static_cast<int>(g.preds(i).size());
    std::priority_queue<int, std::vector<int>, std::greater<int>> ready;
    for (int i = 0; i < g.size(); ++i)
        if (indeg[i] == 0) ready.push(i);
    // (finish time, node id) of running tasks.
    std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>,
                        std::greater<std::pair<double, int>>>
        running;
    double now = 0.0;
    int done = 0;
    int idle = workers;
    while (done < g.size()) {
        while (idle > 0 && !ready.empty()) {
            const int u = ready.top();
            ready.pop();
            running.push({now + g.node(u).cost, u});
            --idle;
        }
        if (running.empty()) throw std::runtime_error("simulate_makespan: deadlock (cycle?)");
        const auto [t, u] = running.top();
        running.pop();
        now = t;
        ++idle;
        ++done;
        for (int v : g.succs(u))
            if (--indeg[v] == 0) ready.push(v);
    }
    return now;
}

std::string graph_to_text(const TaskGraph& g, const std::string& title) {
    std::ostringstream os;
    os << "digraph " << (title.empty() ? "g" : title) << " {\n";
    for (int i = 0; i < g.size(); ++i) {
        const TaskNode& n = g.node(i);
        os << "  " << n.name << " [kind=" << node_kind_name(n.kind) << " index=" << n.index
           << " cost=" << n.cost << "];\n";
    }
    for (int i = 0; i < g.size(); ++i)
        for (int s : g.succs(i)) os << "  " << g.node(i).name << " -> " << g.node(s).name << ";\n";
    os << "}\n";
    return os.str();
}

TaskGraph graph_from_text(const std::string& text) {
    TaskGraph g;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        // strip whitespace and the trailing ';'
        auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t;");
        line = line.substr(first, last - first + 1);
        if (line.empty() || line[0] == '}' || line.rfind("digraph", 0) == 0) continue;
        const auto arrow = line.find("->");
        if (arrow != std::string::npos) {
            std::string a = line.substr(0, arrow);
            std::string b = line.substr(arrow + 2);
            a.erase(a.find_last_not_of(" \t") + 1);
            b.erase(0, b.find_first_not_of(" \t"));
            const int ia = g.find(a), ib = g.find(b);
            if (ia < 0 || ib < 0) throw std::invalid_argument("graph_from_text: edge names " + a +
                                                              " -> " + b + " not declared");
            g.add_edge(ia, ib);
            continue;
        }
        const auto br = line.find('[');
        if (br == std::string::npos)
            throw std::invalid_argument("graph_from_text: cannot parse line: " + line);
        std::string name = line.substr(0, br);
        name.erase(name.find_last_not_of(" \t") + 1);
        std::string attrs = line.substr(br + 1, line.find(']') - br - 1);
        std::istringstream as(attrs);
        std::string tok;
        NodeKind kind = NodeKind::Add;
        int index = 0;
        double cost = 1.0;
        while (as >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("graph_from_text: bad attribute " + tok);
            const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "kind") kind = node_kind_from_name(val);
            else if (key == "index") index = std::stoi(val);
            else if (key == "cost") cost = std::stod(val);
            else throw std::invalid_argument("graph_from_text: unknown attribute " + key);
        }
        g.add_node(name, kind, index, cost);
    }
    return g;
}

}  // namespace revsnn
